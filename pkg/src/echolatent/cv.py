"""Stratified k-fold splitting."""
from __future__ import annotations

import numpy as np

from .rng import generator


def kfold_split(labels, k: int = 4, seed: int = 0) -> list[np.ndarray]:
    """Split indices into ``k`` disjoint stratified folds.

    Members of each class are shuffled and dealt round-robin; the dealing
    position carries over from one class to the next so fold sizes stay
    within one case of each other.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < k:
        small = classes[np.argmin(counts)]
        raise ValueError(f"class {small!r} has {counts.min()} members, fewer than k={k}")
    rng = generator(seed, "kfold")
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        for m in members:
            folds[pos % k].append(int(m))
            pos += 1
    return [np.sort(np.array(f, dtype=int)) for f in folds]
