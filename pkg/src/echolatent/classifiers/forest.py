"""Random forest of Gini decision trees for binary labels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..rng import generator


@dataclass
class Tree:
    # node arrays; feature == -1 marks a leaf
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # fraction of label 1 among the node's samples
    n_samples: np.ndarray
    impurity: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth[self.feature == -1].max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.value[self.apply(X)] > 0.5).astype(int)

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "n_samples", "impurity", "depth")}

    @classmethod
    def from_json(cls, d: dict) -> "Tree":
        ints = {"feature", "left", "right", "n_samples", "depth"}
        return cls(**{k: np.asarray(v, dtype=int if k in ints else float) for k, v in d.items()})


def gini(pos: float, n: float) -> float:
    if n == 0:
        return 0.0
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def best_split(x: np.ndarray, y: np.ndarray) -> tuple[float, float] | None:
    """Threshold minimizing the weighted child Gini for one feature.

    Returns (weighted impurity, threshold) or None when x is constant.  The
    threshold is the midpoint between neighbouring distinct values; ties go to
    the smallest threshold.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.size
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    n_left = np.arange(1, n, dtype=np.float64)
    pos_left = np.cumsum(ys)[:-1].astype(np.float64)
    pos_total = float(ys.sum())
    n_right = n - n_left
    pos_right = pos_total - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    g_l = 2.0 * p_l * (1.0 - p_l)
    g_r = 2.0 * p_r * (1.0 - p_r)
    weighted = (n_left * g_l + n_right * g_r) / n
    weighted = np.where(valid, weighted, np.inf)
    k = int(np.argmin(weighted))
    return float(weighted[k]), float(0.5 * (xs[k] + xs[k + 1]))


def grow_tree(X: np.ndarray, y: np.ndarray, max_depth: int = 11, max_features: int | None = None,
              rng: np.random.Generator | None = None, min_samples_split: int = 2) -> Tree:
    """Greedy depth-first growth; a node at depth d splits only if d < max_depth."""
    n, p = X.shape
    m = p if max_features is None else min(max_features, p)
    rng = rng if rng is not None else np.random.default_rng(0)
    nodes: list[list] = []

    def new_node(idx, depth):
        pos = float(y[idx].sum())
        nodes.append([-1, 0.0, -1, -1, pos / idx.size, idx.size, gini(pos, idx.size), depth])
        return len(nodes) - 1

    root = new_node(np.arange(n), 0)
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        depth = nodes[node][7]
        pos = y[idx].sum()
        if depth >= max_depth or idx.size < min_samples_split or pos == 0 or pos == idx.size:
            continue
        cands = rng.choice(p, size=m, replace=False) if m < p else np.arange(p)
        best = None
        for f in cands:
            res = best_split(X[idx, f], y[idx])
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        left = new_node(li, depth + 1)
        right = new_node(ri, depth + 1)
        nodes[node][0:4] = [f, thr, left, right]
        # right pushed first so the left subtree is numbered first
        stack.append((right, ri))
        stack.append((left, li))

    cols = list(zip(*nodes))
    return Tree(
        feature=np.array(cols[0], dtype=int),
        threshold=np.array(cols[1], dtype=float),
        left=np.array(cols[2], dtype=int),
        right=np.array(cols[3], dtype=int),
        value=np.array(cols[4], dtype=float),
        n_samples=np.array(cols[5], dtype=int),
        impurity=np.array(cols[6], dtype=float),
        depth=np.array(cols[7], dtype=int),
    )


@dataclass
class RfModel:
    trees: list[Tree]
    max_depth: int
    max_features: int
    seed: int
    bootstrap_indices: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def rf_train(X, y, n_trees: int = 100, max_depth: int = 11, seed: int = 0,
             max_features: int | None = None) -> RfModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int).ravel()
    n, p = X.shape
    if n < 2:
        raise ValueError("rf_train needs at least 2 samples")
    m = max_features if max_features is not None else math.ceil(math.sqrt(p))
    trees, boots = [], []
    for t in range(n_trees):
        rng = generator(seed, "tree", t)
        boot = rng.integers(0, n, n)
        trees.append(grow_tree(X[boot], y[boot], max_depth, m, rng))
        boots.append(boot)
    return RfModel(trees, max_depth, m, seed, boots)


def rf_predict(model: RfModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Majority-vote labels (ties go to 0) and the fraction of trees voting 1."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    votes = np.zeros(X.shape[0], dtype=int)
    for tree in model.trees:
        votes += tree.predict(X)
    frac = votes / model.n_trees
    return (votes * 2 > model.n_trees).astype(int), frac
