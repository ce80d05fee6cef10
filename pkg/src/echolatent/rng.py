"""Seed derivation.

A child seed is a pure function of the parent seed and a key path, so each
case, fold or op instance owns its own stream no matter the evaluation order.
Keys may be ints or strings; strings are mapped through CRC-32.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError(f"seed keys must be nonnegative, got {k}")
    return k


def derive_seed(seed: int, *keys) -> int:
    """64-bit child seed of ``seed`` along ``keys``."""
    ss = np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def generator(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)]))
