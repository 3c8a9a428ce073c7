"""Deterministic seed derivation from a master seed and a path of labels."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    return zlib.crc32(str(part).encode()) + (1 << 32)


def derive_seed(master, *path) -> int:
    """64-bit seed unique to (master, path); stable across runs and platforms."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def derive_rng(master, *path) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))
