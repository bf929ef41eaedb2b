"""Reproducible, splittable random streams.

Every stream is a Philox4x64 counter-based generator keyed by a
``SeedSequence(global_seed, spawn_key=path)``. A stream for one augmentation
sample is ``stream(seed, "aug", epoch, sample_index)``; its output never
depends on which worker draws it or in what order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key parts must be non-negative, got {part}")
        return int(part)
    # stable across processes, unlike hash()
    return zlib.crc32(str(part).encode("utf-8")) | (1 << 32)


def stream(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
