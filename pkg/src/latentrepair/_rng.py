"""Seed fan-out: one user seed, independent streams per named stage."""
from __future__ import annotations

import zlib

import numpy as np


def stage_seed(seed: int, label: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8"))])


def stage_rng(seed: int, label: str) -> np.random.Generator:
    """Generator for ``label`` derived from ``seed``; stable across runs and platforms."""
    return np.random.default_rng(stage_seed(seed, label))


def stage_int(seed: int, label: str) -> int:
    """A 63-bit integer seed for stages whose APIs take plain ints."""
    return int(stage_seed(seed, label).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
