"""Split the label's inadmissible parents into two weakly dependent blocks.

The objective is the pairwise-CMI surrogate: the sum of I(a; b | Z) over every
cross pair.  Search is a seeded hill-climb over feasible bipartitions using
single-attribute moves, falling back to one-for-one swaps.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

import numpy as np

from .dataset import Dataset, strata
from .errors import DataError, PartitionError
from .stats import cmi_codes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartitionConfig:
    tau: int = 2
    epsilon: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.tau < 1:
            raise DataError("tau must be at least 1")
        if not 0.0 < self.epsilon < 1.0:
            raise DataError("epsilon must lie in (0, 1)")


@dataclass
class Partition:
    left: tuple[str, ...]
    right: tuple[str, ...]
    objective: float = 0.0
    tau: int = 1
    trace: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def attributes(self) -> tuple[str, ...]:
        return self.left + self.right

    def to_dict(self) -> dict:
        return {"left": list(self.left), "right": list(self.right),
                "objective": self.objective, "tau": self.tau}


def cmi_matrix(ds: Dataset, attrs: list[str], z: Iterable[str], workers: int = 1) -> np.ndarray:
    """Symmetric matrix of I(a_i; a_j | Z) with a zero diagonal."""
    sid, n_strata = strata(ds, list(z))
    m = len(attrs)
    pairs = list(combinations(range(m), 2))

    def entry(p):
        i, j = p
        a, b = attrs[i], attrs[j]
        return cmi_codes(ds.column(a), ds.size(a), ds.column(b), ds.size(b), sid, n_strata)

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(entry, pairs))
    else:
        values = [entry(p) for p in pairs]
    mat = np.zeros((m, m))
    for (i, j), v in zip(pairs, values):
        mat[i, j] = mat[j, i] = v
    return mat


def cross_objective(mat: np.ndarray, side: np.ndarray) -> float:
    """Sum of ``mat[i, j]`` over i on side 0 and j on side 1."""
    left = np.flatnonzero(side == 0)
    right = np.flatnonzero(side == 1)
    return float(mat[np.ix_(left, right)].sum())


def effective_tau(n_attrs: int, tau: int) -> int:
    return tau if n_attrs >= 2 * tau else max(1, n_attrs // 2)


def hill_climb(mat: np.ndarray, tau: int, epsilon: float, rng: np.random.Generator):
    """Minimize the cross objective; returns (side array, objective trace)."""
    m = mat.shape[0]
    side = rng.integers(0, 2, size=m)
    while True:
        sizes = (int(np.sum(side == 0)), int(np.sum(side == 1)))
        if min(sizes) >= tau:
            break
        big = 0 if sizes[0] > sizes[1] else 1
        v = rng.choice(np.flatnonzero(side == big))
        side[v] = 1 - big

    def feasible(s):
        k = int(np.sum(s))
        return k >= tau and m - k >= tau

    current = cross_objective(mat, side)
    start = current
    trace = [current]
    while True:
        best_delta, best = 0.0, None
        for v in range(m):
            cand = side.copy()
            cand[v] = 1 - cand[v]
            if feasible(cand):
                value = cross_objective(mat, cand)
                if current - value > best_delta:
                    best_delta, best = current - value, (cand, value)
        if best_delta == 0.0:
            for u in np.flatnonzero(side == 0):
                for v in np.flatnonzero(side == 1):
                    cand = side.copy()
                    cand[u], cand[v] = 1, 0
                    value = cross_objective(mat, cand)
                    if current - value > best_delta:
                        best_delta, best = current - value, (cand, value)
        if best_delta < epsilon * current or current <= epsilon * start:
            break
        side, current = best
        trace.append(current)
    return side, trace


def partition_ic(ds: Dataset, ic: Iterable[str], z: Iterable[str],
                 cfg: PartitionConfig = PartitionConfig(), workers: int = 1) -> Partition:
    """Bipartition ``ic`` with both blocks of at least ``tau`` attributes.

    When ``|ic| < 2 tau`` the floor is lowered to ``max(1, |ic| // 2)`` and a
    warning is recorded on the result.
    """
    attrs = ds.schema_order(ic)
    z = ds.schema_order(z)
    if len(attrs) < 2:
        raise PartitionError(f"cannot partition {len(attrs)} attribute(s); need at least 2")
    if set(attrs) & set(z):
        raise DataError("conditioning set overlaps the attributes to partition")
    warnings = []
    tau = effective_tau(len(attrs), cfg.tau)
    if tau != cfg.tau:
        msg = (f"tau={cfg.tau} needs at least {2 * cfg.tau} attributes to partition, "
               f"got {len(attrs)}; using tau={tau}")
        log.warning(msg)
        warnings.append(msg)
    mat = cmi_matrix(ds, attrs, z, workers)
    side, trace = hill_climb(mat, tau, cfg.epsilon, np.random.default_rng(cfg.seed))
    left = tuple(a for a, s in zip(attrs, side) if s == 0)
    right = tuple(a for a, s in zip(attrs, side) if s == 1)
    return Partition(left, right, cross_objective(mat, side), tau, trace, warnings)

