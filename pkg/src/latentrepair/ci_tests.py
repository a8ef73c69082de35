"""Pearson chi-square and stratified G-tests of (conditional) independence."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .dataset import Dataset, strata
from .errors import DataError, InsufficientDataError

DEFAULT_SIGNIFICANCE = 0.05
MIN_STRATUM_COUNT = 5

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x), valid for x < a + 1
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_cf(a, x))


def chi2_sf(statistic: float, dof: int) -> float:
    """P(chi2_dof >= statistic); a zero-dof test is vacuous and returns 1."""
    if dof <= 0:
        return 1.0
    if statistic <= 0:
        return 1.0
    return gammaincc(0.5 * dof, 0.5 * statistic)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int
    p_value: float
    independent: bool

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "dof": self.dof,
                "p_value": self.p_value, "independent": self.independent}


TestResult.__test__ = False  # keep pytest from collecting the dataclass


def _check_significance(significance: float) -> None:
    if not 0.0 < significance < 1.0:
        raise DataError(f"significance must lie in (0, 1), got {significance}")


def pearson_table(table: np.ndarray) -> tuple[float, int]:
    """Pearson statistic and dof over rows/columns with nonzero marginals."""
    t = np.asarray(table, dtype=np.float64)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    r, c = t.shape
    dof = (r - 1) * (c - 1)
    if dof <= 0:
        return 0.0, 0
    n = t.sum()
    expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / n
    return float(np.sum((t - expected) ** 2 / expected)), int(dof)


def chi_square_test(ds: Dataset, x: str, y: str,
                    significance: float = DEFAULT_SIGNIFICANCE) -> TestResult:
    if x == y:
        raise DataError("chi-square test needs two different attributes")
    if ds.n_records < 1:
        raise DataError("empty dataset")
    _check_significance(significance)
    kx, ky = ds.size(x), ds.size(y)
    cell = ds.column(x).astype(np.int64) * ky + ds.column(y)
    table = np.bincount(cell, minlength=kx * ky).reshape(kx, ky)
    stat, dof = pearson_table(table)
    p = chi2_sf(stat, dof)
    return TestResult(stat, dof, p, p > significance)


def g_test_codes(x: np.ndarray, kx: int, y: np.ndarray, ky: int, z: np.ndarray, n_strata: int,
                 significance: float = DEFAULT_SIGNIFICANCE,
                 min_stratum_count: int = MIN_STRATUM_COUNT) -> TestResult:
    """Pooled G-test over strata given as a stratum id per record."""
    n_s, g_half, rows, cols = kernels.stratum_terms(
        np.asarray(z, dtype=np.int64), int(n_strata),
        np.asarray(x, dtype=np.int64), int(kx), np.asarray(y, dtype=np.int64), int(ky))
    keep = n_s >= max(min_stratum_count, 1)
    if not keep.any():
        raise InsufficientDataError("every conditioning stratum has fewer than "
                                    f"{min_stratum_count} records")
    stat = max(2.0 * float(np.sum(g_half[keep])), 0.0)
    dof = int(np.sum((rows[keep] - 1) * (cols[keep] - 1)))
    p = chi2_sf(stat, dof)
    return TestResult(stat, dof, p, p > significance)


def g_test_conditional(ds: Dataset, x: str, y: str, z: Iterable[str],
                       significance: float = DEFAULT_SIGNIFICANCE,
                       min_stratum_count: int = MIN_STRATUM_COUNT) -> TestResult:
    """G-test of X _||_ Y | Z pooled over the realized strata of Z.

    Strata with fewer than ``min_stratum_count`` records are skipped; if all
    are skipped an :class:`InsufficientDataError` is raised.
    """
    z = list(z)
    if x == y:
        raise DataError("G-test needs two different attributes")
    if not z:
        raise DataError("G-test needs a nonempty conditioning set")
    if x in z or y in z:
        raise DataError("conditioning set contains x or y")
    if ds.n_records < 1:
        raise DataError("empty dataset")
    _check_significance(significance)
    sid, n_strata = strata(ds, z)
    return g_test_codes(ds.column(x), ds.size(x), ds.column(y), ds.size(y), sid, n_strata,
                        significance, min_stratum_count)
