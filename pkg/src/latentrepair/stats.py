"""Plug-in information measures over encoded columns (all in bits)."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .dataset import Dataset, strata
from .errors import DataError

LN2 = math.log(2.0)


def _require_records(ds: Dataset) -> None:
    if ds.n_records < 1:
        raise DataError("empty dataset")


def entropy_codes(codes: np.ndarray) -> float:
    counts = np.bincount(np.asarray(codes, dtype=np.int64))
    counts = counts[counts > 0].astype(np.float64)
    n = counts.sum()
    if n == 0:
        raise DataError("empty dataset")
    # sum p log p computed as (n log n - sum c log c) / n to avoid 0 log 0
    h = (n * math.log(n) - float(np.sum(counts * np.log(counts)))) / n
    return max(h, 0.0) / LN2


def entropy(ds: Dataset, attr: str) -> float:
    _require_records(ds)
    return entropy_codes(ds.column(attr))


def cmi_codes(x: np.ndarray, kx: int, y: np.ndarray, ky: int,
              z: np.ndarray | None = None, n_strata: int = 1) -> float:
    """I(X;Y|Z) from code vectors, ``z`` being a stratum id per record."""
    n = len(x)
    if n == 0:
        raise DataError("empty dataset")
    if z is None:
        z = np.zeros(n, dtype=np.int64)
        n_strata = 1
    _, g_half, _, _ = kernels.stratum_terms(
        np.asarray(z, dtype=np.int64), int(n_strata),
        np.asarray(x, dtype=np.int64), int(kx), np.asarray(y, dtype=np.int64), int(ky))
    return max(float(np.sum(g_half)) / n / LN2, 0.0)


def _check_disjoint(x: str, y: str, z: Iterable[str]) -> list[str]:
    z = list(z)
    if x == y:
        raise DataError(f"overlapping arguments: x and y are both {x!r}")
    if x in z or y in z:
        raise DataError("overlapping arguments: conditioning set contains x or y")
    return z


def cond_mutual_info(ds: Dataset, x: str, y: str, z: Iterable[str] = ()) -> float:
    """Plug-in I(X;Y|Z) = sum_z P(z) I(X;Y|Z=z), in bits, clamped at zero."""
    _require_records(ds)
    z = _check_disjoint(x, y, z)
    sid, n_strata = strata(ds, z)
    return cmi_codes(ds.column(x), ds.size(x), ds.column(y), ds.size(y), sid, n_strata)


def mutual_info(ds: Dataset, x: str, y: str) -> float:
    return cond_mutual_info(ds, x, y, ())


def conditional_entropy(ds: Dataset, x: str, given: Sequence[str]) -> float:
    """H(X | given) = H(X, given) - H(given)."""
    _require_records(ds)
    if not given:
        return entropy(ds, x)
    sid, _ = strata(ds, list(given))
    zc = np.unique(sid, return_inverse=True)[1].reshape(-1)
    joint = zc * ds.size(x) + ds.column(x)
    return max(entropy_codes(joint) - entropy_codes(zc), 0.0)


def pairwise_cmi_objective(ds: Dataset, left: Iterable[str], right: Iterable[str],
                           z: Iterable[str] = ()) -> float:
    """Sum of I(X;Y|Z) over X in ``left`` and Y in ``right``."""
    left, right, z = list(left), list(right), list(z)
    if not left or not right:
        raise DataError("left and right must be nonempty")
    if set(left) & set(right) or (set(left) | set(right)) & set(z):
        raise DataError("overlapping arguments among left, right, z")
    _require_records(ds)
    sid, n_strata = strata(ds, z)
    total = 0.0
    for a in left:
        for b in right:
            total += cmi_codes(ds.column(a), ds.size(a), ds.column(b), ds.size(b), sid, n_strata)
    return total


def nmi_codes(a: np.ndarray, b: np.ndarray) -> float:
    """I(A;B) / sqrt(H(A) H(B)); zero when either side is constant."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if len(a) == 0:
        raise DataError("empty dataset")
    ha, hb = entropy_codes(a), entropy_codes(b)
    if ha <= 0.0 or hb <= 0.0:
        return 0.0
    mi = cmi_codes(a, int(a.max()) + 1, b, int(b.max()) + 1)
    return float(min(max(mi / math.sqrt(ha * hb), 0.0), 1.0))


def nmi(ds: Dataset, x: str, y: str) -> float:
    _require_records(ds)
    return nmi_codes(ds.column(x), ds.column(y))
