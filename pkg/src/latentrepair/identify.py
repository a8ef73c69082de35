"""Find the inadmissible attributes that are direct parents of the label."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

from .ci_tests import MIN_STRATUM_COUNT, chi_square_test, g_test_codes
from .dataset import Dataset, RoleSpec, strata
from .errors import DataError, InsufficientDataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdentifyConfig:
    alpha: int = 2
    significance: float = 0.05
    min_stratum_count: int = MIN_STRATUM_COUNT

    def __post_init__(self):
        if self.alpha < 0:
            raise DataError("alpha must be non-negative")
        if not 0.0 < self.significance < 1.0:
            raise DataError("significance must lie in (0, 1)")


@dataclass
class IdentifyResult:
    ic: list[str]
    tests_run: dict[str, int] = field(default_factory=dict)
    removed_at: dict[str, tuple[int, tuple[str, ...]]] = field(default_factory=dict)
    insufficient: int = 0

    def to_dict(self) -> dict:
        return {
            "ic": list(self.ic),
            "tests_run": dict(self.tests_run),
            "removed_at": {k: {"m": m, "z": list(z)} for k, (m, z) in self.removed_at.items()},
            "insufficient_strata_tests": self.insufficient,
        }


def max_tests(n_attributes: int, alpha: int) -> int:
    """Upper bound on tests per attribute: sum_{m<=alpha} C(d-2, m)."""
    return sum(comb(n_attributes - 2, m) for m in range(alpha + 1))


def _test_attribute(ds: Dataset, x: str, y: str, m: int, cfg: IdentifyConfig):
    """Run level ``m`` of the search for ``x``; returns (removed, z, n_tests, n_insufficient)."""
    if m == 0:
        res = chi_square_test(ds, x, y, cfg.significance)
        return res.independent, (), 1, 0
    others = [v for v in ds.names if v != x and v != y]
    xc, kx = ds.column(x), ds.size(x)
    yc, ky = ds.column(y), ds.size(y)
    n_tests = n_insufficient = 0
    for z in combinations(others, m):
        n_tests += 1
        sid, n_strata = strata(ds, z)
        try:
            res = g_test_codes(xc, kx, yc, ky, sid, n_strata, cfg.significance, cfg.min_stratum_count)
        except InsufficientDataError:
            # too sparse to judge: keep the dependence
            n_insufficient += 1
            continue
        if res.independent:
            return True, tuple(z), n_tests, n_insufficient
    return False, (), n_tests, n_insufficient


def run_identification(ds: Dataset, roles: RoleSpec, cfg: IdentifyConfig = IdentifyConfig(),
                       workers: int = 1) -> IdentifyResult:
    """Prune the inadmissible set to the label's direct parents.

    Level ``m = 0`` drops attributes marginally independent of the label
    (chi-square); levels ``1..alpha`` drop an attribute at the first
    size-``m`` conditioning set, taken from all other attributes in schema
    order, under which the pooled G-test accepts independence.
    """
    y = roles.label
    if y not in ds:
        raise DataError(f"label {y!r} not in dataset")
    ic = ds.schema_order(roles.inadmissible)
    result = IdentifyResult(ic=[], tests_run={a: 0 for a in ic})
    for m in range(cfg.alpha + 1):
        if not ic:
            break
        if workers > 1 and len(ic) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(lambda a: _test_attribute(ds, a, y, m, cfg), ic))
        else:
            outcomes = [_test_attribute(ds, a, y, m, cfg) for a in ic]
        survivors = []
        for a, (removed, z, n_tests, n_insuf) in zip(ic, outcomes):
            result.tests_run[a] += n_tests
            result.insufficient += n_insuf
            if removed:
                result.removed_at[a] = (m, z)
                log.debug("identify: %s _||_ %s | %s -> removed", a, y, list(z))
            else:
                survivors.append(a)
        ic = survivors
    result.ic = ic
    return result


def identify_ic(ds: Dataset, roles: RoleSpec, cfg: IdentifyConfig = IdentifyConfig(),
                workers: int = 1) -> list[str]:
    """Inadmissible direct parents of the label, in schema order."""
    return run_identification(ds, roles, cfg, workers).ic
