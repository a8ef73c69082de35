"""End-to-end repair: identify, partition, estimate, resample, drop the latent column."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import stage_int, stage_rng
from .dataset import CategoricalDomain, Dataset, RoleSpec, lookup_rows
from .errors import DataError, TauBoundError
from .identify import IdentifyConfig, IdentifyResult, run_identification
from .kernels import BACKEND
from .latent_em import (DEFAULT_ETA, DEFAULT_N_ITER, DEFAULT_SMOOTHING, PolicyParams, estimate,
                        validate_tau)
from .partition import Partition, PartitionConfig, partition_ic

log = logging.getLogger(__name__)

LATENT_COLUMN = "L"
REPORT_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    identify: IdentifyConfig = field(default_factory=IdentifyConfig)
    tau: int = 2
    epsilon: float = 1e-5
    n_iter: int = DEFAULT_N_ITER
    eta: float = DEFAULT_ETA
    smoothing: float = DEFAULT_SMOOTHING
    seed: int = 0
    output_path: str | None = None
    restarts: int = 1
    strict_tau: bool = False
    keep_latent: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.tau < 1:
            raise TauBoundError(f"tau must be at least 1, got {self.tau}")
        if not 0.0 < self.epsilon < 1.0:
            raise DataError("epsilon must lie in (0, 1)")
        if self.n_iter < 1:
            raise DataError("n_iter must be at least 1")
        if not self.eta > 0:
            raise DataError("eta must be positive")
        if self.smoothing < 0:
            raise DataError("smoothing must be non-negative")
        if self.restarts < 1:
            raise DataError("restarts must be at least 1")
        if self.workers < 1:
            raise DataError("workers must be at least 1")


@dataclass
class PipelineResult:
    data: Dataset
    params: PolicyParams
    identification: IdentifyResult
    partition: Partition
    report: dict
    timings: dict[str, float] = field(default_factory=dict)


def choose_partition(ds: Dataset, roles: RoleSpec, ic: list[str], cfg: PipelineConfig):
    """Partition I_c and settle the latent-state count; returns (partition, tau, warnings)."""
    warnings: list[str] = []
    if len(ic) < 2:
        if cfg.tau != 1:
            msg = f"|I_c| = {len(ic)} leaves no room for a latent variable; using tau=1"
            log.warning(msg)
            warnings.append(msg)
        return Partition(tuple(ic), (), 0.0, 1), 1, warnings
    io = [a for a in roles.inadmissible if a not in ic]
    z = ds.schema_order(list(roles.sensitive) + io + list(roles.admissible))
    pcfg = PartitionConfig(cfg.tau, cfg.epsilon, stage_int(cfg.seed, "partition"))
    part = partition_ic(ds, ic, z, pcfg, cfg.workers)
    warnings.extend(part.warnings)
    if validate_tau(cfg.tau, part):
        return part, cfg.tau, warnings
    bound = min(len(part.left), len(part.right))
    if cfg.strict_tau:
        raise TauBoundError(f"tau={cfg.tau} violates the identifiability bound: need tau == 1 or "
                            f"2 <= tau <= min(|I_c1|, |I_c2|) = {bound} "
                            f"(|I_c| = {len(ic)})")
    tau = part.tau if validate_tau(part.tau, part) else 1
    return part, tau, warnings


def _draw_categorical(p: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(p)
    return np.minimum(np.searchsorted(cum, rng.random(n) * cum[-1], side="right"), len(p) - 1)


def sample_policy(ds: Dataset, roles: RoleSpec, params: PolicyParams, k: int, seed: int,
                  keep_latent: bool = False) -> tuple[Dataset, dict[str, int]]:
    """Draw ``k`` records from the fitted policy in ancestral order.

    The untouched block is bootstrapped as whole rows of ``ds``; L comes from
    theta_l; the two I_c blocks and then Y come from their conditionals.
    Returns the new dataset and the number of backoff draws per factor.
    """
    if ds.n_records == 0:
        raise DataError("cannot resample an empty dataset")
    if keep_latent and LATENT_COLUMN in ds:
        raise DataError(f"column {LATENT_COLUMN!r} already exists; cannot keep the latent column")
    rows = stage_rng(seed, "sample/x-block").integers(0, ds.n_records, size=k)
    out = {name: ds.column(name)[rows].astype(np.int64) for name in params.x_block}
    latent = _draw_categorical(params.theta_l, k, stage_rng(seed, "sample/latent"))
    fallbacks = {}
    for tag, cpt in (("c1", params.cpt_c1), ("c2", params.cpt_c2), ("y", params.cpt_y)):
        parent_mat = (np.stack([out[a] for a in cpt.parent_attrs], axis=1) if cpt.parent_attrs
                      else np.zeros((k, 0), dtype=np.int64))
        pid = lookup_rows(cpt.parent_configs, parent_mat, cpt.parent_sizes)
        fallbacks[tag] = int(np.sum(pid < 0))
        cid = cpt.sample(latent, pid, stage_rng(seed, f"sample/{tag}"))
        for j, a in enumerate(cpt.child_attrs):
            out[a] = cpt.child_configs[cid, j].astype(np.int64)
    missing = [a for a in ds.names if a not in out]
    if missing:
        raise AssertionError(f"sampler left columns unfilled: {missing}")
    domains = list(ds.domains)
    columns = [out[a] for a in ds.names]
    if keep_latent:
        domains.append(CategoricalDomain(LATENT_COLUMN, tuple(str(i) for i in range(params.tau))))
        columns.append(latent)
    total = sum(fallbacks.values())
    if total:
        log.warning("%d sampled parent configuration(s) were unseen in fitting; used latent-only backoff",
                    total)
    return Dataset(domains, columns, n_records=k), fallbacks


def run_preprocess(ds: Dataset, roles: RoleSpec, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    roles = roles.validate(ds)
    timings = {}

    t0 = time.perf_counter()
    ident = run_identification(ds, roles, cfg.identify, cfg.workers)
    timings["identify"] = time.perf_counter() - t0
    log.info("identify: I_c = %s", ident.ic)

    t0 = time.perf_counter()
    part, tau, warnings = choose_partition(ds, roles, ident.ic, cfg)
    timings["partition"] = time.perf_counter() - t0
    log.info("partition: %s | %s (tau=%d)", list(part.left), list(part.right), tau)

    t0 = time.perf_counter()
    params = estimate(ds, part, roles, tau, cfg.n_iter, cfg.eta, stage_int(cfg.seed, "estimate"),
                      cfg.smoothing, cfg.restarts)
    timings["estimate"] = time.perf_counter() - t0
    log.info("estimate: %d iterations, loglik %.6f", params.iterations_run, params.final_loglik)

    t0 = time.perf_counter()
    out, fallbacks = sample_policy(ds, roles, params, ds.n_records, cfg.seed, cfg.keep_latent)
    timings["sample"] = time.perf_counter() - t0

    expected = list(ds.names) + ([LATENT_COLUMN] if cfg.keep_latent else [])
    if list(out.names) != expected or out.n_records != ds.n_records:
        raise AssertionError("output schema differs from input")
    for stage, secs in timings.items():
        log.info("timing %s: %.3fs", stage, secs)

    report = {
        "version": REPORT_VERSION,
        "n_records": ds.n_records,
        "seed": cfg.seed,
        "backend": BACKEND,
        "identify": ident.to_dict(),
        "partition": part.to_dict(),
        "tau_requested": cfg.tau,
        "tau": tau,
        "warnings": warnings,
        "iterations_run": params.iterations_run,
        "final_loglik": params.final_loglik,
        "fallback_counts": fallbacks,
        "x_block": list(params.x_block),
        "keep_latent": cfg.keep_latent,
    }
    return PipelineResult(out, params, ident, part, report, timings)


def preprocess(ds: Dataset, roles: RoleSpec, cfg: PipelineConfig = PipelineConfig()) -> Dataset:
    """Repaired dataset D' with the input schema and record count."""
    return run_preprocess(ds, roles, cfg).data
