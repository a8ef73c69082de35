"""EM for the latent-augmented factorization.

The fitted model is

    P(l, i_c1, i_c2, y | rest) = theta_l[l] * P(i_c1 | l, pi) * P(i_c2 | l, pi) * P(y | l, pi_y)

with ``pi`` the joint value of S, I_o and A and ``pi_y`` that of A and W.
Child blocks are stored sparsely: only (parent, child) configurations that
occur in the fitting data get an explicit cell, everything else under a
realized parent shares the smoothing-only ``rest`` mass.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._rng import stage_rng
from .dataset import Dataset, RoleSpec, factorize_rows, lookup_rows
from .errors import DataError, TauBoundError
from .partition import Partition

log = logging.getLogger(__name__)

FORMAT_TAG = "latentrepair.policy"
FORMAT_VERSION = 1

DEFAULT_N_ITER = 800
DEFAULT_ETA = 1e-3
DEFAULT_SMOOTHING = 1e-6


def validate_tau(tau: int, part: Partition) -> bool:
    """True for tau == 1, or 2 <= tau <= the smaller block's attribute count."""
    if tau == 1:
        return True
    return 2 <= tau <= min(len(part.left), len(part.right))


class _Block:
    """Index of one child block against its parents on the fitting data."""

    def __init__(self, ds: Dataset, child_attrs, parent_attrs):
        self.child_attrs = tuple(child_attrs)
        self.parent_attrs = tuple(parent_attrs)
        self.child_sizes = tuple(ds.sizes(self.child_attrs))
        self.parent_sizes = tuple(ds.sizes(self.parent_attrs))
        self.child_ids, self.child_configs = factorize_rows(ds.matrix(self.child_attrs), self.child_sizes)
        self.parent_ids, self.parent_configs = factorize_rows(ds.matrix(self.parent_attrs), self.parent_sizes)
        k = len(self.child_configs)
        keys = self.parent_ids * k + self.child_ids
        pair_keys, pair_ids = np.unique(keys, return_inverse=True)
        self.pair_ids = pair_ids.reshape(-1).astype(np.int64)
        self.pair_parent = (pair_keys // k).astype(np.int64)
        self.pair_child = (pair_keys % k).astype(np.int64)

    @property
    def n_child(self) -> int:
        return len(self.child_configs)

    @property
    def n_parent(self) -> int:
        return len(self.parent_configs)


@dataclass
class SparseCpt:
    """P(child block | latent state, parents) over realized configurations.

    ``prob[l, e]`` is the probability of entry ``e`` = (pair_parent[e],
    pair_child[e]) under state ``l``.  A realized child configuration not
    listed for a realized parent gets ``rest[l, parent]``.  ``backoff[l, c]``
    is P(child | l) aggregated over parents, used when the parent
    configuration was never seen; ``backoff_rest[l]`` covers children unseen
    altogether.
    """

    child_attrs: tuple[str, ...]
    parent_attrs: tuple[str, ...]
    child_sizes: tuple[int, ...]
    parent_sizes: tuple[int, ...]
    child_configs: np.ndarray
    parent_configs: np.ndarray
    pair_parent: np.ndarray
    pair_child: np.ndarray
    prob: np.ndarray
    rest: np.ndarray
    backoff: np.ndarray
    backoff_rest: np.ndarray
    smoothing: float = DEFAULT_SMOOTHING
    pair_start: np.ndarray = field(init=False, repr=False)
    pair_end: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        groups = np.arange(self.n_parent)
        self.pair_start = np.searchsorted(self.pair_parent, groups, side="left").astype(np.int64)
        self.pair_end = np.searchsorted(self.pair_parent, groups, side="right").astype(np.int64)

    @property
    def tau(self) -> int:
        return self.prob.shape[0]

    @property
    def n_child(self) -> int:
        return len(self.child_configs)

    @property
    def n_parent(self) -> int:
        return len(self.parent_configs)

    @property
    def n_entries(self) -> int:
        return len(self.pair_parent)

    def distribution(self, state: int, parent: int) -> np.ndarray:
        """Dense distribution over the realized child configurations."""
        out = np.full(self.n_child, self.rest[state, parent])
        a, b = self.pair_start[parent], self.pair_end[parent]
        out[self.pair_child[a:b]] = self.prob[state, a:b]
        return out

    def normalization_error(self) -> float:
        """Largest |sum - 1| over every stored conditional and the backoffs."""
        free = self.n_child - (self.pair_end - self.pair_start)
        worst = 0.0
        for l in range(self.tau):
            sums = np.bincount(self.pair_parent, weights=self.prob[l], minlength=self.n_parent)
            sums = sums + self.rest[l] * free
            worst = max(worst, float(np.max(np.abs(sums - 1.0))),
                        abs(float(self.backoff[l].sum()) - 1.0))
        return worst

    def locate(self, ds: Dataset):
        """(parent id, child id, entry id) per record of ``ds``; -1 where unseen."""
        pid = lookup_rows(self.parent_configs, ds.matrix(self.parent_attrs), self.parent_sizes)
        cid = lookup_rows(self.child_configs, ds.matrix(self.child_attrs), self.child_sizes)
        key = self.pair_parent * self.n_child + self.pair_child
        want = pid * self.n_child + cid
        eid = np.full(len(pid), -1, dtype=np.int64)
        ok = (pid >= 0) & (cid >= 0)
        if ok.any() and len(key):
            pos = np.minimum(np.searchsorted(key, want[ok]), len(key) - 1)
            eid[ok] = np.where(key[pos] == want[ok], pos, -1)
        return pid, cid, eid

    def record_probs(self, ds: Dataset) -> tuple[np.ndarray, int]:
        """``(tau, n)`` probability of each record's child value, and the backoff count."""
        pid, cid, eid = self.locate(ds)
        out = np.empty((self.tau, len(pid)))
        listed = eid >= 0
        known_parent = (pid >= 0) & ~listed
        unknown = pid < 0
        seen_child = unknown & (cid >= 0)
        unseen_child = unknown & (cid < 0)
        for l in range(self.tau):
            out[l, listed] = self.prob[l, eid[listed]]
            out[l, known_parent] = self.rest[l, pid[known_parent]]
            out[l, seen_child] = self.backoff[l, cid[seen_child]]
            out[l, unseen_child] = self.backoff_rest[l]
        return out, int(unknown.sum())

    def sample(self, states: np.ndarray, parent_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Child configuration id per record; parent id -1 uses the backoff."""
        n = len(states)
        u1 = rng.random(n)
        u2 = rng.random(n)
        states = np.asarray(states, dtype=np.int64)
        parent_ids = np.asarray(parent_ids, dtype=np.int64)
        out = np.empty(n, dtype=np.int64)
        seen = parent_ids >= 0
        if seen.any():
            # realized entries carry their excess over rest; rest * n_child is spread uniformly
            excess = np.maximum(self.prob - self.rest[:, self.pair_parent], 0.0)
            out[seen] = kernels.sample_grouped(
                states[seen], parent_ids[seen], self.pair_start, self.pair_end, self.pair_child,
                np.ascontiguousarray(excess), self.n_child, u1[seen], u2[seen])
        if (~seen).any():
            m = int((~seen).sum())
            out[~seen] = kernels.sample_grouped(
                states[~seen], np.zeros(m, dtype=np.int64), np.zeros(1, dtype=np.int64),
                np.array([self.n_child], dtype=np.int64), np.arange(self.n_child, dtype=np.int64),
                np.ascontiguousarray(self.backoff), self.n_child, u1[~seen], u2[~seen])
        return out

    def permuted(self, perm) -> SparseCpt:
        """Same table with latent state ``perm[l]`` moved to position ``l``."""
        perm = np.asarray(perm)
        return SparseCpt(self.child_attrs, self.parent_attrs, self.child_sizes, self.parent_sizes,
                         self.child_configs, self.parent_configs, self.pair_parent, self.pair_child,
                         self.prob[perm], self.rest[perm], self.backoff[perm], self.backoff_rest[perm],
                         self.smoothing)

    def to_dict(self) -> dict:
        entries = [[l, int(p), int(c), float(v)]
                   for l in range(self.tau)
                   for p, c, v in zip(self.pair_parent, self.pair_child, self.prob[l])]
        return {
            "child_attrs": list(self.child_attrs),
            "parent_attrs": list(self.parent_attrs),
            "child_sizes": list(self.child_sizes),
            "parent_sizes": list(self.parent_sizes),
            "child_configs": self.child_configs.tolist(),
            "parent_configs": self.parent_configs.tolist(),
            "entries": entries,
            "rest": self.rest.tolist(),
            "backoff": self.backoff.tolist(),
            "backoff_rest": self.backoff_rest.tolist(),
            "smoothing": self.smoothing,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> SparseCpt:
        rest = np.asarray(doc["rest"], dtype=np.float64)
        tau = rest.shape[0]
        entries = doc["entries"]
        m = len(entries) // tau if tau else 0
        arr = np.asarray(entries, dtype=np.float64).reshape(-1, 4) if entries else np.zeros((0, 4))
        pair_parent = arr[:m, 1].astype(np.int64)
        pair_child = arr[:m, 2].astype(np.int64)
        prob = np.zeros((tau, m))
        for l in range(tau):
            block = arr[l * m:(l + 1) * m]
            if not (np.all(block[:, 0] == l) and np.array_equal(block[:, 1], arr[:m, 1])
                    and np.array_equal(block[:, 2], arr[:m, 2])):
                raise DataError("malformed CPT entries")
            prob[l] = block[:, 3]
        n_child_attrs = len(doc["child_attrs"])
        n_parent_attrs = len(doc["parent_attrs"])
        child_configs = np.asarray(doc["child_configs"], dtype=np.int32).reshape(-1, n_child_attrs)
        parent_configs = np.asarray(doc["parent_configs"], dtype=np.int32).reshape(-1, n_parent_attrs)
        return cls(tuple(doc["child_attrs"]), tuple(doc["parent_attrs"]),
                   tuple(doc["child_sizes"]), tuple(doc["parent_sizes"]),
                   child_configs, parent_configs, pair_parent, pair_child, prob, rest,
                   np.asarray(doc["backoff"], dtype=np.float64),
                   np.asarray(doc["backoff_rest"], dtype=np.float64), float(doc["smoothing"]))


@dataclass
class PolicyParams:
    tau: int
    theta_l: np.ndarray
    cpt_c1: SparseCpt
    cpt_c2: SparseCpt
    cpt_y: SparseCpt
    partition: Partition
    x_block: tuple[str, ...]
    final_loglik: float = float("nan")
    iterations_run: int = 0
    loglik_trace: list[float] = field(default_factory=list)
    domains: dict[str, list[str]] = field(default_factory=dict)

    @property
    def cpts(self) -> tuple[SparseCpt, SparseCpt, SparseCpt]:
        return self.cpt_c1, self.cpt_c2, self.cpt_y

    def permuted(self, perm) -> PolicyParams:
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.tau)):
            raise DataError(f"{perm.tolist()} is not a permutation of {self.tau} states")
        return PolicyParams(self.tau, self.theta_l[perm], self.cpt_c1.permuted(perm),
                            self.cpt_c2.permuted(perm), self.cpt_y.permuted(perm), self.partition,
                            self.x_block, self.final_loglik, self.iterations_run,
                            list(self.loglik_trace), dict(self.domains))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "tau": self.tau,
            "theta_l": self.theta_l.tolist(),
            "partition": self.partition.to_dict(),
            "x_block": list(self.x_block),
            "final_loglik": self.final_loglik,
            "iterations_run": self.iterations_run,
            "loglik_trace": list(self.loglik_trace),
            "domains": {k: list(v) for k, v in self.domains.items()},
            "cpts": {"c1": self.cpt_c1.to_dict(), "c2": self.cpt_c2.to_dict(), "y": self.cpt_y.to_dict()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> PolicyParams:
        if doc.get("format") != FORMAT_TAG:
            raise DataError("not a policy parameter file")
        if doc.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported policy file version {doc.get('version')!r}")
        p = doc["partition"]
        part = Partition(tuple(p["left"]), tuple(p["right"]), float(p.get("objective", 0.0)),
                         int(p.get("tau", doc["tau"])))
        cp = doc["cpts"]
        return cls(int(doc["tau"]), np.asarray(doc["theta_l"], dtype=np.float64),
                   SparseCpt.from_dict(cp["c1"]), SparseCpt.from_dict(cp["c2"]),
                   SparseCpt.from_dict(cp["y"]), part, tuple(doc["x_block"]),
                   float(doc["final_loglik"]), int(doc["iterations_run"]),
                   [float(v) for v in doc.get("loglik_trace", [])],
                   {k: list(v) for k, v in doc.get("domains", {}).items()})


def _check_domains(ds: Dataset, params: PolicyParams) -> None:
    for name, labels in params.domains.items():
        if name not in ds:
            raise DataError(f"attribute {name!r} missing from dataset")
        if list(ds.domain(name).codes) != labels:
            raise DataError(f"attribute {name!r} has a different domain than the fitted model")


def _blocks_attrs(ds: Dataset, part: Partition, roles: RoleSpec):
    """(c1 child, c2 child, shared parents, y parents, x block) in schema order."""
    ic = set(part.left) | set(part.right)
    if set(part.left) & set(part.right):
        raise DataError("partition blocks overlap")
    io = [a for a in roles.inadmissible if a not in ic]
    if not ic <= set(roles.inadmissible):
        raise DataError("partition contains attributes outside the inadmissible set")
    parents = ds.schema_order(list(roles.sensitive) + io + list(roles.admissible))
    y_parents = ds.schema_order(list(roles.admissible) + list(roles.additional))
    x_block = [a for a in ds.names if a not in ic and a != roles.label]
    return (ds.schema_order(part.left), ds.schema_order(part.right), parents, y_parents, x_block)


def _smoothed(block, n_pair: np.ndarray, delta: float):
    """Turn expected counts ``(tau, entries)`` into smoothed conditionals."""
    tau = n_pair.shape[0]
    k, p = block.n_child, block.n_parent
    n_parent = np.empty((tau, p))
    n_child = np.empty((tau, k))
    for l in range(tau):
        n_parent[l] = np.bincount(block.pair_parent, weights=n_pair[l], minlength=p)
        n_child[l] = np.bincount(block.pair_child, weights=n_pair[l], minlength=k)
    denom = n_parent + delta * k
    empty = denom <= 0.0
    safe = np.where(empty, 1.0, denom)
    prob = (n_pair + delta) / safe[:, block.pair_parent]
    prob = np.where(empty[:, block.pair_parent], 1.0 / k, prob)
    rest = np.where(empty, 1.0 / k, delta / safe)
    bden = n_child.sum(axis=1) + delta * k
    bempty = bden <= 0.0
    bsafe = np.where(bempty, 1.0, bden)
    backoff = np.where(bempty[:, None], 1.0 / k, (n_child + delta) / bsafe[:, None])
    backoff_rest = np.where(bempty, 1.0 / k, delta / bsafe)
    return prob, rest, backoff, backoff_rest


def _random_tables(block, tau: int, rng: np.random.Generator):
    """Dirichlet(1) draw per (state, parent) over the realized child configurations.

    Unlisted children under a parent share one Gamma(K - m) draw, which is the
    aggregate of their Gamma(1) components, so the listed cells are exactly
    Dirichlet(1) marginals without materializing the dense table.
    """
    k, p = block.n_child, block.n_parent
    free = (k - np.bincount(block.pair_parent, minlength=p)).astype(np.float64)
    prob = np.empty((tau, len(block.pair_parent)))
    rest = np.empty((tau, p))
    for l in range(tau):
        g = np.maximum(rng.standard_gamma(1.0, size=len(block.pair_parent)), 1e-300)
        g_free = np.where(free > 0, rng.standard_gamma(np.maximum(free, 1.0)), 0.0)
        total = np.bincount(block.pair_parent, weights=g, minlength=p) + g_free
        prob[l] = g / total[block.pair_parent]
        rest[l] = np.where(free > 0, g_free / np.maximum(free, 1.0) / total, 0.0)
    backoff = rng.dirichlet(np.ones(k), size=tau)
    backoff = np.maximum(backoff, 1e-300)
    backoff /= backoff.sum(axis=1, keepdims=True)
    return prob, rest, backoff, np.zeros(tau)


def _make_cpt(block, tables, delta: float) -> SparseCpt:
    prob, rest, backoff, backoff_rest = tables
    return SparseCpt(block.child_attrs, block.parent_attrs, block.child_sizes, block.parent_sizes,
                     block.child_configs, block.parent_configs, block.pair_parent, block.pair_child,
                     prob, rest, backoff, backoff_rest, delta)


class _Model:
    """Fitting-time state: three block indexes over one dataset."""

    def __init__(self, ds: Dataset, part: Partition, roles: RoleSpec):
        c1, c2, parents, y_parents, x_block = _blocks_attrs(ds, part, roles)
        self.ds = ds
        self.part = part
        self.x_block = tuple(x_block)
        self.blocks = (_Block(ds, c1, parents), _Block(ds, c2, parents),
                       _Block(ds, [roles.label], y_parents))
        used = list(c1) + list(c2) + list(parents) + list(y_parents) + [roles.label]
        self.domains = {a: list(ds.domain(a).codes) for a in ds.schema_order(used)}

    def params(self, theta_l, tables, delta) -> PolicyParams:
        cpts = [_make_cpt(b, t, delta) for b, t in zip(self.blocks, tables)]
        return PolicyParams(len(theta_l), np.asarray(theta_l, dtype=np.float64), *cpts,
                            partition=self.part, x_block=self.x_block, domains=self.domains)

    def e_step(self, theta_l, tables):
        with np.errstate(divide="ignore"):
            logs = [np.ascontiguousarray(np.log(t[0])) for t in tables]
            log_theta = np.log(np.asarray(theta_l, dtype=np.float64))
        b = self.blocks
        return kernels.posterior_loglik(log_theta, logs[0], b[0].pair_ids, logs[1], b[1].pair_ids,
                                        logs[2], b[2].pair_ids)

    def m_step(self, post: np.ndarray, delta: float):
        post = np.ascontiguousarray(post, dtype=np.float64)
        theta = post.sum(axis=0) / post.shape[0]
        theta = theta / theta.sum()
        tables = []
        for b in self.blocks:
            n_pair = kernels.weighted_bincount(b.pair_ids, post, len(b.pair_parent))
            tables.append(_smoothed(b, n_pair, delta))
        return theta, tables


def _record_terms(ds: Dataset, params: PolicyParams):
    _check_domains(ds, params)
    probs, fallbacks = [], 0
    for cpt in params.cpts:
        pr, nb = cpt.record_probs(ds)
        probs.append(pr)
        fallbacks += nb
    if fallbacks:
        log.warning("%d parent configuration lookup(s) fell back to the latent-only distribution",
                    fallbacks)
    with np.errstate(divide="ignore"):
        logs = [np.log(p) for p in probs]
    # each record gets its own column so the kernel indexes the identity
    ids = np.arange(ds.n_records, dtype=np.int64)
    with np.errstate(divide="ignore"):
        log_theta = np.log(params.theta_l)
    return kernels.posterior_loglik(log_theta, np.ascontiguousarray(logs[0]), ids,
                                    np.ascontiguousarray(logs[1]), ids,
                                    np.ascontiguousarray(logs[2]), ids)


def e_step(ds: Dataset, params: PolicyParams) -> np.ndarray:
    """Posterior over latent states, one normalized row per record."""
    if ds.n_records == 0:
        return np.zeros((0, params.tau))
    post, _ = _record_terms(ds, params)
    if not np.all(np.isfinite(post)):
        raise AssertionError("zero normalizer in E-step")
    return post


def log_likelihood(ds: Dataset, params: PolicyParams) -> float:
    """Average per-record log-likelihood (natural log) with L summed out."""
    if ds.n_records == 0:
        raise DataError("empty dataset")
    _, ll = _record_terms(ds, params)
    return ll


def m_step(ds: Dataset, posterior: np.ndarray, part: Partition, roles: RoleSpec, tau: int,
           smoothing: float = DEFAULT_SMOOTHING) -> PolicyParams:
    """Closed-form update from posterior weights (normalized expected counts)."""
    posterior = np.asarray(posterior, dtype=np.float64)
    if posterior.shape != (ds.n_records, tau):
        raise DataError(f"posterior must have shape ({ds.n_records}, {tau})")
    if not np.allclose(posterior.sum(axis=1), 1.0, atol=1e-9):
        raise AssertionError("posterior rows are not normalized")
    if smoothing < 0:
        raise DataError("smoothing must be non-negative")
    model = _Model(ds, part, roles)
    theta, tables = model.m_step(posterior, smoothing)
    return model.params(theta, tables, smoothing)


def _check_inputs(ds: Dataset, part: Partition, tau: int, n_iter: int, eta: float, smoothing: float):
    if not validate_tau(tau, part):
        bound = min(len(part.left), len(part.right))
        raise TauBoundError(f"tau={tau} violates the identifiability bound: need tau == 1 or "
                            f"2 <= tau <= min(|I_c1|, |I_c2|) = {bound}")
    if n_iter < 1:
        raise DataError("n_iter must be at least 1")
    if not eta > 0:
        raise DataError("eta must be positive")
    if smoothing < 0:
        raise DataError("smoothing must be non-negative")
    if ds.n_records == 0:
        raise DataError("empty dataset")


def _run_em(model: _Model, tau: int, n_iter: int, eta: float, smoothing: float,
            rng: np.random.Generator) -> PolicyParams:
    theta = rng.dirichlet(np.ones(tau))
    tables = [_random_tables(b, tau, rng) for b in model.blocks]
    trace = []
    prev = -math.inf
    iterations = 0
    for it in range(n_iter):
        post, ll = model.e_step(theta, tables)
        trace.append(ll)
        theta, tables = model.m_step(post, smoothing)
        iterations = it + 1
        if abs(ll - prev) <= eta:
            break
        prev = ll
    # report the likelihood of the parameters actually returned
    _, final = model.e_step(theta, tables)
    params = model.params(theta, tables, smoothing)
    params.final_loglik = final
    params.iterations_run = iterations
    params.loglik_trace = trace
    return params


def estimate(ds: Dataset, part: Partition, roles: RoleSpec, tau: int, n_iter: int = DEFAULT_N_ITER,
             eta: float = DEFAULT_ETA, seed: int = 0, smoothing: float = DEFAULT_SMOOTHING,
             restarts: int = 1) -> PolicyParams:
    """Fit the factorization by EM from a seeded Dirichlet(1) start.

    Iterates until the average log-likelihood moves by at most ``eta`` or
    ``n_iter`` iterations have run.  With ``restarts > 1`` independent starts
    are drawn and the best final log-likelihood is kept (first wins ties).
    """
    _check_inputs(ds, part, tau, n_iter, eta, smoothing)
    if restarts < 1:
        raise DataError("restarts must be at least 1")
    model = _Model(ds, part, roles)
    best = None
    for r in range(restarts):
        rng = stage_rng(seed, f"em/restart/{r}")
        params = _run_em(model, tau, n_iter, eta, smoothing, rng)
        log.info("em restart %d: %d iterations, loglik %.6f", r, params.iterations_run, params.final_loglik)
        if best is None or params.final_loglik > best.final_loglik:
            best = params
    return best
