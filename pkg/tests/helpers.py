"""Small constructors shared by the test modules."""
from __future__ import annotations

import numpy as np

from latentrepair.dataset import CategoricalDomain, Dataset
from latentrepair.synthgen import CausalDagSpec, Node, labels_for, random_cpt


def make_ds(cols: dict, sizes: dict | None = None) -> Dataset:
    """Dataset from integer code columns; domain sizes default to max code + 1."""
    sizes = sizes or {}
    domains, data = [], []
    for name, col in cols.items():
        col = np.asarray(col, dtype=np.int64)
        k = sizes.get(name, int(col.max()) + 1 if len(col) else 1)
        domains.append(CategoricalDomain(name, labels_for(k)))
        data.append(col)
    n = len(data[0]) if data else 0
    return Dataset(domains, data, n_records=n)


def table_ds(table, x="x", y="y") -> Dataset:
    """Expand a contingency table of counts into records."""
    t = np.asarray(table, dtype=np.int64)
    xs, ys = [], []
    for i in range(t.shape[0]):
        for j in range(t.shape[1]):
            xs += [i] * int(t[i, j])
            ys += [j] * int(t[i, j])
    return make_ds({x: xs, y: ys}, {x: t.shape[0], y: t.shape[1]})


def two_block_spec(seed, block=("a", "b"), other=("c", "d"), size=3):
    rng = np.random.default_rng(seed)
    nodes = [Node("Z", 2)]
    for blk in (block, other):
        prev = ()
        for v in blk:
            nodes.append(Node(v, size, ("Z",) + prev))
            prev = (v,)
    cpts = {}
    for n in nodes:
        rows = int(np.prod([2 if p == "Z" else size for p in n.parents]))
        # strong within-block coupling: near-diagonal rows
        t = random_cpt(rng, rows, n.size)
        if len(n.parents) > 1:
            prev_code = np.arange(rows) % size
            t = 0.3 * t + 0.7 * np.eye(size)[prev_code]
        cpts[n.name] = t
    return CausalDagSpec(nodes, cpts)


def planted_latent(seed, n=50_000):
    """Binary latent L with two blocks of three binary inadmissibles.

    Returns ``(ds, roles, part, truth)``; each inadmissible depends on (L, S)
    with P(x=1) on opposite sides of 1/2 for the two latent states, and Y
    depends on L alone.
    """
    from latentrepair.dataset import RoleSpec
    from latentrepair.partition import Partition

    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.3, 0.7)
    theta = np.array([t0, 1.0 - t0])
    lat = (rng.random(n) >= theta[0]).astype(np.int64)
    s = rng.integers(0, 2, n)
    lo, hi = rng.uniform(0.1, 0.4, (6, 2)), rng.uniform(0.6, 0.9, (6, 2))
    flip = rng.random(6) < 0.5
    # p[j, l, s] = P(I_j = 1 | L = l, S = s)
    p = np.where(flip[:, None, None], np.stack([hi, lo], 1), np.stack([lo, hi], 1))
    cols = {"S": s}
    for j in range(6):
        cols[f"I{j}"] = (rng.random(n) < p[j][lat, s]).astype(np.int64)
    py = rng.uniform(0.1, 0.9, 2)
    while abs(py[0] - py[1]) < 0.3:
        py = rng.uniform(0.1, 0.9, 2)
    cols["Y"] = (rng.random(n) < py[lat]).astype(np.int64)
    ds = make_ds(cols, {k: 2 for k in cols})
    roles = RoleSpec(sensitive=("S",), inadmissible=tuple(f"I{j}" for j in range(6)), label="Y")
    part = Partition(("I0", "I1", "I2"), ("I3", "I4", "I5"), tau=2)
    return ds, roles, part, {"theta": theta, "p": p, "py": py}


def planted_block_dist(p, attrs, state, s, configs):
    """Generator's joint over a block's child configurations given (L, S)."""
    out = np.ones(len(configs))
    for i, cfg in enumerate(configs):
        for j, x in zip(attrs, cfg):
            q = p[j][state, s]
            out[i] *= q if x == 1 else 1.0 - q
    return out
