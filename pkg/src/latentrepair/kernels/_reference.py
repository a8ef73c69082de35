"""Pure-numpy kernels.  Signatures mirror :mod:`._jit`."""
from __future__ import annotations

import numpy as np


def stratum_terms(z, n_strata, x, kx, y, ky):
    """Per-stratum sufficient statistics of an x-by-y contingency table.

    Returns ``(n_s, g_half, rows, cols)``: record count, the sum over nonzero
    cells of ``O * ln(O * n_s / (n_x * n_y))``, and the number of x / y values
    present, for every stratum id in ``[0, n_strata)``.
    """
    z = np.asarray(z, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    n_s = np.bincount(z, minlength=n_strata).astype(np.int64)
    cell = (z * kx + x) * ky + y
    ucell, obs = np.unique(cell, return_counts=True)
    uz = ucell // (kx * ky)
    ux = (ucell // ky) % kx
    uy = ucell % ky
    uxz, inv_xz = np.unique(uz * kx + ux, return_inverse=True)
    uyz, inv_yz = np.unique(uz * ky + uy, return_inverse=True)
    inv_xz = inv_xz.reshape(-1)
    inv_yz = inv_yz.reshape(-1)
    n_xz = np.bincount(inv_xz, weights=obs)
    n_yz = np.bincount(inv_yz, weights=obs)
    obs_f = obs.astype(np.float64)
    ratio = (obs_f * n_s[uz]) / (n_xz[inv_xz] * n_yz[inv_yz])
    g_half = np.bincount(uz, weights=obs_f * np.log(ratio), minlength=n_strata)
    rows = np.bincount(uxz // kx, minlength=n_strata).astype(np.int64)
    cols = np.bincount(uyz // ky, minlength=n_strata).astype(np.int64)
    return n_s, g_half, rows, cols


def weighted_bincount(ids, weights, n_bins):
    """``out[l, b] = sum(weights[j, l] for j with ids[j] == b)``."""
    tau = weights.shape[1]
    out = np.empty((tau, n_bins))
    for l in range(tau):
        out[l] = np.bincount(ids, weights=weights[:, l], minlength=n_bins)
    return out


def posterior_loglik(log_theta, la, ia, lb, ib, lc, ic):
    """Posterior over latent states and the average log-likelihood.

    ``la[l, ia[j]]`` is the log-probability of record ``j``'s first factor under
    state ``l``; likewise for the other two factors.
    """
    v = log_theta[None, :] + la[:, ia].T + lb[:, ib].T + lc[:, ic].T
    m = v.max(axis=1)
    e = np.exp(v - m[:, None])
    # sorted accumulation keeps the result invariant to relabelling states
    s = np.zeros(len(e))
    for col in np.sort(e, axis=1).T:
        s += col
    post = e / s[:, None]
    return post, float(np.sum(m + np.log(s)) / v.shape[0])


def sample_grouped(state, group, start, end, child_of, excess, n_child, u1, u2):
    """Draw one child id per record from a sparse per-(state, group) distribution.

    Entries ``start[g]:end[g]`` hold group ``g``'s listed children with masses
    ``excess[state, entry]``; leftover mass is spread uniformly over all
    ``n_child`` children.
    """
    n = len(state)
    out = np.empty(n, dtype=np.int64)
    uniform = np.minimum((u2 * n_child).astype(np.int64), n_child - 1)
    for l in np.unique(state):
        sel = np.flatnonzero(state == l)
        cum = np.cumsum(excess[l])
        g = group[sel]
        a = start[g]
        b = end[g]
        base = np.where(a > 0, cum[np.maximum(a - 1, 0)], 0.0)
        pos = np.searchsorted(cum, base + u1[sel], side="right")
        hit = (pos < b) & (b > a)
        out[sel] = np.where(hit, child_of[np.minimum(pos, len(child_of) - 1)], uniform[sel])
    return out
