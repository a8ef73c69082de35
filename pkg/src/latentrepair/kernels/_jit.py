"""numba implementations of the kernels in :mod:`._reference`."""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def stratum_terms(z, n_strata, x, kx, y, ky):
    n = z.shape[0]
    n_s = np.zeros(n_strata, np.int64)
    for i in range(n):
        n_s[z[i]] += 1
    fill = np.empty(n_strata, np.int64)
    acc = 0
    for s in range(n_strata):
        fill[s] = acc
        acc += n_s[s]
    order = np.empty(n, np.int64)
    for i in range(n):
        s = z[i]
        order[fill[s]] = i
        fill[s] += 1

    table = np.zeros(kx * ky, np.int64)
    rsum = np.zeros(kx, np.int64)
    csum = np.zeros(ky, np.int64)
    g_half = np.zeros(n_strata)
    rows = np.zeros(n_strata, np.int64)
    cols = np.zeros(n_strata, np.int64)
    hi = 0
    for s in range(n_strata):
        lo = hi
        hi = lo + n_s[s]
        if lo == hi:
            continue
        for p in range(lo, hi):
            i = order[p]
            table[x[i] * ky + y[i]] += 1
            rsum[x[i]] += 1
            csum[y[i]] += 1
        total = hi - lo
        g = 0.0
        for p in range(lo, hi):
            i = order[p]
            c = x[i] * ky + y[i]
            o = table[c]
            if o > 0:
                g += o * math.log((o * total) / (rsum[x[i]] * csum[y[i]]))
                table[c] = 0
        g_half[s] = g
        r = 0
        k = 0
        for p in range(lo, hi):
            i = order[p]
            if rsum[x[i]] > 0:
                r += 1
                rsum[x[i]] = 0
            if csum[y[i]] > 0:
                k += 1
                csum[y[i]] = 0
        rows[s] = r
        cols[s] = k
    return n_s, g_half, rows, cols


@njit(cache=True, nogil=True)
def weighted_bincount(ids, weights, n_bins):
    tau = weights.shape[1]
    out = np.zeros((tau, n_bins))
    for j in range(ids.shape[0]):
        b = ids[j]
        for l in range(tau):
            out[l, b] += weights[j, l]
    return out


@njit(cache=True, nogil=True)
def posterior_loglik(log_theta, la, ia, lb, ib, lc, ic):
    n = ia.shape[0]
    tau = log_theta.shape[0]
    post = np.empty((n, tau))
    buf = np.empty(tau)
    srt = np.empty(tau)
    total = 0.0
    for j in range(n):
        m = -np.inf
        for l in range(tau):
            v = log_theta[l] + la[l, ia[j]] + lb[l, ib[j]] + lc[l, ic[j]]
            buf[l] = v
            if v > m:
                m = v
        for l in range(tau):
            buf[l] = math.exp(buf[l] - m)
        # ascending insertion sort so the sum is independent of state labels
        for l in range(tau):
            srt[l] = buf[l]
        for a in range(1, tau):
            v = srt[a]
            b = a - 1
            while b >= 0 and srt[b] > v:
                srt[b + 1] = srt[b]
                b -= 1
            srt[b + 1] = v
        s = 0.0
        for l in range(tau):
            s += srt[l]
        for l in range(tau):
            post[j, l] = buf[l] / s
        total += m + math.log(s)
    return post, total / n


@njit(cache=True, nogil=True)
def sample_grouped(state, group, start, end, child_of, excess, n_child, u1, u2):
    n = state.shape[0]
    out = np.empty(n, np.int64)
    for r in range(n):
        l = state[r]
        g = group[r]
        u = u1[r]
        acc = 0.0
        chosen = -1
        for q in range(start[g], end[g]):
            acc += excess[l, q]
            if u < acc:
                chosen = child_of[q]
                break
        if chosen < 0:
            chosen = int(u2[r] * n_child)
            if chosen >= n_child:
                chosen = n_child - 1
        out[r] = chosen
    return out
