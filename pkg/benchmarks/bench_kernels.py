"""Time the numba kernels against the numpy reference.

    python benchmarks/bench_kernels.py --records 200000 --repeat 5
"""
import argparse
import time

import numpy as np

from latentrepair.kernels import _reference

try:
    from latentrepair.kernels import _jit
except ImportError:
    _jit = None


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n, rng):
    z = rng.integers(0, 256, n)
    x = rng.integers(0, 4, n)
    y = rng.integers(0, 4, n)
    yield "stratum_terms", (z, 256, x, 4, y, 4)

    ids = rng.integers(0, 5000, n)
    w = rng.random((n, 3))
    yield "weighted_bincount", (ids, w, 5000)

    tau = 3
    tables = [np.log(rng.dirichlet(np.ones(m), size=tau)) for m in (4000, 4000, 200)]
    tid = [rng.integers(0, t.shape[1], n) for t in tables]
    lt = np.log(np.full(tau, 1.0 / tau))
    yield "posterior_loglik", (lt, tables[0], tid[0], tables[1], tid[1], tables[2], tid[2])

    n_groups, n_child = 500, 64
    per = 8
    start = np.arange(n_groups) * per
    end = start + per
    child_of = np.concatenate([rng.choice(n_child, per, replace=False) for _ in range(n_groups)])
    excess = rng.random((tau, n_groups * per)) / (2 * per)
    args = (rng.integers(0, tau, n), rng.integers(0, n_groups, n), start, end, child_of, excess,
            n_child, rng.random(n), rng.random(n))
    yield "sample_grouped", args


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--records", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, call_args in cases(args.records, rng):
        ref = _best_of(lambda: getattr(_reference, name)(*call_args), args.repeat)
        if _jit is None:
            print(f"{name:<20}{ref * 1e3:>12.2f}{'n/a':>12}{'':>10}")
            continue
        getattr(_jit, name)(*call_args)  # compile / load from cache
        fast = _best_of(lambda: getattr(_jit, name)(*call_args), args.repeat)
        print(f"{name:<20}{ref * 1e3:>12.2f}{fast * 1e3:>12.2f}{ref / fast:>9.1f}x")


if __name__ == "__main__":
    main()
