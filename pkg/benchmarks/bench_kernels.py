#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-NumPy fallback.

Workloads mirror the Monte Carlo harness hot path: per replicate, one
padded-quantile sweep over every population unit's tail weight, and one
sequential without-replacement draw. Run after `pip install -e .`:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from svyconform._kernels import _pure

try:
    from svyconform._kernels import _core
except ImportError:
    _core = None


def _time(fn, repeats):
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def bench_quantile_sweep(backend, n_calib=200, n_pop=6000):
    rng = np.random.default_rng(0)
    cum = np.cumsum(rng.uniform(0.5, 2.0, size=n_calib))
    tails = rng.uniform(0.5, 60.0, size=n_pop)
    total = float(cum[-1])
    return _time(lambda: backend.padded_quantile_indices(cum, total, tails, 0.8), repeats=200)


def bench_ppswor(backend, n_pop=6000, n_draw=200):
    rng = np.random.default_rng(1)
    sizes = rng.lognormal(0.0, 0.7, size=n_pop) * 500
    uniforms = rng.random(n_draw)
    return _time(lambda: backend.ppswor_indices(sizes, n_draw, uniforms), repeats=20)


def main():
    rows = [
        ("padded quantile sweep (200 calib x 6000 tails)", bench_quantile_sweep),
        ("sequential pps draw (200 of 6000)", bench_ppswor),
    ]
    print(f"{'workload':50s} {'pure':>12s} {'compiled':>12s} {'speedup':>9s}")
    for name, bench in rows:
        pure_t = bench(_pure)
        if _core is None:
            print(f"{name:50s} {pure_t * 1e3:10.3f}ms {'absent':>12s} {'-':>9s}")
            continue
        core_t = bench(_core)
        print(f"{name:50s} {pure_t * 1e3:10.3f}ms {core_t * 1e3:10.3f}ms {pure_t / core_t:8.1f}x")


if __name__ == "__main__":
    main()
