#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the three hot loops on representative workloads and prints one row
per kernel with the speedup of the extension over the fallback. Run as:

    python benchmarks/bench_kernels.py [--repeats 3]
"""

import argparse
import time

import numpy as np

from pbsd_lab import _kernels_py

try:
    from pbsd_lab import _kernels as _compiled
except ImportError:
    _compiled = None


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads():
    rng = np.random.default_rng(0)
    q = rng.dirichlet(np.ones(216))
    logq = np.log(q)
    r = rng.uniform(-1, 1, 216)
    start = rng.dirichlet(np.ones(216))
    vs = rng.standard_normal((500, 216))
    a = rng.standard_normal((128, 128))
    sym = a @ a.T

    def bench_ascent(impl):
        p = impl.pga_ascent(logq, r, 0.1, start, 10_000, 0.1, 1e-12)
        impl.mirror_polish(logq, r, 0.1, p, 200, 0.5)

    def bench_projection(impl):
        for v in vs:
            impl.project_to_simplex(v)

    def bench_jacobi(impl):
        impl.jacobi_eigenvalues(sym)

    return [
        ("tilt maximizer (|Y|=216, 10k+200 iters)", bench_ascent),
        ("simplex projection (500 x 216)", bench_projection),
        ("jacobi eigenvalues (d=128)", bench_jacobi),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"{'kernel':45s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, bench in workloads():
        t_py = _time(lambda: bench(_kernels_py), args.repeats)
        if _compiled is None:
            print(f"{name:45s} {t_py:9.3f}s {'n/a':>10s} {'n/a':>8s}")
            continue
        t_c = _time(lambda: bench(_compiled), args.repeats)
        print(f"{name:45s} {t_py:9.3f}s {t_c:9.3f}s {t_py / t_c:7.1f}x")
    if _compiled is None:
        print("\nextension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
