"""Compare the compiled kernels against the numpy fallback.

Times the circular kernel sums of the pattern update, a full fixed-lag
smoothing run (dominated by the backward window recursion) and checks that
both backends agree numerically.

    python benchmarks/bench_kernels.py --repeat 3 --threads 1
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from oscproc import _backend
from oscproc.core import ModelParams, OscillationPattern, simulate_gssm
from oscproc.particle import run_rbps


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_kernel_sums(M, n, k, threads):
    rng = np.random.default_rng(0)
    grid = 2 * np.pi * np.arange(M) / M
    x = rng.uniform(0, 2 * np.pi, n)
    w = rng.dirichlet(np.ones(n))
    vals = rng.normal(size=(n, k))
    out = np.empty((M, k + 1))

    def run():
        _backend.impl().circular_kernel_sums(grid, x, w, vals, 0.05, out, threads)
        return out.copy()

    return run


def bench_smoother(T, N, l):
    f = OscillationPattern.from_function(np.cos)
    p = ModelParams(alpha=0.18, beta=0.1, sigma_eps2=0.25, mu=(1.0, 0.0),
                    Q=np.diag([1e-4, 1e-4]))
    y = simulate_gssm(p, f, T, seed=1)[0].y

    def run():
        out = run_rbps(y, p, f, N, l, seed=2)
        return np.column_stack([out.phi_hat, out.a_hat, out.b_hat])

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--T", type=int, default=500)
    ap.add_argument("--N", type=int, default=500)
    ap.add_argument("--lag", type=int, default=20)
    args = ap.parse_args(argv)
    if "cython" not in _backend.available():
        print("compiled kernels not built; only the numpy backend is available")
        return
    _backend.set_num_threads(args.threads)
    cases = [
        ("kernel sums M=256 n=1e5 k=3", bench_kernel_sums(256, 100_000, 3, args.threads)),
        (f"smoother T={args.T} N={args.N} l={args.lag}", bench_smoother(args.T, args.N, args.lag)),
    ]
    print(f"{'case':<36}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max diff':>12}")
    for label, fn in cases:
        res = {}
        for b in ("numpy", "cython"):
            with _backend.use_backend(b):
                res[b] = best_of(fn, args.repeat)
        tn, on = res["numpy"]
        tc, oc = res["cython"]
        diff = float(np.max(np.abs(on - oc)))
        print(f"{label:<36}{tn:>12.4f}{tc:>12.4f}{tn / tc:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
