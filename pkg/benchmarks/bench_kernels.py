"""Benchmark the compiled kernels against the numpy fallback.

Run from the repository root:

    python benchmarks/bench_kernels.py

Workloads mirror where the kernels matter: the moving-average convolution
behind Monte Carlo scenario draws and the sequential VAR recursion behind
wild-bootstrap resampling.
"""

import time

import numpy as np

from macrocf._kernels import (
    BACKEND,
    svma_paths,
    svma_paths_reference,
    var_paths,
    var_paths_reference,
)


def _time(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_svma(rng):
    print("svma_paths: W[t] = w0 + sum_h Theta_h eps[t-h]")
    for q, n, T in [(4, 3, 2_000), (12, 4, 10_000), (24, 5, 50_000)]:
        theta = rng.standard_normal((q + 1, n, n))
        eps = rng.standard_normal((T, n))
        w0 = rng.standard_normal(n)
        fast = _time(svma_paths, theta, eps, w0)
        slow = _time(svma_paths_reference, theta, eps, w0)
        np.testing.assert_allclose(svma_paths(theta, eps, w0),
                                   svma_paths_reference(theta, eps, w0),
                                   rtol=1e-10, atol=1e-12)
        print(f"  q={q:>2} n={n} T={T:>6}:  active={fast * 1e3:8.2f} ms  "
              f"numpy={slow * 1e3:8.2f} ms  speedup={slow / fast:6.1f}x")


def bench_var(rng):
    print("var_paths: W[s] = c + sum_i A_i W[s-i] + u[s]  (sequential)")
    for p, n, T in [(1, 3, 2_000), (4, 4, 10_000), (14, 4, 50_000)]:
        c = rng.standard_normal(n)
        coefs = rng.standard_normal((p, n, n)) * (0.5 / p)
        init = rng.standard_normal((p, n))
        u = rng.standard_normal((T, n))
        fast = _time(var_paths, c, coefs, init, u)
        slow = _time(var_paths_reference, c, coefs, init, u, repeat=3)
        np.testing.assert_allclose(var_paths(c, coefs, init, u),
                                   var_paths_reference(c, coefs, init, u),
                                   rtol=1e-10, atol=1e-12)
        print(f"  p={p:>2} n={n} T={T:>6}:  active={fast * 1e3:8.2f} ms  "
              f"numpy={slow * 1e3:8.2f} ms  speedup={slow / fast:6.1f}x")


def main():
    print(f"active kernel backend: {BACKEND}")
    if BACKEND != "cython":
        print("note: compiled extension not built; 'active' timings are the fallback itself")
    rng = np.random.default_rng(0)
    bench_svma(rng)
    bench_var(rng)


if __name__ == "__main__":
    main()
