"""Benchmark the compiled recourse kernel against the numpy fallback.

Usage: python benchmarks/recourse_backends.py [batch_size ...]
"""

import sys
import time

import numpy as np

from alsopt import recourse


def time_backend(fn, D, C, r, p, order, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        values, grads = fn(D, C, r, p, order)
        best = min(best, time.perf_counter() - start)
    return best, values, grads


def main(batches):
    rng = np.random.default_rng(0)
    I, J = 10, 5
    C = rng.uniform(20, 40, size=J)
    r = np.ones(I)
    p = np.full(I, 0.5)
    order = recourse.weight_order(r, p)
    print(f"active backend: {recourse.backend_name()}  (instance {I}x{J})")
    header = f"{'batch':>8} {'numpy':>12} {'compiled':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for n in batches:
        D = rng.normal(3.0, 4.0, size=(n, I, J))
        t_np, v1, g1 = time_backend(recourse.recourse_values_grads_fallback,
                                    D, C, r, p, order)
        t_fast, v2, g2 = time_backend(recourse.recourse_values_grads,
                                      D, C, r, p, order)
        assert np.allclose(v1, v2, atol=1e-12) and np.allclose(g1, g2, atol=1e-12)
        print(f"{n:>8} {t_np * 1e3:>10.2f}ms {t_fast * 1e3:>10.2f}ms "
              f"{t_np / t_fast:>8.1f}x")


if __name__ == "__main__":
    sizes = [int(a) for a in sys.argv[1:]] or [100, 1000, 10000, 50000]
    main(sizes)
