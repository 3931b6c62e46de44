"""Benchmark the numba kernels against the pure-numpy fallback.

Runs both backends on the two hot loops (backward value-function sweep and
the population simulator) and prints a timing table.  Invoke as

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from tclgame import _kernels_numba, _kernels_numpy
from tclgame import model, riccati


def time_call(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def riccati_args(K):
    params = model.ModelParams()
    mats = model.assemble(params)
    A = mats.A(0.0)
    M = -mats.G
    phi = riccati.solve_are(params)
    out = np.zeros((K + 1, 6))
    out[K, 0], out[K, 1], out[K, 2] = phi[0, 0], phi[0, 1], phi[1, 1]
    e_stage = 0.1 * np.sin(np.linspace(0.0, 10.0, 2 * K + 1))
    return (out, e_stage, 10.0 / K,
            A[0, 0], A[0, 1], A[1, 0], A[1, 1],
            M[0, 0], M[0, 1], M[1, 1], mats.C[0], mats.C[1],
            mats.Q[0, 0], mats.Q[0, 1], mats.Q[1, 1],
            params.W, params.S, 0.0, 0.0, 0, 0, 1, 1e12)


def population_args(n, steps):
    params = model.ModelParams()
    P = riccati.solve_are(params)
    mats = model.assemble(params)
    gain = mats.A(0.0) - mats.G @ P
    m_seq = np.broadcast_to(gain, (steps, 2, 2)).copy()
    b_seq = np.zeros((steps, 2))
    rng = np.random.default_rng(0)
    out = np.empty((steps + 1, n, 2))
    out[0, :, 0] = rng.normal(0.0, 1.0, n)
    out[0, :, 1] = rng.uniform(0.0, 1.0, n)
    noise = rng.standard_normal((steps, n, 2))
    imp_map = np.full(steps + 1, -1, dtype=np.int64)
    imp_values = np.zeros((1, 1, 2))
    return (out, m_seq, b_seq, 0.1, noise, 1, 0.2, 0.1, np.sqrt(0.1),
            -10.0, 10.0, imp_map, imp_values, 0, 0, 0.0, 0.0)


def main():
    backends = (("numba", _kernels_numba), ("numpy", _kernels_numpy))

    print("backend comparison (best of 5 runs)")
    print()

    K = 10000
    times = {}
    for name, impl in backends:
        args = riccati_args(K)
        impl.riccati_sweep(*riccati_args(K))   # warm the JIT cache
        times[name] = time_call(lambda: impl.riccati_sweep(*args))
    print("backward value sweep (K=%d RK4 steps):" % K)
    print("  numba %8.4f s | numpy %8.4f s | speedup %.1fx"
          % (times["numba"], times["numpy"],
             times["numpy"] / times["numba"]))

    n, steps = 10000, 300
    for name, impl in backends:
        impl.population_sweep(*population_args(100, 10))
        args = population_args(n, steps)
        times[name] = time_call(lambda: impl.population_sweep(*args))
    print("population simulation (N=%d agents, %d steps, Langevin noise):"
          % (n, steps))
    print("  numba %8.4f s | numpy %8.4f s | speedup %.1fx"
          % (times["numba"], times["numpy"],
             times["numpy"] / times["numba"]))


if __name__ == "__main__":
    main()
