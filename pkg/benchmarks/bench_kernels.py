"""Timing comparison of the compiled and pure-NumPy kernel backends.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from bevtrack import kernels


def time_call(fn, repeats=20):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_lstm(backend, T=40, B=288, H=128, seed=0):
    rng = np.random.default_rng(seed)
    xw = rng.normal(size=(T, B, 4 * H)) * 0.5
    wh = rng.normal(size=(H, 4 * H)) * 0.1
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))
    dh = rng.normal(size=(T, B, H))

    fwd = time_call(lambda: backend.lstm_seq_forward(xw, wh, h0, c0))
    h, c, gates = backend.lstm_seq_forward(xw, wh, h0, c0)
    bwd = time_call(lambda: backend.lstm_seq_backward(wh, h, c, gates, h0, c0, dh))
    return fwd, bwd


def bench_hungarian(backend, n=64, trials=50, seed=0):
    rng = np.random.default_rng(seed)
    mats = [rng.uniform(size=(n, n)) for _ in range(trials)]

    def run():
        for m in mats:
            backend.hungarian_square(m)

    return time_call(run, repeats=5) / trials


def main():
    names = kernels.available_backends()
    print(f"available backends: {', '.join(names)} (active: {kernels.BACKEND})\n")
    rows = []
    for name in names:
        backend = kernels.get_backend(name)
        fwd, bwd = bench_lstm(backend)
        hung = bench_hungarian(backend)
        rows.append((name, fwd, bwd, hung))
    header = f"{'backend':<10} {'lstm fwd (T=40,B=288,H=128)':>28} {'lstm bwd':>12} {'hungarian 64x64':>17}"
    print(header)
    print("-" * len(header))
    for name, fwd, bwd, hung in rows:
        print(f"{name:<10} {fwd * 1e3:>24.2f} ms {bwd * 1e3:>9.2f} ms {hung * 1e3:>14.3f} ms")
    if len(rows) == 2:
        by = {r[0]: r for r in rows}
        if "python" in by and "cython" in by:
            print(
                f"\nspeedup (python/cython): "
                f"lstm fwd {by['python'][1] / by['cython'][1]:.2f}x, "
                f"lstm bwd {by['python'][2] / by['cython'][2]:.2f}x, "
                f"hungarian {by['python'][3] / by['cython'][3]:.2f}x"
            )


if __name__ == "__main__":
    main()
