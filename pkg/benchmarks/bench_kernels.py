"""Benchmark the deformable sampling kernels: numba vs pure numpy.

Run:  python benchmarks/bench_kernels.py [--repeat 5]

Both paths are always importable from ``pfan.kernels``; the env flag
PFAN_NO_NUMBA only decides which one the operators use by default.
"""

import argparse
import time

import numpy as np

from pfan import kernels

CASES = [
    # (batch, channels, height, width, groups)
    (2, 16, 32, 32, 1),
    (2, 24, 16, 16, 1),
    (2, 32, 8, 8, 1),
    (2, 16, 64, 64, 1),
    (1, 16, 32, 32, 2),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba not installed; only the numpy path is available")
        return
    rng = np.random.default_rng(0)
    K = 3
    T = K * K
    print(f"{'case (N,C,H,W,G)':<22}{'op':<10}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max diff':>11}")
    for n, c, h, w, g in CASES:
        x = rng.normal(size=(n, c, h, w)).astype(np.float32)
        off = rng.uniform(-3, 3, size=(n, 2 * g * T, h, w)).astype(np.float32)
        mask = rng.uniform(0, 1, size=(n, g * T, h, w)).astype(np.float32)
        gcols = rng.normal(size=(n, c, T, h, w)).astype(np.float32)
        # warm up the jit
        kernels.sample_numba(x, off, mask, K, g)
        kernels.sample_backward_numba(x, off, mask, gcols, K, g)

        fwd_np = best_of(lambda: kernels.sample_numpy(x, off, mask, K, g), args.repeat)
        fwd_nb = best_of(lambda: kernels.sample_numba(x, off, mask, K, g), args.repeat)
        diff_f = np.abs(kernels.sample_numpy(x, off, mask, K, g) - kernels.sample_numba(x, off, mask, K, g)).max()
        bwd_np = best_of(lambda: kernels.sample_backward_numpy(x, off, mask, gcols, K, g), args.repeat)
        bwd_nb = best_of(lambda: kernels.sample_backward_numba(x, off, mask, gcols, K, g), args.repeat)
        a = kernels.sample_backward_numpy(x, off, mask, gcols, K, g)
        b = kernels.sample_backward_numba(x, off, mask, gcols, K, g)
        diff_b = max(np.abs(u - v).max() for u, v in zip(a, b))

        label = f"{(n, c, h, w, g)}"
        print(f"{label:<22}{'forward':<10}{fwd_np * 1e3:>10.2f}{fwd_nb * 1e3:>10.2f}"
              f"{fwd_np / fwd_nb:>9.1f}{diff_f:>11.2e}")
        print(f"{'':<22}{'backward':<10}{bwd_np * 1e3:>10.2f}{bwd_nb * 1e3:>10.2f}"
              f"{bwd_np / bwd_nb:>9.1f}{diff_b:>11.2e}")


if __name__ == "__main__":
    main()
