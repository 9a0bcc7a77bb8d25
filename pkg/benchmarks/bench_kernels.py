"""Benchmark the compiled conv/pool kernels against their numpy twins.

Runs each kernel on model-shaped inputs with both implementations, printing
best-of-N wall times, the speedup, and the maximum absolute disagreement.
The compiled path is warmed once before timing so JIT compilation is not
billed to the measurement.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--batch B]
"""

import argparse
import time

import numpy as np

from jdx.numerics import kernels_numpy
from jdx.rng import Rng

try:
    from jdx.numerics import kernels_numba
except ImportError:
    kernels_numba = None


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def flatten(result):
    if isinstance(result, tuple):
        return np.concatenate([np.asarray(r, dtype=np.float64).ravel()
                               for r in result])
    return np.asarray(result, dtype=np.float64).ravel()


def kernel_cases(batch, rng):
    """(label, kernel name, args) for shapes the model actually runs."""
    cases = []

    def conv(label, n, c_in, size, c_out, k, pad, stride):
        x = rng.normal(shape=(n, c_in, size, size))
        w = rng.normal(shape=(c_out, c_in, k, k))
        cases.append((label, "conv2d_forward", (x, w, pad, pad, stride, stride)))
        gout_h = (size + 2 * pad - k) // stride + 1
        gout = rng.normal(shape=(n, c_out, gout_h, gout_h))
        cases.append((label.replace("fwd", "bwd"), "conv2d_backward",
                      (x, w, gout, pad, pad, stride, stride)))

    conv(f"conv fwd {batch}x1x64x64 -> 8ch", batch, 1, 64, 8, 3, 1, 1)
    conv(f"conv fwd {batch}x8x32x32 -> 16ch", batch, 8, 32, 16, 3, 1, 1)
    conv(f"conv fwd {batch}x16x16x16 -> 32ch", batch, 16, 16, 32, 3, 1, 1)

    # Token-window convolution as used by the sentence classifier heads.
    xt = rng.normal(shape=(batch, 1, 24, 32))
    wt = rng.normal(shape=(32, 1, 3, 32))
    cases.append((f"conv fwd {batch}x1x24x32 token window", "conv2d_forward",
                  (xt, wt, 0, 0, 1, 1)))

    xp = rng.normal(shape=(batch, 8, 64, 64))
    cases.append((f"pool fwd {batch}x8x64x64 2x2", "maxpool_forward",
                  (xp, 2, 2, 2, 2)))
    _, arg = kernels_numpy.maxpool_forward(xp, 2, 2, 2, 2)
    gout = rng.normal(shape=(batch, 8, 32, 32))
    cases.append((f"pool bwd {batch}x8x64x64 2x2", "maxpool_backward",
                  (gout, arg, 64, 64)))
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions per case (best is reported)")
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if kernels_numba is None:
        raise SystemExit("numba is not installed; nothing to compare against")

    rng = Rng(args.seed)
    cases = kernel_cases(args.batch, rng)

    header = (f"{'case':<34} {'numpy':>10} {'numba':>10} "
              f"{'speedup':>8} {'max|diff|':>10}")
    print(header)
    print("-" * len(header))
    for label, name, call_args in cases:
        np_fn = getattr(kernels_numpy, name)
        nb_fn = getattr(kernels_numba, name)
        nb_fn(*call_args)  # warm the JIT cache
        ref = flatten(np_fn(*call_args))
        out = flatten(nb_fn(*call_args))
        diff = float(np.abs(ref - out).max())
        t_np = best_time(lambda: np_fn(*call_args), args.repeats)
        t_nb = best_time(lambda: nb_fn(*call_args), args.repeats)
        print(f"{label:<34} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.2f}x {diff:>10.2e}")


if __name__ == "__main__":
    main()
