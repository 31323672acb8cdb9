"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Prints one key=value line per kernel with the median time of each backend,
the speedup, and the max abs difference between their outputs.
"""

import argparse
import time

import numpy as np

from platerec import _kernels as K
from platerec.ctc import expand_with_blanks


def _cases(rng):
    logp = rng.normal(size=(32, 38))
    logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
    ext = expand_with_blanks(np.array([3, 7, 7, 1, 20, 30, 12]), 37)

    xp = rng.normal(size=(32, 66, 18, 64))
    taps = rng.normal(size=(3, 3, 64))
    g = rng.normal(size=(32, 64, 16, 64))

    pool_in = rng.normal(size=(32, 66, 18, 64))
    pool_out, arg = K.maxpool_forward(pool_in, 3, 2, 32, 8)
    pool_g = rng.normal(size=pool_out.shape)

    img = rng.random((32, 128, 3))
    yy, xx = np.mgrid[0:64, 0:256].astype(np.float64)
    sx, sy = 0.5 * xx + 0.1 * yy - 3.0, 0.5 * yy + 0.05 * xx - 2.0

    return {
        "ctc": lambda: K.ctc_forward_backward(logp, ext, 37),
        "depthwise_fwd": lambda: K.depthwise_forward(xp, taps, 1, 1, 64, 16),
        "depthwise_bwd": lambda: K.depthwise_backward(xp, taps, g, 1, 1),
        "maxpool_fwd": lambda: K.maxpool_forward(pool_in, 3, 2, 32, 8),
        "maxpool_bwd": lambda: K.maxpool_backward(pool_g, arg, 3, 2, pool_in.shape),
        "bilinear": lambda: K.bilinear_sample(img, sx, sy),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=np.float64)) for o in out])
    return np.ravel(out)


def _time(fn, repeats):
    fn()  # warm-up (triggers JIT compilation on the numba side)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cases = _cases(np.random.default_rng(args.seed))
    previous = K.USE_NUMBA
    try:
        for name, fn in cases.items():
            K.set_backend(False)
            ref = _flat(fn())
            t_np = _time(fn, args.repeats)
            K.set_backend(True)
            got = _flat(fn())
            t_nb = _time(fn, args.repeats)
            print(
                f"kernel={name} numpy_ms={1e3 * t_np:.2f} numba_ms={1e3 * t_nb:.2f} "
                f"speedup={t_np / t_nb:.2f} max_abs_diff={np.max(np.abs(ref - got)):.2e}"
            )
    finally:
        K.set_backend(previous)


if __name__ == "__main__":
    main()
