#!/usr/bin/env python3
"""Time the numba kernels against their numpy/scipy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case reports the best-of-N wall time per call for both paths and the
max absolute difference between their outputs. Setting
PPGAUTH_DISABLE_NUMBA=1 changes which path the library picks by default; this
script always runs both explicitly.
"""

import argparse
import time

import numpy as np

from ppgauth import kernels
from ppgauth._accel import HAS_NUMBA
from ppgauth.signal_io import bandpass_coefficients


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def cases(rng):
    b, a = bandpass_coefficients(25.0)
    zi = np.zeros((4, 2))
    long_sig = rng.standard_normal((1_000_000, 4))
    frame = rng.standard_normal((25, 4))
    yield ("biquad 1e6x4", lambda u: kernels.biquad(long_sig, b, a, zi, use_numba=u))
    yield ("biquad 25x4 frame", lambda u: kernels.biquad(frame, b, a, zi, use_numba=u))

    for t, batch, h in ((100, 1, 32), (100, 32, 32), (100, 32, 256)):
        xproj = rng.standard_normal((t, batch, 4 * h))
        wh = rng.standard_normal((4 * h, h)) / np.sqrt(h)
        hs, cs, gates = kernels.lstm_forward(xproj, wh, False, use_numba=False)
        dhs = rng.standard_normal(hs.shape)
        tag = f"T={t} B={batch} H={h}"
        yield (f"lstm fwd {tag}",
               lambda u, x=xproj, w=wh: kernels.lstm_forward(x, w, False, use_numba=u))
        yield (f"lstm bwd {tag}",
               lambda u, d=dhs, c=cs, g=gates, w=wh: kernels.lstm_backward(d, c, g, w, False, use_numba=u))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'case':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max |diff|':>13}")
    for name, fn in cases(rng):
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        diff = _maxdiff(fn(False), fn(True))
        print(f"{name:<28}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}x{diff:>13.2e}")
    print(f"\nlstm_forward auto-dispatch uses numba below "
          f"{kernels.FUSED_FORWARD_MAX_LANES} batch x hidden lanes")


if __name__ == "__main__":
    main()
