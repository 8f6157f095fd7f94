"""Hot inner loops: biquad IIR filtering and the LSTM time recurrences.

Every kernel exists twice, a numpy/scipy implementation (``*_numpy``) and a
numba-compiled one (``*_numba``). The public names point at one or the other
depending on :data:`ppgauth._accel.USE_NUMBA`. Both paths must agree to
floating point round-off; ``tests/test_kernels.py`` checks that.

All LSTM kernels work on time-major arrays ``(T, B, ...)`` so that each time
slice is C-contiguous.
"""

import math

import numpy as np
from scipy import signal

from ppgauth._accel import HAS_NUMBA, USE_NUMBA, njit


# --------------------------------------------------------------------------
# biquad (transposed direct form II), per channel, with carried state
# --------------------------------------------------------------------------

def biquad_numpy(x, b, a, zi):
    """Filter ``x`` (N, C) with one biquad per column.

    ``b``/``a`` are length-3 coefficient arrays with ``a[0] == 1``; ``zi`` is
    the (C, 2) DF2T state. Returns ``(y, zf)``.
    """
    y, zf = signal.lfilter(b, a, x, axis=0, zi=np.ascontiguousarray(zi.T))
    return y, np.ascontiguousarray(zf.T)


def _biquad_loop(x, b, a, zi):
    n, nch = x.shape
    y = np.empty_like(x)
    zf = zi.copy()
    b0, b1, b2 = b[0], b[1], b[2]
    a1, a2 = a[1], a[2]
    for ch in range(nch):
        z0 = zf[ch, 0]
        z1 = zf[ch, 1]
        for k in range(n):
            xk = x[k, ch]
            yk = b0 * xk + z0
            z0 = b1 * xk - a1 * yk + z1
            z1 = b2 * xk - a2 * yk
            y[k, ch] = yk
        zf[ch, 0] = z0
        zf[ch, 1] = z1
    return y, zf


# --------------------------------------------------------------------------
# LSTM recurrence. Gate layout along the 4H axis: i, f, g, o.
# --------------------------------------------------------------------------

def _lstm_forward(xproj, wh_t, reverse):
    # xproj: (T, B, 4H) input projection incl. bias; wh_t: (H, 4H)
    T, B, G = xproj.shape
    H = G // 4
    hs = np.zeros((T, B, H))
    cs = np.zeros((T, B, H))
    gates = np.zeros((T, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for step in range(T):
        t = T - 1 - step if reverse else step
        z = xproj[t] + np.dot(h, wh_t)
        i = 0.5 * (1.0 + np.tanh(0.5 * z[:, :H]))
        f = 0.5 * (1.0 + np.tanh(0.5 * z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


def _lstm_backward(dhs, cs, gates, wh, reverse):
    # returns dz (T, B, 4H): gradient w.r.t. gate pre-activations
    T, B, H = dhs.shape
    dz = np.zeros((T, B, 4 * H))
    dh_rec = np.zeros((B, H))
    dc_rec = np.zeros((B, H))
    zero = np.zeros((B, H))
    for step in range(T):
        t = step if reverse else T - 1 - step
        prev = t + 1 if reverse else t - 1
        if prev >= 0 and prev < T:
            c_prev = cs[prev]
        else:
            c_prev = zero
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_rec
        dc = dc_rec + dh * o * (1.0 - tc * tc)
        dz[t, :, :H] = dc * g * i * (1.0 - i)
        dz[t, :, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[t, :, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[t, :, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_rec = dc * f
        dh_rec = np.dot(dz[t], wh)
    return dz


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _tanh(x):
    # libm tanh is ~4x slower than expm1 without SVML
    if x > 20.0:
        return 1.0
    if x < -20.0:
        return -1.0
    e = math.expm1(2.0 * x)
    return e / (e + 2.0)


def _lstm_forward_fused(xproj, wh_t, reverse):
    # scalar-loop variant for numba: one pass per step, no temporaries
    T, B, G = xproj.shape
    H = G // 4
    hs = np.zeros((T, B, H))
    cs = np.zeros((T, B, H))
    gates = np.zeros((T, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for step in range(T):
        t = T - 1 - step if reverse else step
        z = np.dot(h, wh_t)
        for bi in range(B):
            for j in range(H):
                i = _sig(z[bi, j] + xproj[t, bi, j])
                f = _sig(z[bi, H + j] + xproj[t, bi, H + j])
                g = _tanh(z[bi, 2 * H + j] + xproj[t, bi, 2 * H + j])
                o = _sig(z[bi, 3 * H + j] + xproj[t, bi, 3 * H + j])
                cc = f * c[bi, j] + i * g
                hh = o * _tanh(cc)
                c[bi, j] = cc
                h[bi, j] = hh
                gates[t, bi, j] = i
                gates[t, bi, H + j] = f
                gates[t, bi, 2 * H + j] = g
                gates[t, bi, 3 * H + j] = o
                hs[t, bi, j] = hh
                cs[t, bi, j] = cc
    return hs, cs, gates


def _lstm_backward_fused(dhs, cs, gates, wh, reverse):
    T, B, H = dhs.shape
    dz = np.zeros((T, B, 4 * H))
    dh_rec = np.zeros((B, H))
    dc_rec = np.zeros((B, H))
    for step in range(T):
        t = step if reverse else T - 1 - step
        prev = t + 1 if reverse else t - 1
        has_prev = prev >= 0 and prev < T
        for bi in range(B):
            for j in range(H):
                i = gates[t, bi, j]
                f = gates[t, bi, H + j]
                g = gates[t, bi, 2 * H + j]
                o = gates[t, bi, 3 * H + j]
                c_prev = cs[prev, bi, j] if has_prev else 0.0
                tc = _tanh(cs[t, bi, j])
                dh = dhs[t, bi, j] + dh_rec[bi, j]
                dc = dc_rec[bi, j] + dh * o * (1.0 - tc * tc)
                dz[t, bi, j] = dc * g * i * (1.0 - i)
                dz[t, bi, H + j] = dc * c_prev * f * (1.0 - f)
                dz[t, bi, 2 * H + j] = dc * i * (1.0 - g * g)
                dz[t, bi, 3 * H + j] = dh * tc * o * (1.0 - o)
                dc_rec[bi, j] = dc * f
        dh_rec = np.dot(dz[t], wh)
    return dz


lstm_forward_numpy = _lstm_forward
lstm_backward_numpy = _lstm_backward

if HAS_NUMBA:
    biquad_numba = njit(_biquad_loop)
    _sig = njit(_sig)
    _tanh = njit(_tanh)
    lstm_forward_numba = njit(_lstm_forward_fused)
    lstm_backward_numba = njit(_lstm_backward_fused)
else:  # pragma: no cover
    biquad_numba = biquad_numpy
    lstm_forward_numba = _lstm_forward
    lstm_backward_numba = _lstm_backward


def _as_f64c(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def biquad(x, b, a, zi, use_numba=None):
    """Dispatching biquad: ``x`` (N, C), ``zi`` (C, 2) -> ``(y, zf)``."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    x = _as_f64c(x)
    b = _as_f64c(b)
    a = _as_f64c(a)
    zi = _as_f64c(zi)
    if use_numba:
        return biquad_numba(x, b, a, zi)
    return biquad_numpy(x, b, a, zi)


# Above this many (batch x hidden) lanes numpy's SIMD tanh/exp beat numba's
# scalar libm calls, so the forward recurrence stays on the numpy loop.
FUSED_FORWARD_MAX_LANES = 256


def lstm_forward(xproj, wh, reverse, use_numba=None):
    """Run one LSTM direction over time-major pre-projected inputs.

    ``xproj`` is ``x @ W_x.T + b`` with shape (T, B, 4H); ``wh`` is (4H, H).
    Returns ``(hs, cs, gates)`` with activated gates stored for backprop.
    """
    if use_numba is None:
        lanes = xproj.shape[1] * wh.shape[1]
        use_numba = USE_NUMBA and lanes < FUSED_FORWARD_MAX_LANES
    fn = lstm_forward_numba if use_numba else lstm_forward_numpy
    return fn(_as_f64c(xproj), _as_f64c(wh.T), bool(reverse))


def lstm_backward(dhs, cs, gates, wh, reverse, use_numba=None):
    use_numba = USE_NUMBA if use_numba is None else use_numba
    fn = lstm_backward_numba if use_numba else lstm_backward_numpy
    return fn(_as_f64c(dhs), _as_f64c(cs), _as_f64c(gates), _as_f64c(wh), bool(reverse))
