"""
Hot numeric kernels with a numba path and a pure-numpy fallback.

Every public kernel here dispatches on ``USE_NUMBA``. The numba path is used
when numba imports cleanly and the environment variable ``PLATEREC_NUMBA``
is not set to ``0``. Both paths are kept bit-compatible in their contracts
(tests compare them to 1e-12) so the fallback is always a valid reference.
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("PLATEREC_NUMBA", "1") != "0"

NEG_INF = -np.inf


def set_backend(use_numba):
    """Switch between the numba and numpy kernels at runtime; returns the previous flag."""
    global USE_NUMBA
    previous = USE_NUMBA
    USE_NUMBA = bool(use_numba) and NUMBA_AVAILABLE
    return previous


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# CTC forward-backward in log space
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lse2(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def _ctc_nb(logp, ext, blank):
    T = logp.shape[0]
    C = logp.shape[1]
    S = ext.shape[0]
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)

    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lse2(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _lse2(a, alpha[t - 1, s - 2])
            if a != NEG_INF:
                alpha[t, s] = a + logp[t, ext[s]]

    beta[T - 1, S - 1] = logp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = logp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = beta[t + 1, s]
            if s + 1 < S:
                b = _lse2(b, beta[t + 1, s + 1])
            if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                b = _lse2(b, beta[t + 1, s + 2])
            if b != NEG_INF:
                beta[t, s] = b + logp[t, ext[s]]

    logz = alpha[T - 1, S - 1]
    if S > 1:
        logz = _lse2(logz, alpha[T - 1, S - 2])

    grad = np.zeros((T, C))
    if logz == NEG_INF:
        return logz, grad
    occ = np.full((T, C), NEG_INF)
    for t in range(T):
        for s in range(S):
            v = alpha[t, s] + beta[t, s]
            if v != NEG_INF:
                k = ext[s]
                occ[t, k] = _lse2(occ[t, k], v - logp[t, k])
        for k in range(C):
            if occ[t, k] != NEG_INF:
                grad[t, k] = -np.exp(occ[t, k] - logz)
    return logz, grad


def _ctc_np(logp, ext, blank):
    T, C = logp.shape
    S = ext.shape[0]
    emit = logp[:, ext]  # (T, S)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    # skip_b[s] marks the s -> s+2 transition
    skip_b = np.zeros(S, dtype=bool)
    skip_b[:-2] = skip[2:]
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, -2:] = emit[T - 1, -2:] if S > 1 else emit[T - 1, -1:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip_b[:-2], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]

    logz = np.logaddexp.reduce(alpha[T - 1, -2:]) if S > 1 else alpha[T - 1, -1]
    grad = np.zeros((T, C))
    if logz == NEG_INF:
        return float(logz), grad
    with np.errstate(invalid="ignore"):
        post = alpha + beta - emit  # (T, S)
    for k in np.unique(ext):
        cols = post[:, ext == k]
        m = np.logaddexp.reduce(cols, axis=1)
        grad[:, k] = -np.exp(m - logz)
    return float(logz), grad


def ctc_forward_backward(logp, ext, blank):
    """Log-likelihood of the blank-interleaved target ``ext`` and its gradient.

    Returns ``(log_z, grad)`` where ``grad[t, k] = d(-log_z) / d logp[t, k]``.
    ``log_z`` is ``-inf`` when no alignment exists.
    """
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    ext = np.ascontiguousarray(ext, dtype=np.int64)
    if USE_NUMBA:
        logz, grad = _ctc_nb(logp, ext, int(blank))
        return float(logz), grad
    return _ctc_np(logp, ext, int(blank))


# ---------------------------------------------------------------------------
# Depthwise convolution on (N, W, H, C) tensors
# ---------------------------------------------------------------------------


@njit(cache=True)
def _dw_fwd_nb(xp, w, sw, sh, wo, ho):
    n_b, _, _, n_c = xp.shape
    kw, kh = w.shape[0], w.shape[1]
    out = np.zeros((n_b, wo, ho, n_c), dtype=xp.dtype)
    for b in range(n_b):
        for i in range(wo):
            for j in range(ho):
                for u in range(kw):
                    for v in range(kh):
                        xi = i * sw + u
                        yj = j * sh + v
                        for c in range(n_c):
                            out[b, i, j, c] += xp[b, xi, yj, c] * w[u, v, c]
    return out


@njit(cache=True)
def _dw_bwd_nb(xp, w, g, sw, sh):
    n_b, wo, ho, n_c = g.shape
    kw, kh = w.shape[0], w.shape[1]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for b in range(n_b):
        for i in range(wo):
            for j in range(ho):
                for u in range(kw):
                    for v in range(kh):
                        xi = i * sw + u
                        yj = j * sh + v
                        for c in range(n_c):
                            gv = g[b, i, j, c]
                            dxp[b, xi, yj, c] += gv * w[u, v, c]
                            dw[u, v, c] += gv * xp[b, xi, yj, c]
    return dxp, dw


def _dw_fwd_np(xp, w, sw, sh, wo, ho):
    kw, kh = w.shape[0], w.shape[1]
    out = np.zeros((xp.shape[0], wo, ho, xp.shape[3]), dtype=xp.dtype)
    for u in range(kw):
        for v in range(kh):
            out += xp[:, u : u + sw * wo : sw, v : v + sh * ho : sh, :] * w[u, v]
    return out


def _dw_bwd_np(xp, w, g, sw, sh):
    kw, kh = w.shape[0], w.shape[1]
    wo, ho = g.shape[1], g.shape[2]
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for u in range(kw):
        for v in range(kh):
            win = (slice(None), slice(u, u + sw * wo, sw), slice(v, v + sh * ho, sh))
            dxp[win] += g * w[u, v]
            dw[u, v] = np.einsum("bijc,bijc->c", g, xp[win])
    return dxp, dw


def depthwise_forward(xp, w, sw, sh, wo, ho):
    """Per-channel correlation of a padded (N, W, H, C) input with (kw, kh, C) taps."""
    if USE_NUMBA:
        return _dw_fwd_nb(np.ascontiguousarray(xp), np.ascontiguousarray(w), sw, sh, wo, ho)
    return _dw_fwd_np(xp, w, sw, sh, wo, ho)


def depthwise_backward(xp, w, g, sw, sh):
    if USE_NUMBA:
        return _dw_bwd_nb(
            np.ascontiguousarray(xp), np.ascontiguousarray(w), np.ascontiguousarray(g), sw, sh
        )
    return _dw_bwd_np(xp, w, g, sw, sh)


# ---------------------------------------------------------------------------
# Max pooling on (N, W, H, C) tensors; padded cells must hold -inf
# ---------------------------------------------------------------------------


@njit(cache=True)
def _pool_fwd_nb(xp, k, s, wo, ho):
    n_b, _, _, n_c = xp.shape
    out = np.empty((n_b, wo, ho, n_c), dtype=xp.dtype)
    arg = np.empty((n_b, wo, ho, n_c), dtype=np.int64)
    for b in range(n_b):
        for i in range(wo):
            for j in range(ho):
                for c in range(n_c):
                    best = -np.inf
                    where = 0
                    for u in range(k):
                        for v in range(k):
                            val = xp[b, i * s + u, j * s + v, c]
                            if val > best:
                                best = val
                                where = u * k + v
                    out[b, i, j, c] = best
                    arg[b, i, j, c] = where
    return out, arg


def _pool_fwd_np(xp, k, s, wo, ho):
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : s * (wo - 1) + 1 : s, : s * (ho - 1) + 1 : s]
    flat = win.reshape(win.shape[:4] + (k * k,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


@njit(cache=True)
def _pool_bwd_nb(g, arg, k, s, shape):
    dxp = np.zeros(shape, dtype=g.dtype)
    n_b, wo, ho, n_c = g.shape
    for b in range(n_b):
        for i in range(wo):
            for j in range(ho):
                for c in range(n_c):
                    a = arg[b, i, j, c]
                    dxp[b, i * s + a // k, j * s + a % k, c] += g[b, i, j, c]
    return dxp


def _pool_bwd_np(g, arg, k, s, shape):
    dxp = np.zeros(shape, dtype=g.dtype)
    n_b, wo, ho, n_c = g.shape
    bi, ii, jj, ci = np.indices((n_b, wo, ho, n_c), sparse=False)
    np.add.at(dxp, (bi, ii * s + arg // k, jj * s + arg % k, ci), g)
    return dxp


def maxpool_forward(xp, k, s, wo, ho):
    if USE_NUMBA:
        return _pool_fwd_nb(np.ascontiguousarray(xp), k, s, wo, ho)
    return _pool_fwd_np(xp, k, s, wo, ho)


def maxpool_backward(g, arg, k, s, shape):
    if USE_NUMBA:
        return _pool_bwd_nb(np.ascontiguousarray(g), np.ascontiguousarray(arg), k, s, shape)
    return _pool_bwd_np(g, arg, k, s, shape)


# ---------------------------------------------------------------------------
# Bilinear sampling of (H, W, C) images at arbitrary source coordinates
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bilinear_nb(img, sx, sy, clamp, fill):
    h, w, n_c = img.shape
    oh, ow = sx.shape
    out = np.empty((oh, ow, n_c), dtype=img.dtype)
    for r in range(oh):
        for q in range(ow):
            x = sx[r, q]
            y = sy[r, q]
            if not clamp and (x < -0.5 or x > w - 0.5 or y < -0.5 or y > h - 0.5):
                for c in range(n_c):
                    out[r, q, c] = fill
                continue
            x = min(max(x, 0.0), w - 1.0)
            y = min(max(y, 0.0), h - 1.0)
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = x - x0
            fy = y - y0
            for c in range(n_c):
                top = img[y0, x0, c] * (1.0 - fx) + img[y0, x1, c] * fx
                bot = img[y1, x0, c] * (1.0 - fx) + img[y1, x1, c] * fx
                out[r, q, c] = top * (1.0 - fy) + bot * fy
    return out


def _bilinear_np(img, sx, sy, clamp, fill):
    h, w, _ = img.shape
    outside = (sx < -0.5) | (sx > w - 0.5) | (sy < -0.5) | (sy > h - 0.5)
    x = np.clip(sx, 0.0, w - 1.0)
    y = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    if not clamp:
        out[outside] = fill
    return out


def bilinear_sample(img, sx, sy, clamp=True, fill=0.0):
    """Sample an (H, W, C) image at float pixel coordinates ``(sx, sy)``.

    With ``clamp`` the coordinates are clamped to the image (edge replication);
    otherwise samples farther than half a pixel outside get ``fill``.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    sx = np.ascontiguousarray(sx, dtype=np.float64)
    sy = np.ascontiguousarray(sy, dtype=np.float64)
    if USE_NUMBA:
        return _bilinear_nb(img, sx, sy, bool(clamp), float(fill))
    return _bilinear_np(img, sx, sy, bool(clamp), float(fill))
