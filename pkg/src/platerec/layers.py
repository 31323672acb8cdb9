"""Primitive layers with forward and backward passes.

Feature maps use the (N, W, H, C) layout so that a sample's shape reads
exactly like the recognizer's layer table: a 128x32 two-channel plate is
``(128, 32, 2)``. Convolution weights keep the conventional
``(out_ch, in_ch, kh, kw)`` order; strides and explicit paddings are
``(along_h, along_w)`` pairs to match.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .tensor import ShapeError, Tensor, make_result, parameter


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    weight: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor  # (out_ch,)
    stride: tuple = (1, 1)
    padding: object = "same"

    def __post_init__(self):
        o, _, kh, kw = self.weight.shape
        if o < 1:
            raise ShapeError("conv needs at least one output channel")
        if self.bias.shape != (o,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({o},)")
        self.stride = _pair(self.stride)
        if min(self.stride) < 1:
            raise ValueError("stride must be positive")
        if self.padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
            raise ShapeError("'same' padding needs odd kernel sizes")

    @classmethod
    def init(cls, rng, in_ch, out_ch, kh, kw=None, stride=1, padding="same", zero=False):
        kw = kh if kw is None else kw
        fan_in = in_ch * kh * kw
        w = np.zeros((out_ch, in_ch, kh, kw)) if zero else rng.normal(
            0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, kh, kw)
        )
        return cls(parameter(w), parameter(np.zeros(out_ch)), stride, padding)

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]

    def pads(self):
        if self.padding == "same":
            kh, kw = self.kernel
            return (kh - 1) // 2, (kw - 1) // 2
        return _pair(self.padding)


@dataclass
class DepthwiseParams:
    weight: Tensor  # (channels, kh, kw)
    bias: Tensor = None  # (channels,) or None
    stride: tuple = (1, 1)
    padding: object = "same"

    def __post_init__(self):
        c, kh, kw = self.weight.shape
        if self.bias is not None and self.bias.shape != (c,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({c},)")
        self.stride = _pair(self.stride)
        if self.padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
            raise ShapeError("'same' padding needs odd kernel sizes")

    @classmethod
    def init(cls, rng, channels, k=3, stride=1, padding="same", zero=False, bias=True):
        w = np.zeros((channels, k, k)) if zero else rng.normal(0.0, np.sqrt(2.0 / (k * k)), (channels, k, k))
        return cls(parameter(w), parameter(np.zeros(channels)) if bias else None, stride, padding)

    @property
    def channels(self):
        return self.weight.shape[0]

    def pads(self):
        if self.padding == "same":
            _, kh, kw = self.weight.shape
            return (kh - 1) // 2, (kw - 1) // 2
        return _pair(self.padding)


@dataclass
class BNParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")

    @classmethod
    def init(cls, channels, eps=1e-5, momentum=0.9):
        return cls(
            parameter(np.ones(channels)),
            parameter(np.zeros(channels)),
            Tensor(np.zeros(channels)),
            Tensor(np.ones(channels)),
            eps,
            momentum,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


@dataclass
class LstmParams:
    """Both directions of a bidirectional LSTM.

    Each direction stores its four gates fused row-wise in the order
    input, forget, cell, output: ``w_* (4*hidden, input_dim + hidden)``.
    """

    w_fwd: Tensor
    b_fwd: Tensor
    w_bwd: Tensor
    b_bwd: Tensor
    hidden_size: int = field(default=0)

    def __post_init__(self):
        rows = self.w_fwd.shape[0]
        if rows % 4:
            raise ShapeError("fused gate rows must be a multiple of 4")
        if not self.hidden_size:
            self.hidden_size = rows // 4
        if self.w_bwd.shape != self.w_fwd.shape:
            raise ShapeError("forward and backward gate weights differ in shape")

    @classmethod
    def init(cls, rng, input_dim, hidden_size):
        fan = input_dim + hidden_size
        lim = 1.0 / np.sqrt(hidden_size)

        def one():
            w = rng.uniform(-lim, lim, (4 * hidden_size, fan))
            b = np.zeros(4 * hidden_size)
            b[hidden_size : 2 * hidden_size] = 1.0
            return parameter(w), parameter(b)

        wf, bf = one()
        wb, bb = one()
        return cls(wf, bf, wb, bb, hidden_size)

    @property
    def input_dim(self):
        return self.w_fwd.shape[1] - self.hidden_size

    def gate(self, name, direction="fwd"):
        """Return the (hidden, input+hidden) weight rows of one gate."""
        idx = ("input", "forget", "cell", "output").index(name)
        w = self.w_fwd if direction == "fwd" else self.w_bwd
        h = self.hidden_size
        return w.data[idx * h : (idx + 1) * h]


@dataclass
class DenseParams:
    weight: Tensor  # (out_dim, in_dim)
    bias: Tensor  # (out_dim,)

    @classmethod
    def init(cls, rng, in_dim, out_dim, gain=1.0, zero=False):
        w = np.zeros((out_dim, in_dim)) if zero else rng.normal(0.0, gain / np.sqrt(in_dim), (out_dim, in_dim))
        return cls(parameter(w), parameter(np.zeros(out_dim)))


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x, c):
    c = float(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def sum_all(x):
    return make_result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape),))


def mean_all(x):
    n = x.data.size
    return make_result(np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, x.shape),))


def weighted_sum(x, w):
    """sum(x * w) for a constant array ``w``; handy for gradient checks."""
    w = np.asarray(w, dtype=x.dtype)
    return make_result(np.asarray((x.data * w).sum()), (x,), lambda g: (g * w,))


def mse(x, target):
    target = np.asarray(target, dtype=x.dtype)
    if target.shape != x.shape:
        raise ShapeError(f"mse: target {target.shape} vs prediction {x.shape}")
    diff = x.data - target
    n = diff.size
    return make_result(np.asarray((diff**2).mean()), (x,), lambda g: (g * 2.0 * diff / n,))


def reshape(x, shape):
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def leaky_relu(x, alpha=0.1):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    pos = x.data >= 0
    out = np.where(pos, x.data, alpha * x.data)
    return make_result(out, (x,), lambda g: (np.where(pos, g, alpha * g),))


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def permute(x, axes):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat_channels(*tensors):
    """Concatenate along the last axis. Bare 2-D planes are stacked as channels."""
    if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)):
        tensors = tuple(tensors[0])
    planes = [t.ndim == 2 for t in tensors]
    if all(planes):
        tensors = tuple(reshape(t, t.shape + (1,)) for t in tensors)
    base = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != base:
            raise ShapeError(f"concat: non-channel dims {t.shape[:-1]} != {base}")
    sizes = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=-1)
    return make_result(out, tensors, lambda g: tuple(np.split(g, cuts, axis=-1)))


def global_avg_pool_axis(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    axis = axis % x.ndim
    n = x.shape[axis]
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape),)

    return make_result(x.data.mean(axis=axis), (x,), bw)


def upsample_nearest(x, factor=2):
    """Repeat each spatial cell of an (N, W, H, C) map ``factor`` times per axis."""
    f = int(factor)
    out = x.data.repeat(f, axis=1).repeat(f, axis=2)
    n, w, h, c = x.shape

    def bw(g):
        return (g.reshape(n, w, f, h, f, c).sum(axis=(2, 4)),)

    return make_result(out, (x,), bw)


def dropout(x, ratio, rng=None, training=False):
    if not 0.0 <= ratio < 1.0:
        raise ValueError("dropout ratio must lie in [0, 1)")
    if not training or ratio == 0.0:
        return x
    keep = (rng.random(x.shape) >= ratio) / (1.0 - ratio)
    keep = keep.astype(x.dtype)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


def softmax_rows(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make_result(p, (x,), bw)


def log_softmax_rows(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (x,), bw)


# ---------------------------------------------------------------------------
# Convolutions and pooling on (N, W, H, C)
# ---------------------------------------------------------------------------


def _check_map(x, what):
    if x.ndim != 4:
        raise ShapeError(f"{what}: expected an (N, W, H, C) map, got shape {x.shape}")


def _out_size(n, pad, k, s):
    return (n + 2 * pad - k) // s + 1


def _pad_map(a, pw, ph, value=0.0):
    if pw == 0 and ph == 0:
        return a
    return np.pad(a, ((0, 0), (pw, pw), (ph, ph), (0, 0)), constant_values=value)


def conv2d(x, p):
    """Dense 2-D convolution (cross-correlation) of an (N, W, H, C) map."""
    _check_map(x, "conv2d")
    o, cin, kh, kw = p.weight.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, weights expect {cin}")
    ph, pw = p.pads()
    sh, sw = p.stride
    n, width, height, _ = x.shape
    wo, ho = _out_size(width, pw, kw, sw), _out_size(height, ph, kh, sh)
    if wo < 1 or ho < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {width}x{height}")

    xp = _pad_map(x.data, pw, ph)
    if kh == 1 and kw == 1:
        cols = xp[:, ::sw, ::sh, :][:, :wo, :ho, :].reshape(-1, cin)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kw, kh), axis=(1, 2))
        win = win[:, : sw * (wo - 1) + 1 : sw, : sh * (ho - 1) + 1 : sh]
        cols = win.reshape(n * wo * ho, cin * kw * kh)
    wm = p.weight.data.transpose(0, 1, 3, 2).reshape(o, -1)
    out = (cols @ wm.T + p.bias.data).reshape(n, wo, ho, o)

    def bw(g):
        gm = g.reshape(-1, o)
        dw = (gm.T @ cols).reshape(o, cin, kw, kh).transpose(0, 1, 3, 2)
        db = gm.sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = gm @ wm
            dxp = np.zeros_like(xp)
            if kh == 1 and kw == 1:
                dxp[:, : sw * wo : sw, : sh * ho : sh, :] += dcols.reshape(n, wo, ho, cin)
            else:
                dcols = dcols.reshape(n, wo, ho, cin, kw, kh)
                for u in range(kw):
                    for v in range(kh):
                        dxp[:, u : u + sw * wo : sw, v : v + sh * ho : sh, :] += dcols[..., u, v]
            dx = dxp[:, pw : pw + width, ph : ph + height, :]
        return dx, dw, db

    return make_result(out, (x, p.weight, p.bias), bw)


def depthwise_conv2d(x, p):
    """Per-channel spatial convolution (depth multiplier 1)."""
    _check_map(x, "depthwise_conv2d")
    c, kh, kw = p.weight.shape
    if x.shape[3] != c:
        raise ShapeError(f"depthwise_conv2d: input has {x.shape[3]} channels, params have {c}")
    ph, pw = p.pads()
    sh, sw = p.stride
    _, width, height, _ = x.shape
    wo, ho = _out_size(width, pw, kw, sw), _out_size(height, ph, kh, sh)
    if wo < 1 or ho < 1:
        raise ShapeError("depthwise_conv2d: kernel larger than padded input")
    xp = _pad_map(x.data, pw, ph)
    taps = np.ascontiguousarray(p.weight.data.transpose(2, 1, 0))  # (kw, kh, C)
    out = _kernels.depthwise_forward(xp, taps, sw, sh, wo, ho)
    if p.bias is not None:
        out += p.bias.data

    def bw(g):
        dxp, dtaps = _kernels.depthwise_backward(xp, taps, g, sw, sh)
        dx = dxp[:, pw : pw + width, ph : ph + height, :]
        return dx, dtaps.transpose(2, 1, 0), g.sum(axis=(0, 1, 2))

    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return make_result(out, parents, bw)


def separable_conv2d(x, dw, pw):
    """Depthwise convolution followed by a 1x1 pointwise convolution.

    Conventionally the depthwise stage has no bias of its own; the pointwise
    bias absorbs it.
    """
    if pw.kernel != (1, 1):
        raise ShapeError(f"separable_conv2d: pointwise kernel must be 1x1, got {pw.kernel}")
    if pw.weight.shape[1] != dw.channels:
        raise ShapeError("separable_conv2d: pointwise in_ch differs from depthwise channels")
    return conv2d(depthwise_conv2d(x, dw), pw)


def maxpool2d(x, k, stride, padding=0):
    _check_map(x, "maxpool2d")
    if k < 1 or stride < 1:
        raise ValueError("pool size and stride must be >= 1")
    n, width, height, c = x.shape
    if k > width + 2 * padding or k > height + 2 * padding:
        raise ShapeError(f"maxpool2d: window {k} larger than input {width}x{height}")
    wo, ho = _out_size(width, padding, k, stride), _out_size(height, padding, k, stride)
    xp = _pad_map(x.data, padding, padding, value=-np.inf)
    out, arg = _kernels.maxpool_forward(xp, k, stride, wo, ho)

    def bw(g):
        dxp = _kernels.maxpool_backward(g, arg, k, stride, xp.shape)
        return (dxp[:, padding : padding + width, padding : padding + height, :],)

    return make_result(out, (x,), bw)


def batchnorm(x, p, training=False):
    """Batch normalization over every axis but the last (channel) one.

    Training mode normalizes by the biased batch statistics and updates the
    running estimates in place: ``r = momentum * r + (1 - momentum) * batch``.
    """
    c = p.channels
    if x.shape[-1] != c:
        raise ShapeError(f"batchnorm: {x.shape[-1]} channels vs {c} parameters")
    axes = tuple(range(x.ndim - 1))
    gamma, beta = p.gamma.data, p.beta.data
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = p.momentum
        p.running_mean.data = m * p.running_mean.data + (1.0 - m) * mean
        p.running_var.data = m * p.running_var.data + (1.0 - m) * var
    else:
        mean = p.running_mean.data
        var = p.running_var.data
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = (x.data - mean) * inv
    out = gamma * xhat + beta
    count = x.data.size // c

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma
        if training:
            dx = inv / count * (count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return make_result(out, (x, p.gamma, p.beta), bw)


def dense(x, p):
    out_dim, in_dim = p.weight.shape
    if x.shape[-1] != in_dim:
        raise ShapeError(f"dense: input width {x.shape[-1]} != {in_dim}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, in_dim)
    out = (flat @ p.weight.data.T + p.bias.data).reshape(lead + (out_dim,))

    def bw(g):
        gm = g.reshape(-1, out_dim)
        dx = (gm @ p.weight.data).reshape(x.shape)
        return dx, gm.T @ flat, gm.sum(axis=0)

    return make_result(out, (x, p.weight, p.bias), bw)


# ---------------------------------------------------------------------------
# Bidirectional LSTM
# ---------------------------------------------------------------------------


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _lstm_dir(xs, w, b, hidden, reverse):
    """Run one direction over (N, T, F); returns outputs and the tape for BPTT."""
    n, steps, _ = xs.shape
    h = np.zeros((n, hidden), dtype=xs.dtype)
    c = np.zeros((n, hidden), dtype=xs.dtype)
    out = np.empty((n, steps, hidden), dtype=xs.dtype)
    tape = []
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        xh = np.concatenate([xs[:, t], h], axis=1)
        z = xh @ w.T + b
        i = _sig(z[:, :hidden])
        f = _sig(z[:, hidden : 2 * hidden])
        gg = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = _sig(z[:, 3 * hidden :])
        c_prev = c
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        h = o * tc
        out[:, t] = h
        tape.append((t, xh, i, f, gg, o, c_prev, tc))
    return out, tape


def _lstm_dir_back(gout, tape, w, hidden, feat):
    n = gout.shape[0]
    dw = np.zeros_like(w)
    db = np.zeros(w.shape[0], dtype=w.dtype)
    dx = np.zeros(gout.shape[:2] + (feat,), dtype=gout.dtype)
    dh_next = np.zeros((n, hidden), dtype=gout.dtype)
    dc_next = np.zeros((n, hidden), dtype=gout.dtype)
    for t, xh, i, f, gg, o, c_prev, tc in reversed(tape):
        dh = gout[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * gg * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - gg * gg), do * o * (1.0 - o)],
            axis=1,
        )
        dc_next = dc * f
        dw += dz.T @ xh
        db += dz.sum(axis=0)
        dxh = dz @ w
        dx[:, t] = dxh[:, :feat]
        dh_next = dxh[:, feat:]
    return dx, dw, db


def bilstm(x, p):
    """Bidirectional LSTM over (N, T, F) or (T, F); output width 2 * hidden."""
    squeeze = x.ndim == 2
    xs = x.data[None] if squeeze else x.data
    if xs.ndim != 3:
        raise ShapeError(f"bilstm: expected (N, T, F), got {x.shape}")
    feat = xs.shape[2]
    if feat != p.input_dim:
        raise ShapeError(f"bilstm: feature dim {feat} != {p.input_dim}")
    hs = p.hidden_size
    of, tf = _lstm_dir(xs, p.w_fwd.data, p.b_fwd.data, hs, reverse=False)
    ob, tb = _lstm_dir(xs, p.w_bwd.data, p.b_bwd.data, hs, reverse=True)
    out = np.concatenate([of, ob], axis=2)
    if squeeze:
        out = out[0]

    def bw(g):
        g3 = g[None] if squeeze else g
        dxf, dwf, dbf = _lstm_dir_back(g3[..., :hs], tf, p.w_fwd.data, hs, feat)
        dxb, dwb, dbb = _lstm_dir_back(g3[..., hs:], tb, p.w_bwd.data, hs, feat)
        dx = dxf + dxb
        if squeeze:
            dx = dx[0]
        return dx, dwf, dbf, dwb, dbb

    return make_result(out, (x, p.w_fwd, p.b_fwd, p.w_bwd, p.b_bwd), bw)
