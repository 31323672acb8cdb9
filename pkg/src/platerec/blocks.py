"""Composite building blocks and the two model assemblies.

The recognizer mirrors the layer table row by row on (W, H, C) maps:

    Concat                  (128, 32), (128, 32) -> (128, 32, 2)
    Conv + BN + LeakyReLU   (128, 32, 2)  -> (64, 16, 32)
    Conv + BN + LeakyReLU   (64, 16, 32)  -> (64, 16, 64)
    Xception x2, Inception-B x2            (64, 16, 64)
    Xception Reduce         (64, 16, 64)  -> (32, 8, 128)
    Xception x2, Inception-B x2, Xception x2   (32, 8, 128)
    Permute                 (32, 8, 128)  -> (8, 32, 128)
    GlobalAvgPool1D         (8, 32, 128)  -> (32, 128)
    Dropout 0.4
    BiLSTM + Dense          (32, 128)     -> (32, 38)
    BatchNorm, Softmax

``width`` scales every channel count; ``width=1.0`` is the full table.
"""

import numpy as np

from . import layers as L
from .ctc import Alphabet
from .tensor import ShapeError, Tensor

ALPHA = 0.1
INCEPTION_SCALE = 0.2


class Module:
    """Plain container: tensors, params and child modules found by attribute walk."""

    training = False

    def named_tensors(self, prefix=""):
        out = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_tensors(name + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.update(m.named_tensors(f"{name}.{i}."))
            elif hasattr(val, "__dataclass_fields__"):
                for f in val.__dataclass_fields__:
                    t = getattr(val, f)
                    if isinstance(t, Tensor):
                        out[f"{name}.{f}"] = t
        return out

    def parameters(self):
        return {k: t for k, t in self.named_tensors().items() if t.requires_grad}

    def children(self):
        for val in vars(self).values():
            if isinstance(val, Module):
                yield val
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                yield from val

    def train(self, mode=True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    def astype(self, dtype):
        """Cast every tensor in place (e.g. to float32 for fast inference)."""
        for t in self.named_tensors().values():
            t.data = t.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param_count(model):
    """Number of trainable scalars; running statistics are not counted."""
    if model is None:
        return 0
    if isinstance(model, Module):
        tensors = model.parameters().values()
    elif hasattr(model, "__dataclass_fields__"):
        tensors = [getattr(model, f) for f in model.__dataclass_fields__]
        tensors = [t for t in tensors if isinstance(t, Tensor) and t.requires_grad]
    else:
        tensors = list(model)
    return int(sum(t.data.size for t in tensors))


class ConvBN(Module):
    """Conv -> BN -> LeakyReLU."""

    def __init__(self, rng, cin, cout, kh, kw=None, stride=1, act=True):
        self.conv = L.ConvParams.init(rng, cin, cout, kh, kw, stride)
        self.bn = L.BNParams.init(cout)
        self.act = act

    def forward(self, x):
        y = L.batchnorm(L.conv2d(x, self.conv), self.bn, self.training)
        return L.leaky_relu(y, ALPHA) if self.act else y


class SeparableConv(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1):
        self.dw = L.DepthwiseParams.init(rng, cin, k, stride, bias=False)
        self.pw = L.ConvParams.init(rng, cin, cout, 1)

    def forward(self, x):
        return L.separable_conv2d(x, self.dw, self.pw)


class XceptionBlock(Module):
    """Shape-preserving residual: x + BN(sep(act(BN(sep(act(x))))))."""

    def __init__(self, rng, channels):
        self.sep1 = SeparableConv(rng, channels, channels)
        self.bn1 = L.BNParams.init(channels)
        self.sep2 = SeparableConv(rng, channels, channels)
        self.bn2 = L.BNParams.init(channels)
        self.channels = channels

    def forward(self, x):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"xception block expects {self.channels} channels, got {x.shape[-1]}")
        h = self.sep1(L.leaky_relu(x, ALPHA))
        h = L.batchnorm(h, self.bn1, self.training)
        h = self.sep2(L.leaky_relu(h, ALPHA))
        h = L.batchnorm(h, self.bn2, self.training)
        return L.add(x, h)


class InceptionBBlock(Module):
    """Residual block with a 1x1 branch and a factorized 1x7 -> 7x1 branch.

    Both branches produce C/2 channels; their concatenation is projected
    back to C by a linear 1x1 conv and added to the input after scaling.
    """

    def __init__(self, rng, channels, scale=INCEPTION_SCALE):
        if not 0.0 < scale <= 1.0:
            raise ValueError("residual scale must lie in (0, 1]")
        half = max(channels // 2, 1)
        self.branch_a = ConvBN(rng, channels, half, 1)
        self.branch_b1 = ConvBN(rng, channels, half, 1)
        self.branch_b2 = ConvBN(rng, half, half, 1, 7)
        self.branch_b3 = ConvBN(rng, half, half, 7, 1)
        self.merge = L.ConvParams.init(rng, 2 * half, channels, 1)
        self.scale = scale
        self.channels = channels

    def forward(self, x):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"inception-B block expects {self.channels} channels, got {x.shape[-1]}")
        a = self.branch_a(x)
        b = self.branch_b3(self.branch_b2(self.branch_b1(x)))
        m = L.conv2d(L.concat_channels(a, b), self.merge)
        return L.add(x, L.scale(m, self.scale))


class XceptionReduceBlock(Module):
    """Halve W and H, double C.

    concat(act(BN(sep3x3/2(x))), maxpool3x3/2(x)) + BN(conv1x1/2(x))
    """

    def __init__(self, rng, channels):
        self.sep = SeparableConv(rng, channels, channels, stride=2)
        self.bn = L.BNParams.init(channels)
        self.skip = L.ConvParams.init(rng, channels, 2 * channels, 1, stride=2, padding=0)
        self.skip_bn = L.BNParams.init(2 * channels)
        self.channels = channels

    def forward(self, x):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"reduce block expects {self.channels} channels, got {x.shape[-1]}")
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeError(f"reduce block needs even spatial dims, got {x.shape[1:3]}")
        conv = L.leaky_relu(L.batchnorm(self.sep(x), self.bn, self.training), ALPHA)
        pool = L.maxpool2d(x, 3, 2, padding=1)
        skip = L.batchnorm(L.conv2d(x, self.skip), self.skip_bn, self.training)
        return L.add(L.concat_channels(conv, pool), skip)


def _ch(base, width):
    return max(int(round(base * width)), 1)


class Encoder(Module):
    """Stem, first block stage and the reduce block; shared with the autoencoder."""

    def __init__(self, rng, width=1.0, in_channels=2):
        c1, c2 = _ch(32, width), _ch(64, width)
        self.stem1 = ConvBN(rng, in_channels, c1, 3, stride=2)
        self.stem2 = ConvBN(rng, c1, c2, 3, stride=1)
        self.stage1 = [XceptionBlock(rng, c2), XceptionBlock(rng, c2), InceptionBBlock(rng, c2), InceptionBBlock(rng, c2)]
        self.reduce = XceptionReduceBlock(rng, c2)
        self.out_channels = 2 * c2

    def forward(self, x, trace=None):
        rows = [("Conv + BN + LeakyReLU", self.stem1), ("Conv + BN + LeakyReLU", self.stem2)]
        rows += [(_row_name(b), b) for b in self.stage1]
        rows.append(("Xception Reduce Module", self.reduce))
        for name, layer in rows:
            x = layer(x)
            if trace is not None:
                trace.append((name, x.shape[1:]))
        return x


def _row_name(block):
    return {XceptionBlock: "Xception Module", InceptionBBlock: "Inception Module B"}[type(block)]


class Recognizer(Module):
    """The recognition network; ``forward`` returns (N, 32, classes) log-probabilities."""

    def __init__(self, alphabet=None, width=1.0, hidden=None, dropout=0.4, seed=0):
        rng = np.random.default_rng(seed)
        self.alphabet = alphabet or Alphabet()
        self.width = width
        self.encoder = Encoder(rng, width)
        c = self.encoder.out_channels
        self.stage2 = [
            XceptionBlock(rng, c),
            XceptionBlock(rng, c),
            InceptionBBlock(rng, c),
            InceptionBBlock(rng, c),
            XceptionBlock(rng, c),
            XceptionBlock(rng, c),
        ]
        hidden = hidden or max(c // 2, 1)
        self.lstm = L.LstmParams.init(rng, c, hidden)
        self.head = L.DenseParams.init(rng, 2 * hidden, self.alphabet.size, gain=0.1)
        self.out_bn = L.BNParams.init(self.alphabet.size)
        self.dropout = dropout
        self._rng = np.random.default_rng(seed + 1)

    input_shape = (128, 32, 2)

    def reseed(self, seed):
        self._rng = np.random.default_rng(seed)

    def forward(self, x, trace=None):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.head.weight.dtype))
        if x.ndim == 3:
            x = L.reshape(x, (1,) + x.shape)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"recognizer input must be {self.input_shape}, got {x.shape[1:]}")
        if trace is not None:
            trace.append(("Concat", x.shape[1:]))
        x = self.encoder(x, trace)
        for block in self.stage2:
            x = block(x)
            if trace is not None:
                trace.append((_row_name(block), x.shape[1:]))
        x = L.permute(x, (0, 2, 1, 3))
        if trace is not None:
            trace.append(("Permute", x.shape[1:]))
        x = L.global_avg_pool_axis(x, 1)
        if trace is not None:
            trace.append(("GlobalAvgPool1D", x.shape[1:]))
        x = L.dropout(x, self.dropout, self._rng, self.training)
        x = L.dense(L.bilstm(x, self.lstm), self.head)
        if trace is not None:
            trace.append(("LSTM", x.shape[1:]))
        x = L.batchnorm(x, self.out_bn, self.training)
        return L.log_softmax_rows(x)


class CornerModel(Module):
    """Four stride-2 conv stages and a dense head -> 8 sigmoid outputs.

    Output order is TL, TR, BR, BL as interleaved (x, y) pairs normalized by
    image width and height.
    """

    def __init__(self, seed=0, channels=(16, 32, 64, 64), zero=False):
        rng = np.random.default_rng(seed)
        cin = 2
        self.stages = []
        for c in channels:
            self.stages.append(ConvBN(rng, cin, c, 3, stride=2))
            cin = c
        self.head = L.DenseParams.init(rng, 8 * 2 * cin, 8, gain=0.1, zero=zero)
        if zero:
            for st in self.stages:
                st.conv.weight.data[:] = 0.0

    input_shape = (128, 32, 2)

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.head.weight.dtype))
        if x.ndim == 3:
            x = L.reshape(x, (1,) + x.shape)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"corner model input must be {self.input_shape}, got {x.shape[1:]}")
        for st in self.stages:
            x = st(x)
        x = L.reshape(x, (x.shape[0], -1))
        return L.sigmoid(L.dense(x, self.head))
