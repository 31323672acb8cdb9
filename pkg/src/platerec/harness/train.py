"""Training loops: autoencoder pretraining, CTC recognizer, corner regressor."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import layers as L
from ..blocks import Encoder, Module
from ..ctc import ctc_greedy_decode, ctc_loss_batch, min_frames
from ..platelang import augment, to_two_channel, validate
from ..tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: bool = True
    augment: object = None  # AugmentConfig applied on the fly, or None
    seed: int = 0
    rectify: bool = False
    probe_size: int = 256

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr >= 0 are required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment coefficients must lie in [0, 1)")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


@dataclass
class TrainResult:
    model: Module
    losses: list = field(default_factory=list)  # probe loss per epoch
    batch_losses: list = field(default_factory=list)  # mean minibatch loss per epoch
    val_accuracy: list = field(default_factory=list)


def _inputs(samples, cfg=None, epoch=0):
    """Two-channel network inputs, augmenting each sample from its own derived seed."""
    out = np.empty((len(samples),) + (128, 32, 2))
    for i, s in enumerate(samples):
        img = s.image
        if cfg is not None and cfg.augment is not None:
            img = augment(img, cfg.augment, np.random.default_rng([cfg.seed, epoch, i]))
        out[i] = to_two_channel(img)
    return out


def _bn_snapshot(model):
    return {k: t.data.copy() for k, t in model.named_tensors().items() if not t.requires_grad}


def _bn_restore(model, snap):
    for k, t in model.named_tensors().items():
        if k in snap:
            t.data = snap[k]


def check_labels(labels, alphabet, steps=32):
    encoded = []
    for text in labels:
        if validate(text) is None:
            raise ValueError(f"label {text!r} matches no plate template")
        ids = alphabet.encode(text)
        if min_frames(ids) > steps:
            raise ValueError(f"label {text!r} needs more than {steps} frames")
        encoded.append(ids)
    return encoded


def probe_loss(model, x, targets, batch_size):
    """Batch-statistics CTC loss without dropout; leaves running stats untouched."""
    snap = _bn_snapshot(model)
    drop = model.dropout
    model.dropout = 0.0
    model.train()
    total = 0.0
    for lo in range(0, len(x), batch_size):
        out = model(Tensor(x[lo : lo + batch_size]))
        total += float(ctc_loss_batch(out, targets[lo : lo + batch_size]).data) * len(out.data)
    model.dropout = drop
    _bn_restore(model, snap)
    model.eval()
    return total / len(x)


def predict_texts(model, x, batch_size=64):
    model.eval()
    texts = []
    for lo in range(0, len(x), batch_size):
        lp = model(Tensor(x[lo : lo + batch_size])).data
        texts += [model.alphabet.decode(ctc_greedy_decode(row)) for row in lp]
    return texts


def train_recognizer(model, data, cfg=None, val=None, callback=None):
    """Minimize mean CTC loss with Adam.

    ``data`` and ``val`` are sequences of samples with ``.image`` and
    ``.label``. The loss curve records, after each epoch, the loss on a fixed
    probe subset of the clean training inputs, so it depends only on the
    weights (a zero learning rate gives a flat curve).
    """
    cfg = cfg or TrainConfig()
    targets = check_labels([s.label for s in data], model.alphabet)
    clean = _inputs(data)
    probe_n = min(cfg.probe_size, len(data))
    probe_x, probe_t = clean[:probe_n], targets[:probe_n]
    val_x = _inputs(val) if val else None

    result = TrainResult(model)
    params = list(model.parameters().values())
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    saved_dropout = model.dropout
    if not cfg.dropout:
        model.dropout = 0.0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        model.reseed(int(rng.integers(2**31)))
        x = clean if cfg.augment is None else _inputs(data, cfg, epoch)
        order = rng.permutation(len(data))
        model.train()
        running, batches = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            out = model(Tensor(x[idx]))
            loss = ctc_loss_batch(out, [targets[i] for i in idx])
            loss.backward()
            opt.step()
            running += float(loss.data)
            batches += 1
        model.eval()
        result.batch_losses.append(running / max(batches, 1))
        result.losses.append(probe_loss(model, probe_x, probe_t, cfg.batch_size))
        if val_x is not None:
            preds = predict_texts(model, val_x)
            acc = float(np.mean([p == s.label for p, s in zip(preds, val)]))
            result.val_accuracy.append(acc)
        log.info(
            "epoch %d loss=%.4f probe=%.4f val=%s",
            epoch + 1,
            result.batch_losses[-1],
            result.losses[-1],
            result.val_accuracy[-1] if result.val_accuracy else "-",
        )
        if callback is not None and callback(epoch, result) is False:
            break
    model.dropout = saved_dropout
    model.eval()
    return result


# ---------------------------------------------------------------------------
# Autoencoder pretraining
# ---------------------------------------------------------------------------


class Decoder(Module):
    """Mirror of the encoder: two nearest-upsample + conv stages back to (128, 32, 2)."""

    def __init__(self, rng, in_channels):
        mid = max(in_channels // 2, 1)
        low = max(in_channels // 4, 1)
        self.up1 = L.ConvParams.init(rng, in_channels, mid, 3)
        self.bn1 = L.BNParams.init(mid)
        self.up2 = L.ConvParams.init(rng, mid, low, 3)
        self.bn2 = L.BNParams.init(low)
        self.out = L.ConvParams.init(rng, low, 2, 3)

    def forward(self, z):
        h = L.upsample_nearest(z, 2)
        h = L.leaky_relu(L.batchnorm(L.conv2d(h, self.up1), self.bn1, self.training), 0.1)
        h = L.upsample_nearest(h, 2)
        h = L.leaky_relu(L.batchnorm(L.conv2d(h, self.up2), self.bn2, self.training), 0.1)
        return L.sigmoid(L.conv2d(h, self.out))


class Autoencoder(Module):
    def __init__(self, encoder, seed=0):
        self.encoder = encoder
        self.decoder = Decoder(np.random.default_rng(seed), encoder.out_channels)

    def forward(self, x):
        return self.decoder(self.encoder(x))


def reconstruction_mse(ae, x, batch_size=32):
    ae.eval()
    total = 0.0
    for lo in range(0, len(x), batch_size):
        xb = x[lo : lo + batch_size]
        total += float(L.mse(ae(Tensor(xb)), xb).data) * len(xb)
    return total / len(x)


def pretrain_autoencoder(encoder, images, cfg=None, decoder_seed=0):
    """Unsupervised reconstruction training of ``encoder`` through a mirrored decoder.

    ``images`` are raw plate images (any size) or ready (N, 128, 32, 2)
    arrays. Returns ``(encoder, mse_per_epoch)``; mse is measured in
    inference mode after each epoch.
    """
    cfg = cfg or TrainConfig()
    if isinstance(images, np.ndarray) and images.ndim == 4:
        x = images
    else:
        if len(images) == 0:
            raise ValueError("pretraining needs at least one image")
        x = np.stack([to_two_channel(getattr(im, "image", im)) for im in images])
    if len(x) == 0:
        raise ValueError("pretraining needs at least one image")
    ae = Autoencoder(encoder, decoder_seed)
    opt = Adam(list(ae.parameters().values()), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    curve = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(x))
        ae.train()
        for lo in range(0, len(x), cfg.batch_size):
            xb = x[order[lo : lo + cfg.batch_size]]
            loss = L.mse(ae(Tensor(xb)), xb)
            loss.backward()
            opt.step()
        curve.append(reconstruction_mse(ae, x, cfg.batch_size))
        log.info("pretrain epoch %d mse=%.5f", epoch + 1, curve[-1])
    encoder.eval()
    return encoder, curve


def transfer_encoder(encoder, model):
    """Copy pretrained encoder tensors into ``model.encoder``."""
    src = encoder.named_tensors()
    for name, t in model.encoder.named_tensors().items():
        t.data = src[name].data.copy()
    return model


# ---------------------------------------------------------------------------
# Corner regressor
# ---------------------------------------------------------------------------


def normalized_corners(quad, width=128, height=32):
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    return (q / np.array([width - 1, height - 1])).reshape(8)


def train_corner_model(model, data, cfg=None):
    """Mean-squared corner regression in normalized coordinates.

    Returns ``(model, mse_per_epoch)``.
    """
    cfg = cfg or TrainConfig()
    data = [s for s in data if getattr(s, "quad", None) is not None]
    if not data:
        raise ValueError("corner training needs samples carrying corner quads")
    x = _inputs(data)
    y = np.stack([normalized_corners(s.quad, *s.image.shape[1::-1]) for s in data])
    opt = Adam(list(model.parameters().values()), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    curve = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(x))
        model.train()
        total = 0.0
        for lo in range(0, len(x), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = L.mse(model(Tensor(x[idx])), y[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        curve.append(total / len(x))
        log.info("corner epoch %d mse=%.6f", epoch + 1, curve[-1])
    model.eval()
    return model, curve


def predict_corners(model, images, batch_size=64):
    """Corner quads in pixel coordinates for a list of (H, W[, 3]) images."""
    model.eval()
    x = np.stack([to_two_channel(im) for im in images])
    out = []
    for lo in range(0, len(x), batch_size):
        out.append(model(Tensor(x[lo : lo + batch_size])).data)
    pred = np.concatenate(out).reshape(-1, 4, 2)
    sizes = np.array([[im.shape[1] - 1, im.shape[0] - 1] for im in images], dtype=np.float64)
    return pred * sizes[:, None, :]


def new_encoder(width=1.0, seed=0):
    return Encoder(np.random.default_rng(seed), width)
