"""Connectionist temporal classification: loss, gradient and decoders.

All probabilities stay in log space. The blank symbol is the last class.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import ShapeError, make_result

FULL_SYMBOLS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-"


class CTCInfeasibleError(ValueError):
    """The target needs more frames than the input provides."""


@dataclass(frozen=True)
class Alphabet:
    symbols: str = FULL_SYMBOLS

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")

    @property
    def blank(self):
        return len(self.symbols)

    @property
    def size(self):
        """Class count including the blank."""
        return len(self.symbols) + 1

    def encode(self, text):
        try:
            return [self.symbols.index(ch) for ch in text]
        except ValueError:
            bad = [ch for ch in text if ch not in self.symbols]
            raise ValueError(f"symbols {bad!r} not in alphabet {self.symbols!r}") from None

    def decode(self, labels):
        return "".join(self.symbols[i] for i in labels if i != self.blank)


def min_frames(labels):
    """Frames needed to emit ``labels``: one per symbol plus a blank per repeat."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def expand_with_blanks(labels, blank):
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def ctc_loss(logp, labels, blank=None):
    """Negative log-likelihood of ``labels`` under per-frame log-probabilities.

    ``logp`` is a (T, C) array; ``blank`` defaults to the last class. Returns
    ``(loss, grad)`` with ``grad`` the derivative of the loss with respect to
    ``logp``.
    """
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2:
        raise ShapeError(f"ctc_loss expects a (T, C) matrix, got {logp.shape}")
    steps, classes = logp.shape
    blank = classes - 1 if blank is None else blank
    labels = [int(v) for v in labels]
    if any(v == blank or not 0 <= v < classes for v in labels):
        raise ValueError("labels must be non-blank class indices")
    need = min_frames(labels)
    if need > steps:
        raise CTCInfeasibleError(f"target of length {len(labels)} needs {need} frames, input has {steps}")
    logz, grad = _kernels.ctc_forward_backward(logp, expand_with_blanks(labels, blank), blank)
    return -logz, grad


def ctc_loss_batch(logp, targets, blank=None):
    """Mean CTC loss over a batch as a differentiable op on an (N, T, C) Tensor."""
    data = logp.data
    n = data.shape[0]
    if len(targets) != n:
        raise ShapeError(f"{len(targets)} targets for a batch of {n}")
    grads = np.empty(data.shape, dtype=np.float64)
    total = 0.0
    for i, y in enumerate(targets):
        loss, g = ctc_loss(data[i], y, blank)
        total += loss
        grads[i] = g
    grads /= n
    grads = grads.astype(data.dtype)
    return make_result(np.asarray(total / n, dtype=data.dtype), (logp,), lambda g: (g * grads,))


def collapse(frames, blank):
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for f in frames:
        f = int(f)
        if f != prev and f != blank:
            out.append(f)
        prev = f
    return out


def ctc_greedy_decode(logp, blank=None):
    logp = np.asarray(logp)
    blank = logp.shape[-1] - 1 if blank is None else blank
    return collapse(logp.argmax(axis=-1), blank)


def ctc_beam_decode(logp, width=8, blank=None, return_score=False):
    """Prefix beam search keeping separate blank / non-blank ending mass per prefix."""
    if width < 1:
        raise ValueError("beam width must be >= 1")
    logp = np.asarray(logp, dtype=np.float64)
    steps, classes = logp.shape
    blank = classes - 1 if blank is None else blank
    ninf = -np.inf
    lae = np.logaddexp
    # prefix -> [log P(ends in blank), log P(ends in non-blank)]
    beams = {(): (0.0, ninf)}
    for t in range(steps):
        row = logp[t]
        nxt = {}

        def bump(prefix, pb, pnb):
            old = nxt.get(prefix)
            if old is None:
                nxt[prefix] = (pb, pnb)
            else:
                nxt[prefix] = (lae(old[0], pb), lae(old[1], pnb))

        for prefix, (pb, pnb) in beams.items():
            total = lae(pb, pnb)
            bump(prefix, total + row[blank], ninf)
            last = prefix[-1] if prefix else None
            if last is not None:
                bump(prefix, ninf, pnb + row[last])
            for k in range(classes):
                if k == blank:
                    continue
                if k == last:
                    bump(prefix + (k,), ninf, pb + row[k])
                else:
                    bump(prefix + (k,), ninf, total + row[k])
        ranked = sorted(nxt.items(), key=lambda kv: (-lae(*kv[1]), kv[0]))
        beams = dict(ranked[:width])
    best, (pb, pnb) = min(beams.items(), key=lambda kv: (-lae(*kv[1]), kv[0]))
    if return_score:
        return list(best), float(lae(pb, pnb))
    return list(best)
