"""Inference path, majority vote, accuracy protocols and throughput measurement."""

import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..ctc import ctc_beam_decode, ctc_greedy_decode
from ..imageio import read_image
from ..platelang import to_two_channel, validate
from ..rectify import DegenerateQuadError, SingularTransformError, rectify_plate
from ..tensor import Tensor
from .train import predict_corners


@dataclass(frozen=True)
class Prediction:
    text: str
    confidence: float = 0.0
    grammar_ok: bool = False

    def __str__(self):
        return self.text


def _decode(model, lp, beam_width):
    blank = lp.shape[-1] - 1
    if beam_width and beam_width > 1:
        labels = ctc_beam_decode(lp, beam_width, blank)
    else:
        labels = ctc_greedy_decode(lp, blank)
    text = model.alphabet.decode(labels)
    conf = float(np.exp(lp.max(axis=-1)).mean())
    return Prediction(text, conf, validate(text) is not None)


def _rectify_or_keep(img, quad):
    try:
        return rectify_plate(img, quad)
    except (DegenerateQuadError, SingularTransformError):
        return img  # unusable corner estimate: recognize the crop as given


def prepare(images, rectify=False, corner_model=None):
    """Optionally rectify, then build (N, 128, 32, 2) inputs."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if rectify:
        if corner_model is None:
            raise ValueError("rectify=True needs a corner model")
        quads = predict_corners(corner_model, images)
        images = [_rectify_or_keep(im, q) for im, q in zip(images, quads)]
    return np.stack([to_two_channel(im) for im in images])


def recognize_batch(model, images, rectify=False, corner_model=None, beam_width=0, batch_size=64):
    model.eval()
    x = prepare(images, rectify, corner_model)
    preds = []
    for lo in range(0, len(x), batch_size):
        lp = model(Tensor(x[lo : lo + batch_size])).data
        preds += [_decode(model, row, beam_width) for row in lp]
    return preds


def recognize(model, img, rectify=False, corner_model=None, beam_width=0):
    """Recognize one plate image; non-grammatical output is returned with ``grammar_ok=False``."""
    return recognize_batch(model, [img], rectify, corner_model, beam_width)[0]


def recognize_logprobs(model, logp, beam_width=0):
    """Decode an already computed (T, C) log-probability matrix."""
    return _decode(model, np.asarray(logp, dtype=np.float64), beam_width)


def majority_vote(predictions):
    """Plurality winner; ties go to the higher mean confidence, then the smaller string."""
    preds = [p if isinstance(p, Prediction) else Prediction(str(p)) for p in predictions]
    if not preds:
        raise ValueError("majority vote over an empty list")
    counts = Counter(p.text for p in preds)
    conf = defaultdict(list)
    for p in preds:
        conf[p.text].append(p.confidence)
    best = min(counts, key=lambda t: (-counts[t], -float(np.mean(conf[t])), t))
    return Prediction(best, float(np.mean(conf[best])), validate(best) is not None)


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class EvalReport:
    total: int
    correct: int
    char_errors: int
    char_total: int
    groups: int = 0
    groups_correct: int = 0
    images_per_sec: float = 0.0
    failures: list = field(default_factory=list)  # (image, truth, prediction)

    @property
    def plate_accuracy(self):
        return self.correct / self.total if self.total else 0.0

    @property
    def char_accuracy(self):
        if not self.char_total:
            return 0.0
        return max(0.0, 1.0 - self.char_errors / self.char_total)

    @property
    def group_accuracy(self):
        return self.groups_correct / self.groups if self.groups else 0.0

    def records(self):
        """Report as key=value lines (summary first, then one line per failure)."""
        head = (
            f"kind=summary total={self.total} correct={self.correct} "
            f"plate_accuracy={self.plate_accuracy:.4f} char_accuracy={self.char_accuracy:.4f} "
            f"groups={self.groups} groups_correct={self.groups_correct} "
            f"group_accuracy={self.group_accuracy:.4f} images_per_sec={self.images_per_sec:.2f}"
        )
        lines = [head]
        for img, truth, pred in self.failures:
            lines.append(f"kind=failure image={img} truth={truth} prediction={pred or '<empty>'}")
        return lines


def score(truths, preds, names=None, groups=None):
    """Accuracy bookkeeping for aligned truth / prediction lists."""
    names = names if names is not None else [str(i) for i in range(len(truths))]
    texts = [str(p) for p in preds]
    correct = sum(t == p for t, p in zip(truths, texts))
    errs = sum(edit_distance(t, p) for t, p in zip(truths, texts))
    rep = EvalReport(len(truths), correct, errs, sum(len(t) for t in truths))
    rep.failures = [(n, t, p) for n, t, p in zip(names, truths, texts) if t != p]
    if groups is not None:
        by = defaultdict(list)
        for g, t, p in zip(groups, truths, preds):
            if g is not None:
                by[g].append((t, p))
        for members in by.values():
            truth = Counter(t for t, _ in members).most_common(1)[0][0]
            rep.groups += 1
            rep.groups_correct += majority_vote([p for _, p in members]).text == truth
    return rep


def evaluate(model, samples, rectify=False, corner_model=None, beam_width=0, batch_size=64):
    """Plate, character and grouped accuracy plus throughput over labeled samples.

    ``samples`` are objects with ``.image`` (array) or ``.path`` plus
    ``.label`` and an optional ``.group``. Images are loaded before timing.
    """
    images, names = [], []
    for i, s in enumerate(samples):
        img = getattr(s, "image", None)
        if img is None:
            img = read_image(s.path)
            names.append(str(s.path))
        else:
            names.append(str(getattr(s, "path", i)))
        images.append(img)
    truths = [s.label for s in samples]
    groups = [getattr(s, "group", None) for s in samples]
    t0 = time.perf_counter()
    preds = recognize_batch(model, images, rectify, corner_model, beam_width, batch_size)
    elapsed = time.perf_counter() - t0
    rep = score(truths, preds, names, groups if any(g is not None for g in groups) else None)
    rep.images_per_sec = len(images) / elapsed if elapsed > 0 else float("inf")
    return rep


@dataclass
class FpsReport:
    mean: float
    stdev: float
    runs: list

    @property
    def variation(self):
        """Relative spread (max - min) / mean over the repeats."""
        return (max(self.runs) - min(self.runs)) / self.mean if self.mean else float("inf")


def bench_fps(model, images, n=50, repeats=5, warmup=5, rectify=False, corner_model=None, beam_width=0):
    """Single-image recognition throughput in images/second.

    Images are cycled to ``n`` per repeat; ``warmup`` calls precede timing.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    images = [np.asarray(im, dtype=np.float64) for im in images]
    for i in range(warmup):
        recognize(model, images[i % len(images)], rectify, corner_model, beam_width)
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for i in range(n):
            recognize(model, images[i % len(images)], rectify, corner_model, beam_width)
        runs.append(n / (time.perf_counter() - t0))
    return FpsReport(float(np.mean(runs)), float(np.std(runs)), runs)
