"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also collected into the terminal summary. The end-to-end criteria (7, 8)
share one trained desk-scale model and take roughly half an hour on one core.
"""

import itertools
import math
import time

import numpy as np
import pytest

from platerec import layers as L
from platerec.blocks import CornerModel, Recognizer, SeparableConv, param_count
from platerec.ctc import Alphabet, collapse, ctc_loss, ctc_loss_batch, min_frames
from platerec.harness.checkpoint import (
    BadMagicError,
    TruncatedError,
    VersionError,
    load_weights,
    quantize,
    read_checkpoint,
    save_weights,
)
from platerec.harness.corpus import DESK_SYMBOLS, desk_config, synth_plates, synth_warped
from platerec.harness.evaluate import Prediction, bench_fps, evaluate, majority_vote, score
from platerec.harness.train import TrainConfig, train_corner_model, train_recognizer
from platerec.platelang import DIGITS, LETTERS, TEMPLATES, AugmentConfig, fabricate_string, validate
from platerec.rectify import apply_affine, canonical_quad, fit_affine, warp_bilinear
from platerec.tensor import Tensor, gradcheck

from test_blocks import LAYER_TABLE
from test_platelang import LITERAL, all_layouts, instantiate

pytestmark = pytest.mark.acceptance


def verdict(log, n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} | {detail}"
    print(line)
    log.append(line)
    return ok


# ---------------------------------------------------------------------------
# 1. CTC against exhaustive path enumeration
# ---------------------------------------------------------------------------


def brute_force_ctc(logp, labels, blank):
    steps, classes = logp.shape
    total = 0.0
    for path in itertools.product(range(classes), repeat=steps):
        if collapse(path, blank) == list(labels):
            total += math.exp(sum(logp[t, k] for t, k in enumerate(path)))
    return -math.log(total)


def test_criterion_1_ctc_oracle(acceptance_log):
    t0 = time.perf_counter()
    worst = 0.0
    trials = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        steps, classes = int(rng.integers(1, 7)), int(rng.integers(2, 4))
        blank = classes - 1
        while True:
            labels = [int(v) for v in rng.integers(0, blank, size=int(rng.integers(0, 4)))]
            if min_frames(labels) <= steps:
                break
        z = rng.normal(size=(steps, classes))
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        worst = max(worst, abs(ctc_loss(logp, labels)[0] - brute_force_ctc(logp, labels, blank)))
        trials += 1
    elapsed = time.perf_counter() - t0
    ln3 = abs(ctc_loss(np.log(np.full((2, 3), 1.0 / 3.0)), [0])[0] - math.log(3.0))
    ok = worst <= 1e-9 and elapsed < 5.0 and ln3 <= 1e-12
    verdict(
        acceptance_log, 1, "CTC oracle equivalence", ok,
        f"trials={trials} max_abs_diff={worst:.2e} (tol 1e-9) ln3_diff={ln3:.1e} (tol 1e-12) runtime={elapsed:.2f}s (<5s)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 2. Analytic vs central-difference gradients
# ---------------------------------------------------------------------------


def _probe(rng, op, tensors):
    w = rng.normal(size=op().shape)
    return gradcheck(lambda: L.weighted_sum(op(), w), tensors, h=1e-5)


def _conv_case(rng):
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    x = Tensor(rng.normal(size=(2, int(rng.integers(3, 6)), int(rng.integers(3, 6)), cin)), requires_grad=True)
    p = L.ConvParams.init(rng, cin, cout, k, stride=int(rng.integers(1, 3)))
    p.bias.data = rng.normal(size=cout)
    return _probe(rng, lambda: L.conv2d(x, p), [x, p.weight, p.bias])


def _depthwise_case(rng):
    c = int(rng.integers(1, 4))
    x = Tensor(rng.normal(size=(2, int(rng.integers(3, 6)), int(rng.integers(3, 6)), c)), requires_grad=True)
    p = L.DepthwiseParams.init(rng, c, 3, stride=int(rng.integers(1, 3)))
    p.bias.data = rng.normal(size=c)
    return _probe(rng, lambda: L.depthwise_conv2d(x, p), [x, p.weight, p.bias])


def _separable_case(rng):
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = Tensor(rng.normal(size=(2, 4, 3, cin)), requires_grad=True)
    dw = L.DepthwiseParams.init(rng, cin, 3, bias=False)
    pw = L.ConvParams.init(rng, cin, cout, 1)
    pw.bias.data = rng.normal(size=cout)
    return _probe(rng, lambda: L.separable_conv2d(x, dw, pw), [x, dw.weight, pw.weight, pw.bias])


def _bn_case(rng, training):
    c = int(rng.integers(1, 4))
    x = Tensor(rng.normal(size=(3, int(rng.integers(2, 4)), 2, c)), requires_grad=True)
    p = L.BNParams.init(c)
    p.gamma.data = rng.uniform(0.5, 1.5, c)
    p.beta.data = rng.normal(size=c)
    p.running_mean.data = rng.normal(size=c)
    p.running_var.data = rng.uniform(0.5, 2.0, c)
    snap = p.running_mean.data.copy(), p.running_var.data.copy()

    def op():
        p.running_mean.data, p.running_var.data = snap[0].copy(), snap[1].copy()
        return L.batchnorm(x, p, training)

    return _probe(rng, op, [x, p.gamma, p.beta])


def _lstm_case(rng):
    feat, hidden = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x = Tensor(rng.normal(size=(2, int(rng.integers(2, 5)), feat)), requires_grad=True)
    p = L.LstmParams.init(rng, feat, hidden)
    p.b_fwd.data = rng.normal(size=4 * hidden) * 0.5
    p.b_bwd.data = rng.normal(size=4 * hidden) * 0.5
    return _probe(rng, lambda: L.bilstm(x, p), [x, p.w_fwd, p.b_fwd, p.w_bwd, p.b_bwd])


def _dense_case(rng):
    fin, fout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    x = Tensor(rng.normal(size=(3, fin)), requires_grad=True)
    p = L.DenseParams.init(rng, fin, fout)
    p.bias.data = rng.normal(size=fout)
    return _probe(rng, lambda: L.dense(x, p), [x, p.weight, p.bias])


def _ctc_case(rng):
    steps, classes = int(rng.integers(3, 7)), int(rng.integers(2, 5))
    while True:
        labels = [int(v) for v in rng.integers(0, classes - 1, size=int(rng.integers(1, 4)))]
        if min_frames(labels) <= steps:
            break
    z = Tensor(rng.normal(size=(1, steps, classes)), requires_grad=True)
    return gradcheck(lambda: ctc_loss_batch(L.log_softmax_rows(z), [labels]), [z], h=1e-5)


GRAD_CASES = {
    "conv": _conv_case,
    "depthwise": _depthwise_case,
    "separable": _separable_case,
    "bn_train": lambda rng: _bn_case(rng, True),
    "bn_eval": lambda rng: _bn_case(rng, False),
    "lstm": _lstm_case,
    "dense": _dense_case,
    "ctc": _ctc_case,
}


def test_criterion_2_gradient_integrity(acceptance_log):
    worst = {}
    for name, case in GRAD_CASES.items():
        worst[name] = max(case(np.random.default_rng([2, seed])) for seed in range(20))
    ok = max(worst.values()) <= 1e-4
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    verdict(acceptance_log, 2, "gradient integrity (20 trials/layer, tol 1e-4)", ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# 3. Layer-table shapes
# ---------------------------------------------------------------------------


def test_criterion_3_layer_table(acceptance_log):
    model = Recognizer(Alphabet(), width=1.0, seed=0).eval()
    trace = []
    out = model(np.random.default_rng(0).random((1, 128, 32, 2)), trace=trace)
    rows_ok = trace == LAYER_TABLE
    stochastic = float(np.abs(np.exp(out.data[0]).sum(axis=-1) - 1.0).max())
    ok = rows_ok and out.shape[1:] == (32, 38) and stochastic < 1e-12
    verdict(
        acceptance_log, 3, "layer-table conformance", ok,
        f"rows_matched={sum(a == b for a, b in zip(trace, LAYER_TABLE))}/{len(LAYER_TABLE)} "
        f"final={out.shape[1:]} row_sum_err={stochastic:.1e}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 4. Separable-convolution economy
# ---------------------------------------------------------------------------


def _separables(module):
    if isinstance(module, SeparableConv):
        yield module
        return
    for child in module.children():
        yield from _separables(child)


def test_criterion_4_separable_economy(acceptance_log):
    rng = np.random.default_rng(0)
    sep = param_count(SeparableConv(rng, 64, 64))
    dense = param_count(L.ConvParams.init(rng, 64, 64, 3))
    model = Recognizer(Alphabet(), width=1.0)
    full = param_count(model)
    # swap every separable layer for a dense conv with the same kernel and channels
    swapped = full
    for s in _separables(model):
        cin, cout = s.pw.weight.shape[1], s.pw.weight.shape[0]
        k = s.dw.weight.shape[1]
        swapped += cin * cout * k * k + cout - param_count(s)
    ok = sep == 4736 and dense == 36928 and full < swapped
    verdict(
        acceptance_log, 4, "separable-convolution economy", ok,
        f"sep3x3_64={sep} dense3x3_64={dense} model={full} all_dense_variant={swapped}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 5. Affine recovery
# ---------------------------------------------------------------------------


def _random_affine(rng):
    th, sh = rng.uniform(-0.6, 0.6), rng.uniform(-0.5, 0.5)
    sx, sy = rng.uniform(0.3, 3.0, size=2)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    lin = rot @ np.array([[1.0, sh], [0.0, 1.0]]) @ np.diag([sx, sy])
    return np.column_stack([lin, rng.uniform(-200, 200, size=2)])


def test_criterion_5_affine_recovery(acceptance_log):
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng([5, seed])
        m = _random_affine(rng)
        src = canonical_quad() + rng.normal(scale=5.0, size=(4, 2))
        worst = max(worst, float(np.abs(fit_affine(src, apply_affine(m, src)) - m).max()))
    img = np.random.default_rng(5).random((32, 128, 3))
    exact = True
    for dx, dy in [(3, 2), (-5, 1), (0, -4), (17, 9), (-1, -1)]:
        out = warp_bilinear(img, np.array([[1.0, 0, dx], [0, 1.0, dy]]), 128, 32)
        ys, xs = slice(max(dy, 0), 32 + min(dy, 0)), slice(max(dx, 0), 128 + min(dx, 0))
        yi, xi = slice(max(-dy, 0), 32 + min(-dy, 0)), slice(max(-dx, 0), 128 + min(-dx, 0))
        exact &= bool(np.array_equal(out[ys, xs], img[yi, xi]))
    ok = worst <= 1e-9 and exact
    verdict(
        acceptance_log, 5, "affine recovery", ok,
        f"trials=1000 max_coef_err={worst:.1e} (tol 1e-9) integer_translation_exact={exact}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 6. Grammar exactness
# ---------------------------------------------------------------------------


def test_criterion_6_grammar(acceptance_log):
    disagreements = [
        lay for k in (4, 5, 6, 7) for lay in all_layouts(k) if (validate(instantiate(lay)) is not None) != (lay in LITERAL)
    ]
    rng = np.random.default_rng(6)
    fabricated_bad = sum(validate(fabricate_string(rng).text) is None for _ in range(10_000))
    ok = not disagreements and fabricated_bad == 0 and set(TEMPLATES) == LITERAL
    verdict(
        acceptance_log, 6, "grammar exactness", ok,
        f"templates={len(TEMPLATES)} literal_table={len(LITERAL)} "
        f"enumeration_disagreements={len(disagreements)} fabricated_invalid={fabricated_bad}/10000",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7 and 8. Desk-scale training and the rectification ablation
# ---------------------------------------------------------------------------

DESK_WIDTH = 0.5
DESK_EPOCHS = 10
DESK_LR = 1e-3
DESK_BUDGET_S = 30 * 60


def desk_corpora():
    cfg = desk_config()
    train = synth_plates(2000, seed=71, augment_cfg=AugmentConfig(seed=71), **cfg)
    test = synth_plates(200, seed=72, augment_cfg=AugmentConfig(seed=72), **cfg)
    return train, test


@pytest.fixture(scope="module")
def desk_run():
    t0 = time.perf_counter()
    train, test = desk_corpora()
    model = Recognizer(Alphabet(DESK_SYMBOLS), width=DESK_WIDTH, seed=0)
    cfg = TrainConfig(epochs=DESK_EPOCHS, lr=DESK_LR, batch_size=32, seed=0)
    result = train_recognizer(model, train, cfg)
    elapsed = time.perf_counter() - t0
    report = evaluate(model, test)
    return dict(model=model, result=result, elapsed=elapsed, report=report)


def test_criterion_7_desk_training(desk_run, acceptance_log):
    # seed reproducibility on a short run: same seed, same weights and curve
    train, _ = desk_corpora()
    runs = []
    for _ in range(2):
        m = Recognizer(Alphabet(DESK_SYMBOLS), width=DESK_WIDTH, seed=0)
        r = train_recognizer(m, train[:64], TrainConfig(epochs=1, batch_size=32, seed=0, probe_size=32))
        runs.append((r.losses, [t.data.copy() for t in m.named_tensors().values()]))
    reproducible = runs[0][0] == runs[1][0] and all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))

    acc = desk_run["report"].plate_accuracy
    elapsed = desk_run["elapsed"]
    ok = acc >= 0.95 and elapsed <= DESK_BUDGET_S and reproducible
    verdict(
        acceptance_log, 7, "desk-scale end-to-end training", ok,
        f"plate_accuracy={acc:.3f} (>=0.95) char_accuracy={desk_run['report'].char_accuracy:.3f} "
        f"wall={elapsed / 60:.1f}min (<=30) width={DESK_WIDTH} epochs={DESK_EPOCHS} reproducible={reproducible}",
    )
    assert ok


@pytest.fixture(scope="module")
def corner_model():
    cfg = desk_config()
    data = synth_warped(1500, seed=81, **cfg)
    model = CornerModel(seed=0)
    model, _ = train_corner_model(model, data, TrainConfig(epochs=12, batch_size=32, lr=2e-3, seed=0))
    return model


def test_criterion_8_rectification_ablation(desk_run, corner_model, acceptance_log):
    test = synth_warped(200, seed=82, **desk_config())
    off = evaluate(desk_run["model"], test).plate_accuracy
    on = evaluate(desk_run["model"], test, rectify=True, corner_model=corner_model).plate_accuracy
    gain = on - off
    ok = gain > 0
    verdict(
        acceptance_log, 8, "rectification ablation", ok,
        f"accuracy_off={off:.3f} accuracy_on={on:.3f} gain={100 * gain:+.1f} points "
        f"(informational band 1 to 3 points, not asserted)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 9. Majority vote
# ---------------------------------------------------------------------------


def _corrupt(text, rng):
    pos = int(rng.integers(len(text)))
    pool = LETTERS if text[pos].isalpha() else DIGITS if text[pos].isdigit() else LETTERS + DIGITS
    repl = rng.choice([c for c in pool if c != text[pos]])
    return text[:pos] + repl + text[pos + 1 :]


def test_criterion_9_majority_vote(acceptance_log):
    rng = np.random.default_rng(9)
    truths, preds, groups = [], [], []
    for g in range(100):
        truth = fabricate_string(rng).text
        for _ in range(30):
            pred = _corrupt(truth, rng) if rng.random() < 0.2 else truth
            truths.append(truth)
            preds.append(Prediction(pred, float(rng.uniform(0.5, 1.0))))
            groups.append(g)
    rep = score(truths, preds, groups=groups)
    tie_conf = majority_vote([Prediction("AB-12", 0.6), Prediction("CD-34", 0.9)]).text == "CD-34"
    tie_lex = majority_vote([Prediction("CD-34", 0.7), Prediction("AB-12", 0.7)]).text == "AB-12"
    ok = rep.group_accuracy > rep.plate_accuracy and tie_conf and tie_lex
    verdict(
        acceptance_log, 9, "majority-vote protocol", ok,
        f"groups=100x30 corruption=0.2 ungrouped={rep.plate_accuracy:.3f} grouped={rep.group_accuracy:.3f} "
        f"tie_by_confidence={tie_conf} tie_lexicographic={tie_lex}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 10. Persistence
# ---------------------------------------------------------------------------


def test_criterion_10_persistence(tmp_path, acceptance_log):
    model = quantize(Recognizer(Alphabet(), width=1.0, seed=3)).eval()
    path = tmp_path / "model.lprw"
    save_weights(model, path)
    x = np.random.default_rng(10).random((2, 128, 32, 2))
    identical = bool(np.array_equal(model(x).data, load_weights(path)(x).data))

    raw = path.read_bytes()
    errors = {}
    for name, blob in {
        "bad_magic": b"NOPE" + raw[4:],
        "bad_version": raw[:4] + (99).to_bytes(4, "little") + raw[8:],
        "truncated": raw[: len(raw) // 2],
    }.items():
        bad = tmp_path / f"{name}.lprw"
        bad.write_bytes(blob)
        try:
            read_checkpoint(bad)
            errors[name] = None
        except Exception as exc:  # noqa: BLE001 - recording which class was raised
            errors[name] = type(exc)
    expected = {"bad_magic": BadMagicError, "bad_version": VersionError, "truncated": TruncatedError}
    ok = identical and errors == expected
    verdict(
        acceptance_log, 10, "persistence", ok,
        f"bit_identical_forward={identical} errors=" + ",".join(f"{k}:{getattr(v, '__name__', v)}" for k, v in errors.items()),
    )
    assert ok


# ---------------------------------------------------------------------------
# 11. Benchmark sanity
# ---------------------------------------------------------------------------


def host_noise_floor(repeats=5, seconds=2.0):
    """Range/mean of a fixed matmul loop's throughput: what this machine alone contributes."""
    a = np.random.default_rng(0).random((300, 300))
    runs = []
    for _ in range(repeats):
        t0, k = time.perf_counter(), 0
        while time.perf_counter() - t0 < seconds:
            a @ a
            k += 1
        runs.append(k / (time.perf_counter() - t0))
    return (max(runs) - min(runs)) / float(np.mean(runs))


def test_criterion_11_benchmark(acceptance_log):
    model = Recognizer(Alphabet(), width=1.0, seed=0).eval()
    corners = CornerModel(seed=0).eval()
    images = [s.image for s in synth_warped(10, seed=11)]
    off = bench_fps(model, images, n=50, repeats=5, warmup=5)
    on = bench_fps(model, images, n=50, repeats=5, warmup=5, rectify=True, corner_model=corners)
    host = host_noise_floor()
    ok = off.variation < 0.10 and on.variation < 0.10 and on.mean <= off.mean
    verdict(
        acceptance_log, 11, "benchmark sanity", ok,
        f"fps_off={off.mean:.1f} (variation {100 * off.variation:.1f}%) "
        f"fps_on={on.mean:.1f} (variation {100 * on.variation:.1f}%) on<=off={on.mean <= off.mean} "
        f"host_noise_floor={100 * host:.1f}%",
    )
    assert ok
