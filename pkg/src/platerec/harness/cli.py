"""Command-line entry point: ``platerec <subcommand> [flags]``.

Every subcommand accepts ``--seed`` and ``--config FILE`` (key=value lines
supplying flag defaults). Reports go to stdout as one ``key=value`` record
per line.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..blocks import CornerModel, Recognizer
from ..ctc import FULL_SYMBOLS, Alphabet
from ..imageio import read_image, write_image
from ..platelang import DIGITS, LETTERS, TEMPLATES, AugmentConfig
from ..rectify import rectify_plate
from . import corpus
from .checkpoint import load_weights, save_weights
from .evaluate import bench_fps, evaluate, recognize_batch
from .manifest import load_manifest, write_manifest
from .train import TrainConfig, pretrain_autoencoder, train_corner_model, train_recognizer

log = logging.getLogger("platerec")


def read_config(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def emit(**fields):
    print(" ".join(f"{k}={v}" for k, v in fields.items()), flush=True)


def _load_samples(manifest, need_label=True):
    entries = load_manifest(manifest)
    samples = []
    for e in entries:
        if need_label and not e.label:
            raise SystemExit(f"{manifest}: line {e.line} has no label")
        samples.append(corpus.Sample(read_image(e.path), e.label, e.quad, e.group))
    return entries, samples


def _train_cfg(a, augment=False):
    return TrainConfig(
        epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, seed=a.seed, augment=AugmentConfig(seed=a.seed) if augment else None
    )


def cmd_fabricate(a):
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = corpus.desk_config() if a.desk else dict(templates=TEMPLATES, letters=LETTERS, digits=DIGITS)
    aug = None if a.no_augment else AugmentConfig(seed=a.seed)
    if a.warped:
        samples = corpus.synth_warped(a.count, a.seed, augment_cfg=aug, **vocab)
    else:
        samples = corpus.synth_plates(a.count, a.seed, augment_cfg=aug, **vocab)
    rows = []
    for i, s in enumerate(samples):
        name = f"plate_{i:05d}.ppm"
        write_image(out / name, s.image)
        group = f"g{i // a.group_size}" if a.group_size else None
        rows.append((name, s.label, s.quad, group))
    write_manifest(out / "manifest.tsv", rows)
    emit(kind="fabricate", count=len(rows), manifest=out / "manifest.tsv", seed=a.seed)
    return 0


def _alphabet(a):
    return Alphabet(corpus.DESK_SYMBOLS if a.desk else (a.alphabet or FULL_SYMBOLS))


def cmd_pretrain(a):
    _, samples = _load_samples(a.manifest, need_label=False)
    model = Recognizer(_alphabet(a), width=a.width, seed=a.seed)
    _, curve = pretrain_autoencoder(model.encoder, samples, _train_cfg(a), decoder_seed=a.seed)
    save_weights(model, a.out)
    for i, v in enumerate(curve, 1):
        emit(kind="pretrain", epoch=i, mse=f"{v:.6f}")
    emit(kind="checkpoint", path=a.out)
    return 0


def cmd_train(a):
    _, samples = _load_samples(a.manifest)
    val = _load_samples(a.val)[1] if a.val else None
    if a.init:
        model = load_weights(a.init)
    else:
        model = Recognizer(_alphabet(a), width=a.width, seed=a.seed)
    res = train_recognizer(model, samples, _train_cfg(a, augment=a.augment), val=val)
    save_weights(model, a.out)
    for i, v in enumerate(res.losses):
        rec = dict(kind="epoch", epoch=i + 1, loss=f"{res.batch_losses[i]:.5f}", probe_loss=f"{v:.5f}")
        if res.val_accuracy:
            rec["val_accuracy"] = f"{res.val_accuracy[i]:.4f}"
        emit(**rec)
    emit(kind="checkpoint", path=a.out)
    return 0


def cmd_train_corners(a):
    _, samples = _load_samples(a.manifest)
    model = CornerModel(seed=a.seed)
    _, curve = train_corner_model(model, samples, _train_cfg(a))
    save_weights(model, a.out)
    for i, v in enumerate(curve, 1):
        emit(kind="corner_epoch", epoch=i, mse=f"{v:.6f}")
    emit(kind="checkpoint", path=a.out)
    return 0


def _corner_model(a):
    if a.rectify and not a.corners:
        raise SystemExit("--rectify needs --corners CHECKPOINT")
    return load_weights(a.corners) if a.corners else None


def cmd_recognize(a):
    model = load_weights(a.model)
    corners = _corner_model(a)
    if a.manifest:
        entries = load_manifest(a.manifest)
        paths = [e.path for e in entries]
    else:
        paths = [Path(p) for p in a.images]
    preds = recognize_batch(model, [read_image(p) for p in paths], a.rectify, corners, a.beam)
    for p, pred in zip(paths, preds):
        emit(image=p, prediction=pred.text or "<empty>", confidence=f"{pred.confidence:.4f}", grammar_ok=str(pred.grammar_ok).lower())
    return 0


def cmd_rectify(a):
    img = read_image(a.image)
    if a.quad:
        quad = np.array([float(v) for v in a.quad.replace(",", " ").split()]).reshape(4, 2)
    else:
        from .train import predict_corners

        if not a.corners:
            raise SystemExit("rectify needs --quad or --corners")
        quad = predict_corners(load_weights(a.corners), [img])[0]
    write_image(a.out, rectify_plate(img, quad))
    emit(kind="rectify", image=a.image, out=a.out, quad=",".join(f"{v:.2f}" for v in quad.reshape(-1)))
    return 0


def cmd_eval(a):
    model = load_weights(a.model)
    corners = _corner_model(a)
    entries, samples = _load_samples(a.manifest)
    for s, e in zip(samples, entries):
        s.path = e.path
    rep = evaluate(model, samples, a.rectify, corners, a.beam)
    for line in rep.records():
        print(line)
    return 0


def cmd_bench(a):
    model = load_weights(a.model)
    corners = _corner_model(a)
    _, samples = _load_samples(a.manifest, need_label=False)
    rep = bench_fps(model, [s.image for s in samples], a.n, a.repeats, rectify=a.rectify, corner_model=corners, beam_width=a.beam)
    emit(kind="bench", images_per_sec=f"{rep.mean:.2f}", stdev=f"{rep.stdev:.2f}", variation=f"{rep.variation:.4f}", rectify=str(a.rectify).lower())
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="key=value file supplying flag defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, default=10)
    training.add_argument("--batch-size", type=int, default=32)
    training.add_argument("--lr", type=float, default=1e-3)

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--width", type=float, default=1.0, help="channel width multiplier")
    model_opts.add_argument("--alphabet", default=None, help="recognized symbols (blank is implicit)")
    model_opts.add_argument("--desk", action="store_true", help="reduced 12-symbol alphabet")

    infer = argparse.ArgumentParser(add_help=False)
    infer.add_argument("--model", required=True)
    infer.add_argument("--corners", help="corner-model checkpoint")
    infer.add_argument("--rectify", action="store_true")
    infer.add_argument("--beam", type=int, default=0, help="beam width (0 = greedy)")

    p = argparse.ArgumentParser(prog="platerec", description="License-plate recognition toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fabricate", parents=[common], help="emit a synthetic corpus and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--warped", action="store_true", help="affinely warped crops with corner labels")
    s.add_argument("--desk", action="store_true")
    s.add_argument("--no-augment", action="store_true")
    s.add_argument("--group-size", type=int, default=0, help="assign consecutive images to groups")
    s.set_defaults(func=cmd_fabricate)

    s = sub.add_parser("pretrain", parents=[common, training, model_opts], help="autoencoder pretraining")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", parents=[common, training, model_opts], help="train the recognizer")
    s.add_argument("--manifest", required=True)
    s.add_argument("--val")
    s.add_argument("--init", help="checkpoint to start from (e.g. pretrained)")
    s.add_argument("--augment", action="store_true", help="augment on the fly")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-corners", parents=[common, training], help="train the corner regressor")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_corners)

    s = sub.add_parser("recognize", parents=[common, infer], help="predict plate text")
    s.add_argument("--manifest")
    s.add_argument("images", nargs="*")
    s.set_defaults(func=cmd_recognize)

    s = sub.add_parser("rectify", parents=[common], help="rectify one plate image")
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--quad", help="8 numbers: TL TR BR BL corners")
    s.add_argument("--corners", help="corner-model checkpoint")
    s.set_defaults(func=cmd_rectify)

    s = sub.add_parser("eval", parents=[common, infer], help="accuracy report on a labeled manifest")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common, infer], help="single-image throughput")
    s.add_argument("--manifest", required=True)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--repeats", type=int, default=5)
    s.set_defaults(func=cmd_bench)
    return p


def _coerce(parser, sub_name, cfg):
    """Apply config-file values as defaults on the chosen subparser, typed like the flags."""
    subparser = parser._subparsers._group_actions[0].choices[sub_name]
    known = {a.dest: a for a in subparser._actions}
    out = {}
    for k, v in cfg.items():
        if k not in known:
            raise SystemExit(f"config key {k!r} is not a flag of '{sub_name}'")
        act = known[k]
        if isinstance(act, (argparse._StoreTrueAction,)):
            out[k] = v.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            out[k] = act.type(v)
        else:
            out[k] = v
        act.required = False
    subparser.set_defaults(**out)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        _coerce(parser, args.command, read_config(args.config))
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    if getattr(args, "command", None) == "recognize" and not (args.manifest or args.images):
        parser.error("recognize needs --manifest or image paths")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
