"""Command-line entry points: train, eval, predict, fixture.

Exit codes: 0 success, 1 usage error, 2 data/checkpoint error, 3 numeric
failure (non-finite loss or gradients).
"""

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint
from .data import DatasetError, load_image, load_manifest, scan_dataset
from .fixture import FIXTURE_KINDS
from .metrics import build_report, overall, render_confusion, render_report
from .tensor import NumericError, ShapeError
from .train import TrainConfig, _apply_thread_limit, evaluate, train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags by default; this artifact reserves 2
    for data errors, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common_flags(p):
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="pin summation order for bit-reproducible runs (default on)")
    p.add_argument("--threads", type=int, default=0,
                   help="cap math-library threads (0 = leave defaults)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="leafnet",
                     description="Train and run a residual CNN leaf-image classifier.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a folder-per-class image tree")
    p.add_argument("--data-dir", default="", help="single root; stratified split applied")
    p.add_argument("--train-dir", default="", help="pre-split training root")
    p.add_argument("--val-dir", default="", help="pre-split holdout root")
    p.add_argument("--out-dir", default="runs/latest")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--weight-decay", type=float, default=0.0001)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--img-size", type=int, default=256)
    p.add_argument("--schedule", choices=("cosine", "cosine-epoch", "constant"),
                   default="cosine", help="cosine anneals per step; cosine-epoch per epoch")
    p.add_argument("--train-fraction", type=float, default=0.8014)
    p.add_argument("--save-every", type=int, default=0,
                   help="also checkpoint every N epochs (0 = best/final only)")
    p.add_argument("--report-format", choices=("csv", "json"), default="csv")
    _add_common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True,
                   help="class-folder tree, or a manifest CSV written by train")
    p.add_argument("--out-dir", default="", help="where to write report/confusion files")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--img-size", type=int, default=0,
                   help="0 = the size the checkpoint was trained at")
    p.add_argument("--report-format", choices=("csv", "json"), default="csv")
    _add_common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("image", help="path to a jpg/png image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--img-size", type=int, default=0,
                   help="0 = the size the checkpoint was trained at")
    _add_common_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fixture", help="emit a synthetic blob dataset")
    p.add_argument("--fixture", choices=sorted(FIXTURE_KINDS), default="blobs",
                   help="blobs: 3 classes x 100; tiny: 2 classes x 8")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_fixture)

    return parser


def cmd_train(args) -> int:
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    if args.batch_size < 1:
        raise UsageError("--batch-size must be >= 1")
    config = TrainConfig(
        data_dir=args.data_dir, train_dir=args.train_dir, val_dir=args.val_dir,
        out_dir=args.out_dir, epochs=args.epochs, batch_size=args.batch_size,
        base_lr=args.lr, weight_decay=args.weight_decay, seed=args.seed,
        img_size=args.img_size, schedule=args.schedule,
        deterministic=args.deterministic, threads=args.threads,
        train_fraction=args.train_fraction, save_every=args.save_every,
        report_format=args.report_format,
    )
    summary = train_model(config)
    print(f"final accuracy {summary['final_accuracy']!r} "
          f"(best {summary['best_accuracy']!r} at epoch {summary['best_epoch']}); "
          f"artifacts in {summary['out_dir']}")
    return EXIT_OK


def _load_eval_manifest(data_dir):
    if os.path.isfile(data_dir):
        return load_manifest(data_dir)
    return scan_dataset(data_dir)


def _checkpoint_img_size(args, model, meta) -> int:
    if getattr(args, "img_size", 0):
        return args.img_size
    cfg = meta.get("config", {}) if isinstance(meta, dict) else {}
    return int(cfg.get("img_size", model.config.img_size))


def cmd_eval(args) -> int:
    T.set_deterministic(args.deterministic)
    _apply_thread_limit(args.threads)
    model, class_names, meta = load_checkpoint(args.checkpoint)
    manifest = _load_eval_manifest(args.data_dir)
    img_size = _checkpoint_img_size(args, model, meta)
    cm = evaluate(model, manifest, class_names,
                  batch_size=args.batch_size, img_size=img_size)
    report = build_report(cm, class_names, mode="weighted")
    accuracy = overall(cm, "micro")[0]
    text = render_report(report, fmt=args.report_format)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        ext = args.report_format
        render_report(report, fmt=ext,
                      destination=os.path.join(args.out_dir, f"report.{ext}"))
        render_confusion(cm, class_names,
                         destination=os.path.join(args.out_dir, "confusion.csv"))
    else:
        print(text, end="")
    print(f"overall accuracy {accuracy!r} on {cm.total} samples")
    return EXIT_OK


def cmd_predict(args) -> int:
    T.set_deterministic(args.deterministic)
    _apply_thread_limit(args.threads)
    model, class_names, meta = load_checkpoint(args.checkpoint)
    k = len(class_names)
    if not 1 <= args.top_k <= k:
        raise UsageError(f"--top-k must be in [1, {k}]")
    img_size = _checkpoint_img_size(args, model, meta)
    image = load_image(args.image, img_size)
    model.eval()
    with T.no_grad():
        logits = model(T.reshape(image, (1,) + tuple(image.shape)))
        probs = T.softmax(logits)[0]
    order = np.argsort(-probs, kind="stable")  # ties resolve to lower index
    for rank in order[: args.top_k]:
        print(f"{class_names[int(rank)]}\t{probs[int(rank)]:.6f}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    manifest = FIXTURE_KINDS[args.fixture](args.out_dir, args.seed)
    print(f"wrote {len(manifest)} images across {manifest.num_classes} classes "
          f"to {args.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"leafnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, FileNotFoundError, ShapeError) as exc:
        print(f"leafnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"leafnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
