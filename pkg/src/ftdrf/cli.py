"""Command-line interface: ``ftdrf train | eval | predict | inspect``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .cascade import CascadeConfig
from .dataset import load_csv, load_idx, limit_rows
from .errors import FTDRFError
from .layer import LayerParams
from .mgs import MGSConfig
from .persist import ModelFile, load_model, save_model
from .pipeline import evaluate_model, predict, train
from .tree import TreeParams

log = logging.getLogger("ftdrf")


class UsageError(Exception):
    pass


def _window_list(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("at least one window size is required")
    return sizes


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data (IDX pair or CSV)")
    g.add_argument("--images", type=Path, help="IDX image file")
    g.add_argument("--labels", type=Path, help="IDX label file")
    g.add_argument("--csv", type=Path, help="CSV file with a header row")
    g.add_argument("--label-column", default="label", help="label column of --csv (default: label)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for tree fitting and prediction (default: all cores)")
    p.add_argument("--report", choices=("text", "rows"), default="text",
                   help="human-readable text or key=value rows")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftdrf", description="Forward-thinking deep random forests")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a cascade and save it")
    _add_data_args(t)
    _add_common(t)
    t.add_argument("--output", "-o", type=Path, required=True, help="model file to write")
    t.add_argument("--limit-train", type=int, default=None, metavar="N",
                   help="use only the first N training rows")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--trees-per-layer", type=int, default=2000)
    t.add_argument("--type-mix", type=float, default=0.5,
                   help="probability that a tree is extra-random")
    t.add_argument("--criterion", choices=("entropy", "gini"), default="entropy")
    t.add_argument("--max-depth", type=int, default=None)
    t.add_argument("--min-samples-split", type=int, default=2)
    t.add_argument("--min-samples-leaf", type=int, default=1)
    t.add_argument("--mtry", type=int, default=None, help="features per split (default: round(sqrt(d)))")
    t.add_argument("--holdout", type=float, default=0.2, help="holdout fraction")
    t.add_argument("--gain-threshold", type=float, default=0.01)
    t.add_argument("--gain-mode", choices=("relative", "remaining-error"), default="relative")
    t.add_argument("--max-layers", type=int, default=10)
    t.add_argument("--min-layers", type=int, default=1)
    t.add_argument("--refit-full", action="store_true",
                   help="after stopping, retrain the kept layers on train+holdout")
    t.add_argument("--wiggle", action="store_true", help="add four diagonal one-pixel shifts")
    t.add_argument("--augment-before-split", action="store_true",
                   help="wiggle before the holdout split instead of after")
    t.add_argument("--mgs", action="store_true", help="multi-grained scanning preprocessing")
    t.add_argument("--allow-both", action="store_true", help="permit --wiggle together with --mgs")
    t.add_argument("--mgs-windows", type=_window_list, default=(7, 9, 14))
    t.add_argument("--mgs-stride", type=int, default=1)
    t.add_argument("--mgs-trees", type=int, default=30, help="trees per MGS forest")
    t.add_argument("--mgs-sample-fraction", type=float, default=1.0,
                   help="fraction of training images used to fit MGS forests")

    e = sub.add_parser("eval", help="accuracy and confusion matrix of a saved model")
    _add_data_args(e)
    _add_common(e)
    e.add_argument("--model", "-m", type=Path, required=True)
    e.add_argument("--limit", type=int, default=None, metavar="N", help="use only the first N rows")

    pr = sub.add_parser("predict", help="write per-sample labels and probabilities")
    _add_data_args(pr)
    _add_common(pr)
    pr.add_argument("--model", "-m", type=Path, required=True)
    pr.add_argument("--output", "-o", type=Path, default=None, help="CSV path (default: stdout)")
    pr.add_argument("--limit", type=int, default=None, metavar="N")

    i = sub.add_parser("inspect", help="print model metadata")
    i.add_argument("--model", "-m", type=Path, required=True)
    i.add_argument("--report", choices=("text", "rows"), default="text")
    return parser


def _load_data(args, n_classes: int | None = None):
    if args.csv is not None:
        if args.images is not None or args.labels is not None:
            raise UsageError("give either --csv or --images/--labels, not both")
        return load_csv(args.csv, args.label_column)
    if args.images is None or args.labels is None:
        raise UsageError("data required: --images and --labels, or --csv")
    return load_idx(args.images, args.labels, n_classes)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _print_history(model: ModelFile, fmt: str, out) -> None:
    casc = model.cascade
    records = list(casc.history) + ([casc.rejected] if casc.rejected else [])
    if fmt == "rows":
        print(f"layers={casc.n_layers}", file=out)
        print(f"stop_reason={casc.stop_reason}", file=out)
        for r in records:
            p = f"layer.{r.layer}"
            print(f"{p}.holdout_accuracy={_fmt(r.holdout_accuracy)}", file=out)
            print(f"{p}.relative_gain={_fmt(r.relative_gain)}", file=out)
            print(f"{p}.n_standard={r.n_standard}", file=out)
            print(f"{p}.n_extra={r.n_extra}", file=out)
            print(f"{p}.status={'kept' if r.kept else 'rejected'}", file=out)
        return
    print(f"{'layer':>5}  {'holdout_acc':>11}  {'rel_gain':>10}  {'standard':>8}  {'extra':>6}  status", file=out)
    for r in records:
        gain = "-" if r.relative_gain is None else f"{r.relative_gain:+.6f}"
        print(f"{r.layer:>5}  {r.holdout_accuracy:>11.6f}  {gain:>10}  {r.n_standard:>8}  "
              f"{r.n_extra:>6}  {'kept' if r.kept else 'rejected'}", file=out)
    print(f"kept {casc.n_layers} layer(s); stopped by {casc.stop_reason}", file=out)


def _cmd_train(args, out) -> int:
    if args.wiggle and args.mgs and not args.allow_both:
        raise UsageError("--wiggle and --mgs together require --allow-both")
    data = limit_rows(_load_data(args), args.limit_train)
    tp = dict(criterion=args.criterion, max_depth=args.max_depth,
              min_samples_split=args.min_samples_split, min_samples_leaf=args.min_samples_leaf,
              mtry=args.mtry)
    layer = LayerParams(args.trees_per_layer, args.type_mix,
                        TreeParams("standard", **tp), TreeParams("extra_random", **tp))
    config = CascadeConfig(layer, args.holdout, args.gain_threshold, args.gain_mode,
                           args.max_layers, args.min_layers, args.seed)
    mgs = None
    if args.mgs:
        mgs = MGSConfig(args.mgs_windows, args.mgs_stride, args.mgs_trees, args.seed,
                        args.mgs_sample_fraction,
                        TreeParams("standard", criterion=args.criterion),
                        TreeParams("extra_random", criterion=args.criterion))
    model = train(data, config, wiggle=args.wiggle, mgs=mgs,
                  augment_before_split=args.augment_before_split, refit=args.refit_full,
                  n_jobs=args.threads)
    save_model(model, args.output)
    _print_history(model, args.report, out)
    if args.report == "rows":
        print(f"model={args.output}", file=out)
    else:
        print(f"saved model to {args.output}", file=out)
    return 0


def _cmd_eval(args, out) -> int:
    model = load_model(args.model)
    data = limit_rows(_load_data(args, model.cascade.n_classes), args.limit)
    rep = evaluate_model(model, data, args.threads)
    K = rep.confusion.shape[0]
    if args.report == "rows":
        print(f"accuracy={_fmt(rep.accuracy)}", file=out)
        print(f"n_samples={rep.n_samples}", file=out)
        print(f"n_correct={int(np.trace(rep.confusion))}", file=out)
        for k in range(K):
            print(f"class.{k}.accuracy={_fmt(rep.per_class_accuracy[k])}", file=out)
        for k in range(K):
            print(f"confusion.{k}={','.join(str(v) for v in rep.confusion[k])}", file=out)
        return 0
    print(f"accuracy: {rep.accuracy:.6f} ({int(np.trace(rep.confusion))}/{rep.n_samples})", file=out)
    print("confusion matrix (rows = true class, columns = predicted):", file=out)
    width = max(5, len(str(rep.confusion.max())) + 1)
    print("     " + "".join(f"{k:>{width}}" for k in range(K)) + "   acc", file=out)
    for k in range(K):
        acc = rep.per_class_accuracy[k]
        tail = f"  {acc:.4f}" if np.isfinite(acc) else "     -"
        print(f"{k:>4} " + "".join(f"{v:>{width}}" for v in rep.confusion[k]) + tail, file=out)
    return 0


def _cmd_predict(args, out) -> int:
    model = load_model(args.model)
    data = limit_rows(_load_data(args, model.cascade.n_classes), args.limit)
    proba, labels = predict(model, data, args.threads)
    K = proba.shape[1]
    fh = open(args.output, "w", newline="") if args.output else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"p{k}" for k in range(K)])
        for i in range(proba.shape[0]):
            w.writerow([i, int(labels[i])] + [repr(float(p)) for p in proba[i]])
    finally:
        if args.output:
            fh.close()
    return 0


def _cmd_inspect(args, out) -> int:
    model = load_model(args.model)
    casc = model.cascade
    cfg = casc.config
    info = {
        "format_version": model.format_version,
        "n_classes": casc.n_classes,
        "input_dim": model.input_dim,
        "cascade_input_dim": casc.input_dim,
        "n_layers": casc.n_layers,
        "stop_reason": casc.stop_reason,
        "refit_full": casc.refit_full,
        "gain_threshold": cfg.gain_threshold,
        "gain_mode": cfg.gain_mode,
        "holdout_fraction": cfg.holdout_fraction,
        "criterion": cfg.layer_params.tree_params_standard.criterion,
        "seed": cfg.seed,
    }
    for k, v in sorted(model.options.items()):
        info[f"option.{k}"] = v
    if model.fingerprint:
        for k, v in model.fingerprint.items():
            info[f"data.{k}"] = v
    for i, layer in enumerate(casc.layers, start=1):
        counts = layer.kind_counts()
        info[f"layer.{i}.trees"] = layer.n_trees
        info[f"layer.{i}.standard"] = counts["standard"]
        info[f"layer.{i}.extra"] = counts["extra_random"]
        info[f"layer.{i}.input_dim"] = layer.input_dim
        info[f"layer.{i}.output_dim"] = layer.output_dim
        info[f"layer.{i}.nodes"] = sum(t.n_nodes for t in layer.trees)
    if model.mgs is not None:
        m = model.mgs
        info["mgs.windows"] = ",".join(str(w) for w in m.window_sizes)
        info["mgs.stride"] = m.stride
        info["mgs.trees_per_forest"] = m.forests[0][0].n_trees
        info["mgs.output_dim"] = m.output_dim
    if args.report == "rows":
        for k, v in info.items():
            print(f"{k}={_fmt(v)}", file=out)
        _print_history(model, "rows", out)
    else:
        for k, v in info.items():
            print(f"{k:<24} {v}", file=out)
        _print_history(model, "text", out)
    return 0


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "predict": _cmd_predict, "inspect": _cmd_inspect}


def run(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s",
                            stream=sys.stderr)
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ftdrf: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"ftdrf: error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (FTDRFError, OSError, ValueError) as exc:
        print(f"ftdrf: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
