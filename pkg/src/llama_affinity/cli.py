"""Command-line interface.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import load_config
from .data import BACKGROUNDS, DataError, FoldAssignment, load_jsonl, synth_generate, write_jsonl
from .metrics import MetricError, MetricsReport
from .model import ConfigError
from .tensor import make_rng
from .training import (
    TrainingError,
    cross_validate,
    evaluate_model,
    format_table,
    predict_dataset,
    reports_to_json,
    train_fold,
)

OUT_ENV = "LLAMA_AFFINITY_OUT"
log = logging.getLogger("llama_affinity")


class CommandError(Exception):
    """Runtime failure reported with exit code 1."""


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _out_dir(arg):
    return Path(arg or os.environ.get(OUT_ENV) or "runs")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_metrics(metrics: MetricsReport, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    metrics.to_json(directory / "metrics.json")
    metrics.roc.to_csv(directory / "roc.csv")
    metrics.confusion_to_csv(directory / "confusion.csv")


def _resolve(args):
    train_overrides = {
        "k_folds": getattr(args, "folds", None),
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "batch_size": args.batch,
        "seed": args.seed,
    }
    try:
        return load_config(args.config, train_overrides=train_overrides)
    except (ValueError, TypeError, OSError) as exc:
        raise CommandError(f"config: {exc}") from None


def _manifest(args, mc, tc, provenance):
    return {
        "tool": "llama-affinity",
        "version": __version__,
        "command": args.command,
        "model_config": mc.to_dict(),
        "train_config": tc.to_dict(),
        "dataset": provenance,
        "seed": tc.seed,
        "started": _now(),
        "finished": None,
    }


def cmd_synth(args):
    if not 0 <= args.noise < 0.5:
        args.parser.error("--noise must be in [0, 0.5)")
    try:
        ds = synth_generate(args.n, args.motif, args.seq_len, args.noise, make_rng(args.seed),
                            background=args.background)
    except DataError as exc:
        args.parser.error(str(exc))
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(ds, out)
    log.info("wrote %d samples to %s", len(ds), out)


def cmd_cv(args):
    mc, tc = _resolve(args)
    ds = load_jsonl(args.data)
    out = _out_dir(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, mc, tc, str(args.data))
    _write_json(out / "manifest.json", manifest)

    result = cross_validate(ds, mc, tc, workers=args.workers)
    _write_json(out / "folds.json", result.folds.to_json())
    for r in result.results:
        fold_dir = out / f"fold_{r.report.fold}"
        _write_metrics(r.metrics, fold_dir)
        save_checkpoint(r.checkpoint, fold_dir / "checkpoint.ckpt")
    _write_json(out / "reports.json", reports_to_json(result.reports))
    table = format_table(result.reports)
    (out / "table.txt").write_text(table)
    manifest["finished"] = _now()
    manifest["training_minutes"] = [r.training_minutes for r in result.reports]
    _write_json(out / "manifest.json", manifest)
    print(table, end="")


def cmd_train(args):
    mc, tc = _resolve(args)
    train = load_jsonl(args.data)
    test = load_jsonl(args.test) if args.test else train
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, mc, tc, {"train": str(args.data), "test": str(args.test or args.data)})
    manifest_path = out.with_suffix(".manifest.json")
    _write_json(manifest_path, manifest)
    r = train_fold(train, test, mc, tc, fold=0)
    save_checkpoint(r.checkpoint, out)
    manifest["finished"] = _now()
    manifest["report"] = r.report.to_dict()
    _write_json(manifest_path, manifest)
    print(json.dumps(r.report.to_dict()))


def _load_cp(path) -> Checkpoint:
    try:
        return load_checkpoint(path)
    except (CheckpointError, OSError) as exc:
        raise CommandError(f"checkpoint: {exc}") from None


def cmd_eval(args):
    cp = _load_cp(args.checkpoint)
    ds = load_jsonl(args.data)
    if args.folds_file is not None:
        folds = FoldAssignment.from_json(json.loads(Path(args.folds_file).read_text()))
        if len(folds.assignment) != len(ds):
            raise CommandError("fold assignment does not match dataset length")
        fold = args.fold if args.fold is not None else cp.metadata.get("fold", 0)
        ds = ds.subset(folds.test_indices(fold))
    metrics = evaluate_model(cp.tensors(), ds, cp.model_config, cp.train_config.batch_size)
    out = _out_dir(args.out)
    _write_metrics(metrics, out)
    print(json.dumps({k: metrics.to_dict()[k] for k in ("accuracy", "f1", "precision", "recall", "roc_auc")}))


def cmd_predict(args):
    cp = _load_cp(args.checkpoint)
    ds = load_jsonl(args.data, require_label=False)
    probs = predict_dataset(cp.tensors(), ds, cp.model_config, cp.train_config.batch_size)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        for p in probs:
            label = int(p[1] > p[0])
            fh.write(json.dumps({"binder_probability": float(p[1]), "predicted_label": label}) + "\n")


def _add_train_flags(p):
    p.add_argument("--data", required=True, help="JSONL dataset")
    p.add_argument("--config", help="JSON config file (model/train sections)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llama-affinity", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic motif dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--motif", default="WGQG")
    p.add_argument("--seq-len", type=int, default=120)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--background", choices=BACKGROUNDS, default="exclusive",
                   help="exclusive: background avoids motif residues; uniform: all 20 residues")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth, parser=p)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_train_flags(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or ./runs)")
    p.add_argument("--workers", type=int, default=1, help="folds trained in parallel processes")
    p.set_defaults(func=cmd_cv, parser=p)

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    _add_train_flags(p)
    p.add_argument("--test", help="held-out JSONL for the final evaluation (default: training data)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--folds-file", help="folds.json from a cv run; evaluates only the held-out fold")
    p.add_argument("--fold", type=int, help="fold id (default: the checkpoint's own fold)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval, parser=p)

    p = sub.add_parser("predict", help="per-sample binder probabilities")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict, parser=p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CommandError, DataError, MetricError, TrainingError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
