"""Command-line surface: data generation, training, evaluation, single-file
inference, and the self-test suite.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 self-test failure.
Every successful command prints one machine-readable line
``RESULT key=value ...``; evaluation metrics are also appended to a
line-delimited JSON report.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import config as config_mod
from . import selftest as selftest_mod
from . import tensor as T
from .data import build_dataset, read_manifest
from .errors import MvtfError
from .fusion import ViewSet, replicate_views
from .separator import SeparationModel, separate
from .signal import normalize_mixture, read_wav, write_wav
from .tensor import Tensor
from .training import evaluate, train
from .visual import load_embeddings, project_to_subspace, upsample_time

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_SELFTEST = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of calling sys.exit(2)."""

    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mvtf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a separation model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="manifest path (overrides data.manifest)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--views", help="one label, or three comma-separated labels")
    p.add_argument("--injected", action="store_true",
                   help="mixed-view robustness test set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test")
    p.add_argument("--report", default="metrics.jsonl",
                   help="line-delimited JSON report to append to")

    p = sub.add_parser("infer", help="separate one mixture file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mix", required=True)
    p.add_argument("--emb", required=True,
                   help="1 to 3 comma-separated embedding files")
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="run the invariant suites")
    p.add_argument("--fast", action="store_true")
    return parser


def _result_line(command: str, **kv) -> str:
    parts = [f"cmd={command}"]
    for key, value in kv.items():
        if isinstance(value, float):
            value = f"{value:.4f}"
        parts.append(f"{key}={value}")
    return "RESULT " + " ".join(parts)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cmd_gen_data(args) -> int:
    tree = config_mod.read_config(args.config)
    cfg = config_mod.dataset_config(tree)
    records = build_dataset(cfg, args.out, args.seed)
    manifest = os.path.join(args.out, "manifest.jsonl")
    print(_result_line("gen-data", manifest=manifest, records=len(records),
                       seed=args.seed, manifest_sha256=_sha256(manifest)))
    return EXIT_OK


def _cmd_train(args) -> int:
    tree = config_mod.read_config(args.config)
    cfg, manifest, precision = config_mod.train_config(tree)
    if args.data:
        manifest = args.data
    if not os.path.exists(manifest):
        raise FileNotFoundError(manifest)
    records = read_manifest(manifest)
    os.makedirs(args.out, exist_ok=True)
    if precision:
        T.set_default_dtype(precision)
    model, state = train(cfg, records, os.path.dirname(os.path.abspath(manifest)),
                         out_dir=args.out, log=lambda msg: print(msg, flush=True))
    history_path = os.path.join(args.out, "history.jsonl")
    with open(history_path, "w", encoding="utf-8") as fh:
        for entry in state.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    ckpt = os.path.join(args.out, "best.ckpt")
    print(_result_line("train", ckpt=ckpt, best_val_si_sdr=state.best_val,
                       epochs=state.epoch, stopped_early=state.stopped,
                       seed=cfg.seed))
    return EXIT_OK


def _view_config_from_args(args) -> dict:
    if args.injected:
        return {"injected": True}
    if not args.views:
        raise _UsageError("eval needs --views or --injected")
    labels = [v.strip() for v in args.views.split(",") if v.strip()]
    if len(labels) == 1:
        return {"single": labels[0]}
    if len(labels) == 3:
        return {"combo": labels}
    raise _UsageError("--views takes one label or three comma-separated labels")


def _cmd_eval(args) -> int:
    view_config = _view_config_from_args(args)
    if not os.path.exists(args.ckpt):
        raise FileNotFoundError(args.ckpt)
    if not os.path.exists(args.data):
        raise FileNotFoundError(args.data)
    model = SeparationModel.from_checkpoint(args.ckpt)
    records = read_manifest(args.data)
    metrics = evaluate(model, records, os.path.dirname(os.path.abspath(args.data)),
                       view_config, seed=args.seed, split=args.split)
    if args.report:
        entry = dict(metrics, ckpt=args.ckpt, split=args.split, seed=args.seed)
        with open(args.report, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    views_repr = ("injected" if args.injected
                  else ",".join(view_config.get("combo", []))
                  or view_config.get("single"))
    print(_result_line("eval", views=views_repr, count=metrics["count"],
                       mean_si_sdr=metrics["mean_si_sdr"],
                       std_si_sdr=metrics["std_si_sdr"],
                       mixture_si_sdr=metrics["mixture_mean_si_sdr"],
                       improvement_db=metrics["improvement_db"]))
    return EXIT_OK


def _cmd_infer(args) -> int:
    for path in [args.ckpt, args.mix] + args.emb.split(","):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    model = SeparationModel.from_checkpoint(args.ckpt)
    wave = read_wav(args.mix)
    mix = normalize_mixture(wave[None, :])
    t_a = model.stft_cfg.frame_count(mix.original_length)

    views, labels = [], []
    with T.no_grad():
        for path in args.emb.split(","):
            seq = load_embeddings(path)
            aligned = upsample_time(seq, t_a)
            projected = project_to_subspace(
                Tensor(aligned.data[None, :, :]), model.proj)
            views.append(projected)
            labels.append(seq.view_label)
        est = separate(mix, replicate_views(ViewSet(views, labels)), model)
    write_wav(args.out, est.data[0])
    print(_result_line("infer", out=args.out, views=",".join(labels),
                       samples=est.shape[1]))
    return EXIT_OK


def _cmd_selftest(args) -> int:
    results = selftest_mod.run_all(fast=args.fast)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        return EXIT_SELFTEST
    print(_result_line("selftest", checks=len(results),
                       mode="fast" if args.fast else "full", status="pass"))
    return EXIT_OK


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "selftest": _cmd_selftest,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _HANDLERS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except MvtfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
