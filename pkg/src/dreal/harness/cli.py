"""Command line entry point: ``dreal {train,eval,plot,ablate,selftest}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from ..config import ConfigError, load_config
from .checkpoint import CheckpointError, restore
from .data import ingest_dataset
from .diagnostics import ablation_report, emit_plots
from .experiment import run_experiment
from .metrics import read_metrics


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dreal", description="Reinforced attention training on desk-scale data.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a TOML config")
    t.add_argument("--config", required=True, help="experiment config (TOML)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("overrides", nargs="*", help="section.key=value overrides, e.g. train.seed=7")

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="take the dataset from this config instead of the checkpoint's")

    pl = sub.add_parser("plot", help="Q/R curves from a metrics file")
    pl.add_argument("--history", required=True, help="metrics.jsonl")
    pl.add_argument("--out", help="output directory (default: <history dir>/plots)")

    a = sub.add_parser("ablate", help="per-block bypass reward report in inference mode")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--config", help="take the dataset from this config instead of the checkpoint's")
    a.add_argument("--out", help="also write the rows as JSON lines here")

    sub.add_parser("selftest", help="run the operator / critic / reward oracle checks")
    return p


def _experiment_for(args):
    state = restore(args.checkpoint)
    exp = load_config(args.config) if args.config else state.experiment
    if exp is None:
        raise ConfigError("--config", "checkpoint carries no experiment config; pass one")
    return state, exp


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    try:
        if args.command == "train":
            cfg = load_config(args.config, args.overrides)
            history = run_experiment(cfg, resume=args.resume)
            last = history[-1]
            print(f"done: {len(history)} epochs, train acc {last.train_acc:.4f}, val acc {last.val_acc}, "
                  f"outputs in {cfg.output_dir}")
        elif args.command == "eval":
            from ..trainer import evaluate
            state, exp = _experiment_for(args)
            splits = ingest_dataset(exp.dataset)
            print(json.dumps({"epoch": state.epoch, "val_acc": evaluate(state.network, splits.val),
                              "train_acc": evaluate(state.network, splits.train)}))
        elif args.command == "plot":
            history = read_metrics(args.history)
            out = Path(args.out) if args.out else Path(args.history).parent / "plots"
            if not history:
                warnings.warn(f"no records in {args.history}; nothing to plot")
                print(f"warning: empty history {args.history}", file=sys.stderr)
                return 0
            for path in emit_plots(history, [], out):
                print(path)
        elif args.command == "ablate":
            state, exp = _experiment_for(args)
            splits = ingest_dataset(exp.dataset)
            stages = exp.train.stages_enabled(len(exp.network.stages))
            rows = ablation_report(state.network, splits.val, exp.reward, stages)
            for row in rows:
                print(json.dumps(row, sort_keys=True))
            if args.out:
                Path(args.out).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
        elif args.command == "selftest":
            from .. import selftest
            return 0 if selftest.run() else 1
    except (ConfigError, CheckpointError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
