"""Config -> run -> metrics -> plots."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

import torch

from ..backbone import Network, build_network
from ..config import ExperimentConfig
from ..trainer import make_optimizers, train
from .checkpoint import checkpoint, restore
from .data import Splits, ingest_dataset
from .diagnostics import emit_plots, snapshot_attention
from .metrics import log_metrics

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
TIMING_FILE = "timing.jsonl"
CHECKPOINT_FILE = "checkpoint.pt"


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)


def build(cfg: ExperimentConfig) -> tuple[Network, Splits]:
    seed_everything(cfg.train.seed)
    return build_network(cfg.network), ingest_dataset(cfg.dataset)


def run_experiment(cfg: ExperimentConfig, resume: Optional[str | Path] = None,
                   stop_epoch: Optional[int] = None, splits: Optional[Splits] = None,
                   checkpoint_every: int = 1) -> list:
    """Train per ``cfg``, writing metrics, a rolling checkpoint and (at the end) plots.

    ``resume`` continues from a checkpoint; ``stop_epoch`` ends early (the
    checkpoint then allows picking the run up again).
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path, timing_path, ckpt_path = out / METRICS_FILE, out / TIMING_FILE, out / CHECKPOINT_FILE
    if splits is None:
        splits = ingest_dataset(cfg.dataset)
    if resume is not None:
        state = restore(resume)
        network, optimizers, start, history = state.network, state.optimizers, state.epoch, state.history
        # the metric file is rewritten from the checkpointed history
        metrics_path.write_text("".join(r.to_json() + "\n" for r in history), encoding="utf-8")
    else:
        seed_everything(cfg.train.seed)
        network = build_network(cfg.network)
        optimizers = make_optimizers(network, cfg.train)
        start, history = 0, []
        metrics_path.write_text("", encoding="utf-8")
        timing_path.write_text("", encoding="utf-8")

    def on_epoch(rec, opts):
        log_metrics(rec, metrics_path)
        with open(timing_path, "a", encoding="utf-8") as f:
            f.write(json.dumps({"epoch": rec.epoch, "seconds": rec.seconds}) + "\n")
        done = rec.epoch + 1
        if checkpoint_every and (done % checkpoint_every == 0 or done == cfg.train.epochs):
            checkpoint(network, opts, done, ckpt_path, history, cfg)

    train(network, splits, cfg.train, cfg.reward, optimizers, start, history, on_epoch,
          end_epoch=stop_epoch)
    finished = stop_epoch is None or stop_epoch >= cfg.train.epochs
    if finished and (cfg.plots.attention or cfg.plots.critique):
        snaps = []
        if cfg.plots.attention and len(splits.val):
            snaps = snapshot_attention(network, splits.val, cfg.train.stages_enabled(len(cfg.network.stages)))
        emit_plots(history, snaps, out / "plots", critique=cfg.plots.critique)
    return history
