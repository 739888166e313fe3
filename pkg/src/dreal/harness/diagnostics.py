"""Attention-distribution snapshots, bypass ablation reports and diagnostic plots."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..backbone import Network, Prediction
from ..config import RewardConfig
from ..reward import block_rewards, bypass_forward
from .metrics import MetricRecord, block_label


@dataclass
class AttentionSnapshot:
    block_id: tuple[int, int]
    kind: str
    mean: np.ndarray  # per channel, or (H, W) per location
    variance: np.ndarray
    count: int


def _split_batches(eval_set, batch_size):
    if isinstance(eval_set, torch.Tensor):
        for i in range(0, len(eval_set), batch_size):
            yield eval_set[i:i + batch_size], None
    else:
        yield from eval_set.batches(batch_size, shuffle=False)


@torch.no_grad()
def snapshot_attention(network: Network, eval_set, stages: Optional[Sequence[int]] = None,
                       batch_size: int = 256) -> list[AttentionSnapshot]:
    """Per-element mean and population variance of every action over ``eval_set``.

    Batches are merged with the pairwise (Chan et al.) update, so memory stays
    constant in the size of the evaluation set.
    """
    network.eval()
    dtype = next(network.parameters()).dtype
    acc: dict = {}
    for xb, _ in _split_batches(eval_set, batch_size):
        _, traces = network(xb.to(dtype))
        for t in traces:
            if stages is not None and t.block_id[0] not in stages:
                continue
            for slot, a in enumerate(t.actions):
                v = a.values.double()
                n_b = v.shape[0]
                mean_b = v.mean(0)
                m2_b = ((v - mean_b) ** 2).sum(0)
                key = (t.block_id, slot)
                if key not in acc:
                    acc[key] = [a.kind, n_b, mean_b, m2_b]
                    continue
                kind, n, mean, m2 = acc[key]
                tot = n + n_b
                delta = mean_b - mean
                acc[key] = [kind, tot, mean + delta * (n_b / tot), m2 + m2_b + delta ** 2 * (n * n_b / tot)]
    return [AttentionSnapshot(bid, kind, mean.numpy(), (m2 / n).numpy(), n)
            for (bid, _), (kind, n, mean, m2) in sorted(acc.items())]


@torch.no_grad()
def ablation_report(network: Network, eval_set, reward_cfg: RewardConfig = RewardConfig(),
                    stages: Optional[Sequence[int]] = None, batch_size: int = 256) -> list[dict]:
    """Bypass reward of every block in inference mode, one summary row per block."""
    network.eval()
    dtype = next(network.parameters()).dtype
    ids = [bid for bid in network.config.block_ids()
           if network.config.attention_kind != "none" and (stages is None or bid[0] in stages)]
    sums = {bid: {"reward": [], "correct": []} for bid in ids}
    for xb, yb in eval_set.batches(batch_size, shuffle=False):
        xb = xb.to(dtype)
        logits, _ = network(xb)
        records = block_rewards(Prediction(logits), bypass_forward(network, xb, ids), yb, reward_cfg)
        for bid, rec in records.items():
            sums[bid]["reward"].append(rec.reward.double())
            sums[bid]["correct"].append(rec.correct)
    rows = []
    for bid in ids:
        r = torch.cat(sums[bid]["reward"]) if sums[bid]["reward"] else torch.zeros(0)
        c = torch.cat(sums[bid]["correct"]) if sums[bid]["correct"] else torch.zeros(0, dtype=torch.bool)
        rows.append({
            "block": block_label(bid),
            "samples": int(r.numel()),
            "accuracy": float(c.double().mean()) if r.numel() else float("nan"),
            "mean_reward": float(r.mean()) if r.numel() else float("nan"),
            "mean_reward_correct": float(r[c].mean()) if c.any() else float("nan"),
            "max_abs_reward_correct": float(r[c].abs().max()) if c.any() else float("nan"),
        })
    return rows


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def critique_series(history: Sequence[MetricRecord]) -> dict[str, dict]:
    """``{block label: {"epochs", "q": {kind: [...]}, "r": [...]}}`` with None gaps."""
    labels = sorted({lab for rec in history for lab in rec.q} | {lab for rec in history for lab in rec.r})
    out = {}
    for lab in labels:
        kinds = sorted({k for rec in history for k in rec.q.get(lab, {})})
        out[lab] = {
            "epochs": [rec.epoch for rec in history],
            "q": {k: [rec.q.get(lab, {}).get(k) for rec in history] for k in kinds},
            "r": [rec.r.get(lab) for rec in history],
        }
    return out


def emit_plots(history: Sequence[MetricRecord], snapshots: Sequence[AttentionSnapshot],
               output_dir, critique: bool = True) -> list[Path]:
    """Write attention-distribution and Q/R plots plus JSON sidecars; returns written paths."""
    if not history:
        warnings.warn("empty metric history; no plots written")
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    by_block: dict = {}
    for snap in snapshots:
        by_block.setdefault(snap.block_id, []).append(snap)
    for bid, snaps in sorted(by_block.items()):
        lab = block_label(bid)
        data = {"block": lab, "actions": {}}
        fig, axes = plt.subplots(len(snaps), 1, figsize=(8, 2.8 * len(snaps)), squeeze=False)
        for ax, snap in zip(axes[:, 0], snaps):
            mean, var = snap.mean.ravel(), snap.variance.ravel()
            x = np.arange(mean.size)
            ax.plot(x, mean, lw=1.2)
            ax.fill_between(x, mean - 3 * var, mean + 3 * var, alpha=0.3)
            ax.set_xlabel("channel index" if snap.kind != "spatial" else "location index")
            ax.set_ylabel(f"{snap.kind} attention")
            ax.set_title(f"{lab} {snap.kind}")
            data["actions"][snap.kind] = {"mean": mean.tolist(), "variance": var.tolist(),
                                          "shape": list(snap.mean.shape), "count": snap.count}
        fig.tight_layout()
        png = out / f"attention_{lab}.png"
        fig.savefig(png, dpi=80)
        plt.close(fig)
        _write_json(out / f"attention_{lab}.json", data)
        written += [png, out / f"attention_{lab}.json"]

    for lab, series in (critique_series(history) if critique else {}).items():
        fig, ax = plt.subplots(figsize=(6, 3.5))
        epochs = np.array(series["epochs"])
        for kind, qs in series["q"].items():
            q = np.array([np.nan if v is None else v for v in qs], dtype=float)
            ax.plot(epochs, q, label=f"Q ({kind})")
        r = np.array([np.nan if v is None else v for v in series["r"]], dtype=float)
        ax.plot(epochs[~np.isnan(r)], r[~np.isnan(r)], "o--", ms=3, label="R")
        ax.set_xlabel("epoch")
        ax.set_title(lab)
        ax.legend()
        fig.tight_layout()
        png = out / f"critique_{lab}.png"
        fig.savefig(png, dpi=80)
        plt.close(fig)
        _write_json(out / f"critique_{lab}.json", {"block": lab, **series})
        written += [png, out / f"critique_{lab}.json"]
    return written


def critique_gap(history: Sequence[MetricRecord], epochs: Sequence[int]) -> float:
    """Mean ``|Q - R|`` over the given epochs, using blocks that were bypassed."""
    wanted = set(epochs)
    gaps = [abs(q - r) for rec in history if rec.epoch in wanted
            for lab, r in rec.r.items() if r is not None
            for q in rec.q.get(lab, {}).values() if q is not None]
    return float(np.mean(gaps)) if gaps else float("nan")
