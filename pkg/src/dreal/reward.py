"""Bypass rewards.

A block's reward measures how much the ground-truth probability drops when its
attention map is flattened to its per-sample mean while every other block keeps
its live attention. Misclassified samples are penalised with ``-gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .actors import mean_substitute
from .backbone import BlockId, Network, Prediction, frozen_running_stats
from .config import RewardConfig, StageSpec


@dataclass
class RewardRecord:
    block_id: BlockId
    reward: torch.Tensor
    p_full: torch.Tensor
    p_bypassed: torch.Tensor
    correct: torch.Tensor


def is_correct(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """True where the ground-truth score is at least every other score (ties count)."""
    true = logits.gather(1, labels[:, None]).squeeze(1)
    return true >= logits.max(dim=1).values


def compute_reward(p_full, p_bypassed, correct, cfg: RewardConfig = RewardConfig()):
    """``1 - p_bypassed / (p_full + eps)`` where correct, ``-gamma`` elsewhere.

    Works elementwise on tensors; plain floats/bools give a float back.
    """
    scalar = not torch.is_tensor(p_full)
    p_full = torch.as_tensor(p_full, dtype=torch.float64 if scalar else None)
    p_bypassed = torch.as_tensor(p_bypassed, dtype=p_full.dtype)
    correct = torch.as_tensor(correct, dtype=torch.bool)
    ratio = 1.0 - p_bypassed / (p_full + cfg.ratio_epsilon)
    r = torch.where(correct, ratio, torch.full_like(ratio, -cfg.gamma))
    return float(r) if scalar else r


def select_bypass_blocks(epoch: int, stages: Sequence[StageSpec],
                         enabled: Sequence[int] | None = None) -> list[BlockId]:
    """Round-robin: stage ``s`` bypasses block ``epoch mod num_blocks_s``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    enabled = range(len(stages)) if enabled is None else enabled
    return [(s, epoch % stages[s].num_blocks) for s in enabled]


@torch.no_grad()
def bypass_forward(network: Network, batch: torch.Tensor,
                   block_ids: Sequence[BlockId]) -> dict[BlockId, Prediction]:
    """One extra forward pass per block with only that block mean-substituted.

    Runs in whatever train/eval mode the network is in, records no gradients
    and leaves all buffers (BN running statistics) untouched.
    """
    for bid in block_ids:
        network.block(bid)
    out = {}
    with frozen_running_stats(network):
        for bid in block_ids:
            logits, _ = network(batch, {bid: mean_substitute})
            out[bid] = Prediction(logits)
    return out


def block_rewards(full: Prediction, bypassed: dict[BlockId, Prediction], labels: torch.Tensor,
                  cfg: RewardConfig = RewardConfig()) -> dict[BlockId, RewardRecord]:
    correct = is_correct(full.logits, labels)
    p_full = full.probabilities.gather(1, labels[:, None]).squeeze(1)
    records = {}
    for bid, pred in bypassed.items():
        p_byp = pred.probabilities.gather(1, labels[:, None]).squeeze(1)
        records[bid] = RewardRecord(bid, compute_reward(p_full, p_byp, correct, cfg),
                                    p_full, p_byp, correct)
    return records
