"""Alternating actor / critic / backbone optimisation.

Each step computes three losses from one forward pass:

* classification cross-entropy, the only loss that reaches backbone weights;
* quality loss ``-Q``, which reaches actor parameters through recomputed actions
  (actors re-run on detached states, critic weights frozen);
* regression loss ``(Q - R)^2`` on bypassed blocks, which reaches only the
  critics (actions detached).

Gradient blocking realises the partition, so a single backward pass suffices.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch
import torch.nn.functional as F

from .backbone import Network, Prediction, parameter_groups, frozen_running_stats
from .config import RewardConfig, TrainConfig
from .critic import critique
from .harness.data import Splits
from .harness.metrics import MetricRecord, block_label
from .reward import block_rewards, bypass_forward, select_bypass_blocks

log = logging.getLogger(__name__)


@dataclass
class Optimizers:
    backbone: torch.optim.SGD
    actors: Optional[torch.optim.SGD]
    critics: Optional[torch.optim.SGD]

    def all(self):
        return [o for o in (self.backbone, self.actors, self.critics) if o is not None]

    def set_lr(self, lr: float) -> None:
        for opt in self.all():
            for g in opt.param_groups:
                g["lr"] = lr

    def zero_grad(self) -> None:
        for opt in self.all():
            opt.zero_grad(set_to_none=True)

    def step(self) -> None:
        for opt in self.all():
            opt.step()

    def state_dict(self) -> dict:
        return {k: (o.state_dict() if o is not None else None)
                for k, o in (("backbone", self.backbone), ("actors", self.actors), ("critics", self.critics))}

    def load_state_dict(self, state: dict) -> None:
        for k in ("backbone", "actors", "critics"):
            opt = getattr(self, k)
            if (opt is None) != (state.get(k) is None):
                raise ValueError(f"optimizer state for {k!r} does not match the network")
            if opt is not None:
                opt.load_state_dict(state[k])


def make_optimizers(network: Network, cfg: TrainConfig) -> Optimizers:
    """SGD with momentum everywhere; critics get no weight decay."""
    groups = parameter_groups(network)

    def sgd(params, wd):
        if not params:
            return None
        return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=wd)

    return Optimizers(sgd(groups["backbone"], cfg.weight_decay),
                      sgd(groups["actors"], cfg.weight_decay),
                      sgd(groups["critics"], 0.0))


def classification_loss(pred, labels: torch.Tensor) -> torch.Tensor:
    logits = pred.logits if isinstance(pred, Prediction) else pred
    return F.cross_entropy(logits, labels)


def quality_loss(q_values) -> torch.Tensor:
    """Mean of ``-Q`` over samples and blocks."""
    q_values = list(q_values)
    if not q_values:
        return torch.zeros(())
    return -torch.stack(q_values).mean()


def regression_loss(q_values, rewards) -> torch.Tensor:
    q_values, rewards = list(q_values), list(rewards)
    if len(q_values) != len(rewards):
        raise ValueError("need one reward per Q-value")
    if not q_values:
        return torch.zeros(())
    return (torch.stack(q_values) - torch.stack(rewards)).pow(2).mean()


@dataclass
class LossBundle:
    l_c: torch.Tensor
    l_q: torch.Tensor
    l_r: torch.Tensor
    q_values: dict = field(default_factory=dict)  # {(block_id, slot): (B,) Q}
    rewards: dict = field(default_factory=dict)  # {block_id: RewardRecord}
    kinds: dict = field(default_factory=dict)  # {(block_id, slot): action kind}
    correct: int = 0
    count: int = 0


def _enabled_traces(network, traces, cfg: TrainConfig):
    stages = cfg.stages_enabled(len(network.config.stages)) if traces else ()
    return stages, [t for t in traces if t.block_id[0] in stages]


def recompute_actions(network: Network, traces) -> dict:
    """Re-run every traced actor on its detached input state.

    The results equal the live actions but only carry gradient to actor
    parameters; buffers are left as they were.
    """
    out = {}
    with frozen_running_stats(network):
        for t in traces:
            actors = network.block(t.block_id).attention.actors
            for k, state in enumerate(t.states):
                out[(t.block_id, k)] = actors[k](state.detach())
    return out


def _check_finite(name: str, value: torch.Tensor, where: str = "") -> None:
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"non-finite {name}{' at ' + where if where else ''}")


def train_step(network: Network, batch, optimizers: Optimizers, cfg: TrainConfig,
               reward_cfg: RewardConfig = RewardConfig(), epoch: int = 0) -> LossBundle:
    x, y = batch
    network.train()
    logits, traces = network(x)
    stages, traces = _enabled_traces(network, traces, cfg)
    l_c = classification_loss(logits, y)
    _check_finite("classification loss", l_c)
    zero = torch.zeros((), dtype=logits.dtype)
    l_q, l_r = zero, zero
    q_r, records, kinds = {}, {}, {}
    total = l_c

    if traces:
        kinds = {(t.block_id, k): a.kind for t in traces for k, a in enumerate(t.actions)}
        q_r = critique(network.critics, traces, stages, detach_actions=True)
        for key, q in q_r.items():
            _check_finite("Q-value", q, f"block {key[0]} ({kinds[key]})")
        if cfg.lambda_q > 0:
            acts = recompute_actions(network, traces)
            q_q = critique(network.critics, traces, stages, actions=acts, frozen=True)
            l_q = quality_loss(q_q.values())
            total = total + cfg.lambda_q * l_q
        else:
            l_q = quality_loss(q.detach() for q in q_r.values())
        selected = select_bypass_blocks(epoch, network.config.stages, stages)
        bypassed = bypass_forward(network, x, selected)
        records = block_rewards(Prediction(logits.detach()), bypassed, y, reward_cfg)
        pairs = [(q_r[key], records[key[0]].reward) for key in q_r if key[0] in records]
        l_r = regression_loss([p[0] for p in pairs], [p[1] for p in pairs])
        if cfg.lambda_r > 0:
            total = total + cfg.lambda_r * l_r
        for name, v in (("quality loss", l_q), ("regression loss", l_r)):
            _check_finite(name, v)

    optimizers.zero_grad()
    total.backward()
    optimizers.step()
    return LossBundle(l_c.detach(), l_q.detach(), l_r.detach(),
                      {k: v.detach() for k, v in q_r.items()}, records, kinds,
                      int((logits.argmax(1) == y).sum()), len(y))


def supervised_step(network: Network, batch, optimizers: Optimizers) -> LossBundle:
    """Plain cross-entropy step on backbone and actors; critics untouched."""
    x, y = batch
    network.train()
    logits, _ = network(x)
    l_c = classification_loss(logits, y)
    _check_finite("classification loss", l_c)
    optimizers.zero_grad()
    l_c.backward()
    optimizers.step()
    zero = torch.zeros((), dtype=logits.dtype)
    return LossBundle(l_c.detach(), zero, zero, correct=int((logits.argmax(1) == y).sum()), count=len(y))


@torch.no_grad()
def evaluate(network: Network, split, batch_size: int = 500) -> float:
    if len(split) == 0:
        return float("nan")
    network.eval()
    correct = 0
    for xb, yb in split.batches(batch_size, shuffle=False):
        logits, _ = network(xb.to(dtype=next(network.parameters()).dtype))
        correct += int((logits.argmax(1) == yb).sum())
    return correct / len(split)


def epoch_generator(seed: int, epoch: int) -> torch.Generator:
    # a fresh stream per epoch makes resumed runs replay the same batches
    return torch.Generator().manual_seed(seed * 1_000_003 + epoch)


class _EpochStats:
    def __init__(self):
        self.n = 0
        self.correct = 0
        self.sums = {"l_c": 0.0, "l_q": 0.0, "l_r": 0.0}
        self.q: dict = {}
        self.r: dict = {}

    def add(self, b: LossBundle):
        self.n += b.count
        self.correct += b.correct
        for k in self.sums:
            self.sums[k] += float(getattr(b, k)) * b.count
        for (bid, slot), q in b.q_values.items():
            key = (block_label(bid), b.kinds[(bid, slot)])
            s = self.q.setdefault(key, [0.0, 0])
            s[0] += float(q.sum())
            s[1] += q.numel()
        for bid, rec in b.rewards.items():
            s = self.r.setdefault(block_label(bid), [0.0, 0])
            s[0] += float(rec.reward.sum())
            s[1] += rec.reward.numel()

    def record(self, epoch, lr, val_acc, labels, seconds) -> MetricRecord:
        q = {}
        for (label, kind), (total, n) in sorted(self.q.items()):
            q.setdefault(label, {})[kind] = total / n
        r = {label: (self.r[label][0] / self.r[label][1] if label in self.r else None)
             for label in labels}
        n = max(self.n, 1)
        return MetricRecord(epoch=epoch, train_acc=self.correct / n, val_acc=val_acc,
                            l_c=self.sums["l_c"] / n, l_q=self.sums["l_q"] / n,
                            l_r=self.sums["l_r"] / n, lr=lr, q=q, r=r, seconds=seconds)


def enabled_block_labels(network: Network, cfg: TrainConfig) -> list[str]:
    if network.config.attention_kind == "none" or not cfg.reinforce:
        return []
    stages = cfg.stages_enabled(len(network.config.stages))
    return [block_label(bid) for bid in network.config.block_ids() if bid[0] in stages]


def train(network: Network, data: Splits, cfg: TrainConfig,
          reward_cfg: RewardConfig = RewardConfig(), optimizers: Optional[Optimizers] = None,
          start_epoch: int = 0, history: Optional[list] = None,
          on_epoch: Optional[Callable[[MetricRecord, Optimizers], None]] = None,
          end_epoch: Optional[int] = None) -> list[MetricRecord]:
    """Run epochs ``start_epoch .. end_epoch`` (default ``cfg.epochs``) and return the history.

    With ``cfg.reinforce`` false the same loop runs plain supervised steps,
    which is the vanilla attention baseline.
    """
    optimizers = optimizers or make_optimizers(network, cfg)
    history = [] if history is None else history
    labels = enabled_block_labels(network, cfg)
    dtype = next(network.parameters()).dtype
    for epoch in range(start_epoch, cfg.epochs if end_epoch is None else end_epoch):
        t0 = time.perf_counter()
        lr = cfg.learning_rate(epoch)
        optimizers.set_lr(lr)
        stats = _EpochStats()
        for xb, yb in data.train.batches(cfg.batch_size, epoch_generator(cfg.seed, epoch)):
            xb = xb.to(dtype)
            if cfg.reinforce:
                stats.add(train_step(network, (xb, yb), optimizers, cfg, reward_cfg, epoch))
            else:
                stats.add(supervised_step(network, (xb, yb), optimizers))
        val_acc = evaluate(network, data.val) if len(data.val) else None
        rec = stats.record(epoch, lr, val_acc, labels, time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d lr %.4g train %.4f val %s l_c %.4f l_q %.4f l_r %.4f", epoch, lr,
                 rec.train_acc, val_acc, rec.l_c, rec.l_q, rec.l_r)
        if on_epoch is not None:
            on_epoch(rec, optimizers)
    return history
