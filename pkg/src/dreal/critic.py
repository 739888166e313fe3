"""Per-stage recurrent critics.

One scalar-state LSTM cell is shared by all blocks of a stage. At every block
it reads the reduced feature state concatenated with the flattened action plus
the carried hidden state, and its new hidden state is the block's Q-value.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import torch
from torch import nn


class CriticState(NamedTuple):
    h: torch.Tensor
    c: torch.Tensor

    @classmethod
    def zeros(cls, batch: int, dtype=None, device=None) -> "CriticState":
        z = torch.zeros(batch, dtype=dtype, device=device)
        return cls(z, z.clone())


def critic_key(stage: int, kind: str) -> str:
    return f"s{stage}_{kind}"


def reduce_state(feature: torch.Tensor, kind: str) -> torch.Tensor:
    """Pool an NCHW feature down to the length of the action it is paired with.

    channel/style actions are per channel, so the state is pooled over H x W;
    spatial actions are per location, so the state is pooled over channels and
    flattened row-major to ``H*W``.
    """
    if kind in ("channel", "style"):
        return feature.mean(dim=(2, 3))
    if kind == "spatial":
        return feature.mean(dim=1).flatten(1)
    raise ValueError(f"unknown action kind {kind!r}")


def critic_param_count(size: int) -> int:
    """Exact parameter count of one critic: 4 gates x (2*size inputs + hidden + bias)."""
    if size < 1:
        raise ValueError("size must be >= 1")
    return 4 * (2 * size + 2)


def bias_free_param_estimate(size: int) -> int:
    # the usual back-of-envelope figure that ignores gate biases
    return 4 * (2 * size + 1)


class RecurrentCritic(nn.Module):
    """Scalar LSTM cell; gate rows are ordered input, forget, candidate, output."""

    def __init__(self, size: int, init_range: float = 0.1):
        super().__init__()
        self.size = size
        self.weight = nn.Parameter(torch.empty(4, 2 * size + 1).uniform_(-init_range, init_range))
        self.bias = nn.Parameter(torch.tensor([0.0, 1.0, 0.0, 0.0]))

    def step(self, reduced: torch.Tensor, action: torch.Tensor, state: CriticState,
             frozen: bool = False) -> CriticState:
        if reduced.shape != action.shape or reduced.shape[1] != self.size:
            raise ValueError(f"critic of size {self.size} got state {tuple(reduced.shape)} "
                             f"and action {tuple(action.shape)}")
        w, b = self.weight, self.bias
        if frozen:
            w, b = w.detach(), b.detach()
        x = torch.cat([reduced, action, state.h.unsqueeze(1)], dim=1)
        gates = x @ w.t() + b
        i = torch.sigmoid(gates[:, 0])
        f = torch.sigmoid(gates[:, 1])
        g = torch.tanh(gates[:, 2])
        o = torch.sigmoid(gates[:, 3])
        c = f * state.c + i * g
        return CriticState(o * torch.tanh(c), c)

    def forward(self, reduced, action, state):
        return self.step(reduced, action, state)


def critic_step(reduced, action, state: CriticState, critic: RecurrentCritic,
                frozen: bool = False) -> CriticState:
    return critic.step(reduced, action, state, frozen=frozen)


def q_value(state: CriticState) -> torch.Tensor:
    return state.h


def rollout(critic: RecurrentCritic, steps: Iterable[tuple[torch.Tensor, torch.Tensor]],
            frozen: bool = False) -> list[torch.Tensor]:
    """Run the critic over one stage from a zero state; returns Q per step."""
    qs = []
    state = None
    for reduced, action in steps:
        if state is None:
            state = CriticState.zeros(reduced.shape[0], reduced.dtype, reduced.device)
        state = critic.step(reduced, action, state, frozen=frozen)
        qs.append(q_value(state))
    return qs


def critique(critics: nn.ModuleDict, traces: Sequence, stages: Sequence[int],
             actions: dict | None = None, detach_actions: bool = False,
             frozen: bool = False) -> dict[tuple[tuple[int, int], int], torch.Tensor]:
    """Q-values for every traced block in ``stages``.

    Returns ``{(block_id, slot): Q}`` where ``slot`` indexes the block's actors.
    The feature state enters detached, so no critic gradient reaches the
    backbone. ``actions`` optionally replaces trace actions, keyed like the result.
    """
    out = {}
    by_stage: dict[int, list] = {}
    for t in traces:
        by_stage.setdefault(t.block_id[0], []).append(t)
    for s in stages:
        stage_traces = sorted(by_stage.get(s, []), key=lambda t: t.block_id[1])
        if not stage_traces:
            continue
        for slot, action0 in enumerate(stage_traces[0].actions):
            critic = critics[critic_key(s, action0.kind)]
            steps = []
            for t in stage_traces:
                a = t.actions[slot] if actions is None else actions[(t.block_id, slot)]
                a = a.flat()
                if detach_actions:
                    a = a.detach()
                steps.append((reduce_state(t.states[slot].detach(), action0.kind), a))
            for t, q in zip(stage_traces, rollout(critic, steps, frozen=frozen)):
                out[(t.block_id, slot)] = q
    return out
