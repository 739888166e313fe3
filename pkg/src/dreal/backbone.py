"""Pre-activation residual network with an attention hook in every block.

The attention unit sits at the end of the residual branch, before the skip
addition. ``forward`` accepts per-block overrides so that any block's action can
be swapped out (e.g. for its mean) while all other actors stay live.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import torch
import torch.nn.functional as F
from torch import nn

from .actors import AttentionAction, ChannelActor, SpatialActor, StyleActor
from .config import NetworkConfig
from .critic import RecurrentCritic, critic_key

BlockId = tuple[int, int]
Override = Union[AttentionAction, tuple, Callable[[AttentionAction], AttentionAction]]


@dataclass
class Prediction:
    logits: torch.Tensor
    probabilities: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.probabilities = torch.softmax(self.logits, dim=1)


@dataclass
class BlockTrace:
    block_id: BlockId
    states: tuple[torch.Tensor, ...]
    actions: tuple[AttentionAction, ...]
    q_values: Optional[tuple[torch.Tensor, ...]] = None

    @property
    def feature(self) -> torch.Tensor:
        return self.states[0]

    @property
    def action(self) -> AttentionAction:
        return self.actions[0]


def extract(feature: torch.Tensor) -> torch.Tensor:
    """Global average pool over H x W: ``(B, C, H, W) -> (B, C)``."""
    return feature.mean(dim=(2, 3))


def recalibrate(feature: torch.Tensor, action: AttentionAction | torch.Tensor) -> torch.Tensor:
    a = action.values if isinstance(action, AttentionAction) else action
    b, c, h, w = feature.shape
    if a.shape == (b, c):
        return feature * a[:, :, None, None]
    if a.shape == (b, h, w):
        return feature * a[:, None, :, :]
    raise ValueError(f"action of shape {tuple(a.shape)} does not broadcast over "
                     f"feature of shape {tuple(feature.shape)}")


class AttentionUnit(nn.Module):
    """The actor(s) attached to one residual block.

    ``spatial_channel`` chains a CBAM channel actor and a spatial actor; the
    spatial actor reads the channel-recalibrated feature.
    """

    def __init__(self, kind: str, channels: int, hidden: int):
        super().__init__()
        if kind == "channel":
            actors = [ChannelActor(channels, hidden)]
        elif kind == "spatial_channel":
            actors = [ChannelActor(channels, hidden, use_max=True), SpatialActor()]
        elif kind == "style":
            actors = [StyleActor(channels)]
        else:
            raise ValueError(f"no actors for attention kind {kind!r}")
        self.actors = nn.ModuleList(actors)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(a.kind for a in self.actors)

    def forward(self, feature, override: Optional[Override] = None):
        """Return ``(recalibrated, states, applied_actions)``.

        ``override`` is a tuple of actions (one per actor) applied instead of the
        live ones, or a callable mapping each live action to the one to apply.
        Live actions are computed either way.
        """
        if isinstance(override, AttentionAction):
            override = (override,)
        if override is not None and not callable(override) and len(override) != len(self.actors):
            raise ValueError(f"override needs {len(self.actors)} action(s), got {len(override)}")
        states, applied = [], []
        x = feature
        for i, actor in enumerate(self.actors):
            live = actor(x)
            if override is None:
                act = live
            elif callable(override):
                act = override(live)
            else:
                act = override[i]
            states.append(x)
            applied.append(act)
            x = recalibrate(x, act)
        return x, tuple(states), tuple(applied)


def _conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)


class PreActBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, attention: Optional[AttentionUnit]):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(cin)
        self.conv1 = _conv3x3(cin, cout, stride)
        self.bn2 = nn.BatchNorm2d(cout)
        self.conv2 = _conv3x3(cout, cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)
        self.attention = attention

    def forward(self, x, override=None):
        out = F.relu(self.bn1(x))
        skip = self.shortcut(out) if self.shortcut is not None else x
        out = self.conv1(out)
        out = self.conv2(F.relu(self.bn2(out)))
        states, actions = (), ()
        if self.attention is not None:
            out, states, actions = self.attention(out, override)
        return out + skip, states, actions


class Network(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        h, w, cin = config.input_shape
        kind = config.attention_kind
        c0 = config.stages[0].channels
        self.stem = _conv3x3(cin, c0)
        self.stages = nn.ModuleList()
        self.critics = nn.ModuleDict()
        prev = c0
        for s, spec in enumerate(config.stages):
            blocks = nn.ModuleList()
            for b in range(spec.num_blocks):
                unit = None
                if kind != "none":
                    unit = AttentionUnit(kind, spec.channels, config.hidden_units(spec.channels))
                stride = spec.stride_in if b == 0 else 1
                blocks.append(PreActBlock(prev, spec.channels, stride, unit))
                prev = spec.channels
            self.stages.append(blocks)
            if kind != "none":
                for a in blocks[0].attention.actors:
                    size = spec.spatial_size[0] * spec.spatial_size[1] if a.kind == "spatial" else spec.channels
                    self.critics[critic_key(s, a.kind)] = RecurrentCritic(size)
        self.bn = nn.BatchNorm2d(prev)
        self.fc = nn.Linear(prev, config.num_classes)
        for name, m in self.named_modules():
            if isinstance(m, nn.Conv2d) and ".attention." not in name:
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    @property
    def actors(self) -> list[nn.Module]:
        return [a for blocks in self.stages for blk in blocks if blk.attention is not None
                for a in blk.attention.actors]

    def block(self, block_id: BlockId) -> PreActBlock:
        s, b = block_id
        if not (0 <= s < len(self.stages) and 0 <= b < len(self.stages[s])):
            raise KeyError(f"unknown block id {block_id}")
        return self.stages[s][b]

    def forward(self, x, overrides: Optional[Mapping[BlockId, Override]] = None):
        overrides = dict(overrides or {})
        for bid in overrides:
            self.block(bid)
            if self.block(bid).attention is None:
                raise KeyError(f"block {bid} has no attention module to override")
        h, w, cin = self.config.input_shape
        if tuple(x.shape[1:]) != (cin, h, w):
            raise ValueError(f"batch shape {tuple(x.shape[1:])} does not match input (C, H, W) = {(cin, h, w)}")
        traces = []
        out = self.stem(x)
        for s, blocks in enumerate(self.stages):
            for b, blk in enumerate(blocks):
                out, states, actions = blk(out, overrides.get((s, b)))
                if actions:
                    traces.append(BlockTrace((s, b), states, actions))
        out = F.relu(self.bn(out))
        logits = self.fc(out.mean(dim=(2, 3)))
        return logits, traces


def build_network(config: NetworkConfig) -> Network:
    return Network(config)


def forward(network: Network, batch: torch.Tensor,
            overrides: Optional[Mapping[BlockId, Override]] = None):
    logits, traces = network(batch, overrides)
    return Prediction(logits), traces


def parameter_groups(network: Network) -> dict[str, list[nn.Parameter]]:
    """Split trainable parameters into backbone, actor and critic groups."""
    groups = {"backbone": [], "actors": [], "critics": []}
    for name, p in network.named_parameters():
        if name.startswith("critics."):
            groups["critics"].append(p)
        elif ".attention." in name:
            groups["actors"].append(p)
        else:
            groups["backbone"].append(p)
    return groups


def ones_overrides(network: Network) -> dict[BlockId, Callable]:
    return {bid: AttentionAction.ones_like for bid in network.config.block_ids()}


@contextlib.contextmanager
def frozen_running_stats(module: nn.Module):
    """Side passes: BN layers use batch statistics in train mode but never update
    their running statistics (and eval mode keeps using them)."""
    bns = [m for m in module.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    saved = [m.track_running_stats for m in bns]
    for m in bns:
        m.track_running_stats = False
    try:
        yield
    finally:
        for m, flag in zip(bns, saved):
            m.track_running_stats = flag
