"""Attention actors: channel (SE), CBAM channel + spatial, and style (SRM).

Feature maps are NCHW tensors. Channel and style actions are ``(B, C)``,
spatial actions are ``(B, H, W)``. Every actor ends in a sigmoid, so action
values lie in (0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

ACTION_KINDS = ("channel", "spatial", "style")


@dataclass
class AttentionAction:
    kind: str
    values: torch.Tensor

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        want = 3 if self.kind == "spatial" else 2
        if self.values.dim() != want:
            raise ValueError(f"{self.kind} action must be {want}-d, got shape {tuple(self.values.shape)}")

    def flat(self) -> torch.Tensor:
        return self.values.flatten(1)

    def detach(self) -> "AttentionAction":
        return AttentionAction(self.kind, self.values.detach())

    @classmethod
    def ones_like(cls, other: "AttentionAction") -> "AttentionAction":
        return cls(other.kind, torch.ones_like(other.values))


def channel_attention(feature, w0, b0, w1, b1):
    """``sigmoid(W1 relu(W0 avgpool(F)))`` with biases on both FC layers."""
    z = feature.mean(dim=(2, 3))
    return torch.sigmoid(F.linear(F.relu(F.linear(z, w0, b0)), w1, b1))


def cbam_channel_attention(feature, w0, b0, w1, b1):
    avg = feature.mean(dim=(2, 3))
    mx = feature.amax(dim=(2, 3))

    def mlp(z):
        return F.linear(F.relu(F.linear(z, w0, b0)), w1, b1)

    return torch.sigmoid(mlp(avg) + mlp(mx))


def spatial_attention(feature, kernel, bias):
    """7x7 conv over the channelwise [mean, max] maps, zero padding keeps H x W."""
    pooled = torch.cat([feature.mean(dim=1, keepdim=True),
                        feature.amax(dim=1, keepdim=True)], dim=1)
    pad = kernel.shape[-1] // 2
    return torch.sigmoid(F.conv2d(pooled, kernel, bias, padding=pad)).squeeze(1)


def style_pool(feature, strict=False):
    b, c, h, w = feature.shape
    if strict and h * w < 2:
        raise ValueError("style pooling needs H*W >= 2 in strict mode")
    flat = feature.reshape(b, c, h * w)
    # shifting by the first element keeps constant channels at exactly zero deviation
    shift = flat[..., :1].detach()
    d = flat - shift
    dmean = d.mean(-1)
    mean = dmean + shift.squeeze(-1)
    # population std; zero-variance channels get std 0 with a zero (not nan) gradient
    var = (d - dmean.unsqueeze(-1)).pow(2).mean(-1)
    pos = var > 0
    std = torch.where(pos, torch.sqrt(torch.where(pos, var, torch.ones_like(var))),
                      torch.zeros_like(var))
    return mean, std


def style_attention(feature, cfc_weight, cfc_bias, bn_weight, bn_bias,
                    running_mean=None, running_var=None, training=True,
                    momentum=0.1, eps=1e-5, strict=False):
    """SRM: channelwise (mean, std) -> per-channel 2-tap CFC -> BN -> sigmoid."""
    mean, std = style_pool(feature, strict=strict)
    z = cfc_weight[:, 0] * mean + cfc_weight[:, 1] * std + cfc_bias
    z = F.batch_norm(z, running_mean, running_var, bn_weight, bn_bias,
                     training=training, momentum=momentum, eps=eps)
    return torch.sigmoid(z)


def mean_substitute(action: AttentionAction) -> AttentionAction:
    """Replace every element with the per-sample mean of the action."""
    v = action.values
    flat = v.flatten(1)
    # shifted mean: exact (so idempotent) on constant actions
    shift = flat[:, :1]
    m = (shift + (flat - shift).mean(dim=1, keepdim=True)).squeeze(1)
    return AttentionAction(action.kind, m.view(-1, *([1] * (v.dim() - 1))).expand_as(v).clone())


class ChannelActor(nn.Module):
    kind = "channel"

    def __init__(self, channels: int, hidden: int, use_max: bool = False):
        super().__init__()
        self.fc0 = nn.Linear(channels, hidden)
        self.fc1 = nn.Linear(hidden, channels)
        self.use_max = use_max
        nn.init.zeros_(self.fc0.bias)
        nn.init.zeros_(self.fc1.bias)

    def forward(self, feature):
        fn = cbam_channel_attention if self.use_max else channel_attention
        return AttentionAction("channel", fn(feature, self.fc0.weight, self.fc0.bias,
                                             self.fc1.weight, self.fc1.bias))


class SpatialActor(nn.Module):
    kind = "spatial"

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)
        nn.init.zeros_(self.conv.bias)

    def forward(self, feature):
        return AttentionAction("spatial", spatial_attention(feature, self.conv.weight, self.conv.bias))


class StyleActor(nn.Module):
    kind = "style"

    def __init__(self, channels: int, strict: bool = False):
        super().__init__()
        self.cfc_weight = nn.Parameter(torch.empty(channels, 2).uniform_(-2 ** -0.5, 2 ** -0.5))
        self.cfc_bias = nn.Parameter(torch.zeros(channels))
        self.bn = nn.BatchNorm1d(channels)
        self.strict = strict

    def forward(self, feature):
        bn = self.bn
        track = not self.training or bn.track_running_stats
        values = style_attention(feature, self.cfc_weight, self.cfc_bias, bn.weight, bn.bias,
                                 bn.running_mean if track else None,
                                 bn.running_var if track else None, training=self.training,
                                 momentum=bn.momentum, eps=bn.eps, strict=self.strict)
        return AttentionAction("style", values)
