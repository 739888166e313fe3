"""Declarative configuration for networks, training, rewards and experiments.

Configs are plain dataclasses validated on construction. ``load_config`` reads a
TOML file, rejects unknown keys and fills documented defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import tomli

ATTENTION_KINDS = ("channel", "spatial_channel", "style", "none")
MIN_HIDDEN = 4


class ConfigError(ValueError):
    """Raised when a configuration value violates its constraint."""

    def __init__(self, field_name: str, constraint: str, value: Any = None):
        self.field = field_name
        self.constraint = constraint
        msg = f"{field_name}: {constraint}"
        if value is not None:
            msg += f" (got {value!r})"
        super().__init__(msg)


@dataclass(frozen=True)
class StageSpec:
    num_blocks: int
    channels: int
    spatial_size: tuple[int, int]
    stride_in: int = 1

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ConfigError("stage.num_blocks", "must be >= 1", self.num_blocks)
        if self.channels <= 0:
            raise ConfigError("stage.channels", "must be > 0", self.channels)
        if len(self.spatial_size) != 2 or min(self.spatial_size) <= 0:
            raise ConfigError("stage.spatial_size", "must be two positive ints", self.spatial_size)
        if self.stride_in < 1:
            raise ConfigError("stage.stride_in", "must be >= 1", self.stride_in)


@dataclass(frozen=True)
class NetworkConfig:
    stages: tuple[StageSpec, ...]
    num_classes: int = 10
    attention_kind: str = "channel"
    reduction_ratio: int = 16
    input_shape: tuple[int, int, int] = (32, 32, 3)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if not self.stages:
            raise ConfigError("network.stages", "must be non-empty")
        if self.num_classes < 2:
            raise ConfigError("network.num_classes", "must be >= 2", self.num_classes)
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError("network.attention_kind", f"must be one of {ATTENTION_KINDS}",
                              self.attention_kind)
        if self.reduction_ratio < 1:
            raise ConfigError("network.reduction_ratio", "must be >= 1", self.reduction_ratio)
        for s in self.stages:
            if s.channels % self.reduction_ratio:
                raise ConfigError("network.reduction_ratio",
                                  f"must divide every stage's channel count ({s.channels})",
                                  self.reduction_ratio)
        if len(self.input_shape) != 3 or min(self.input_shape) <= 0:
            raise ConfigError("network.input_shape", "must be (H, W, C_in) positive",
                              self.input_shape)
        h, w = self.input_shape[:2]
        for i, s in enumerate(self.stages):
            h, w = -(-h // s.stride_in), -(-w // s.stride_in)
            if tuple(s.spatial_size) != (h, w):
                raise ConfigError(f"network.stages[{i}].spatial_size",
                                  f"must equal {(h, w)} given input_shape and strides",
                                  s.spatial_size)

    @classmethod
    def resnet(cls, blocks_per_stage: int | Sequence[int] = 3,
               channels: Sequence[int] = (16, 32, 64),
               input_shape: Sequence[int] = (32, 32, 3), **kwargs) -> "NetworkConfig":
        """CIFAR-style pre-activation layout: first stage stride 1, later stages stride 2."""
        if isinstance(blocks_per_stage, int):
            blocks_per_stage = [blocks_per_stage] * len(channels)
        if len(blocks_per_stage) != len(channels):
            raise ConfigError("network.num_blocks", "must have one entry per stage",
                              list(blocks_per_stage))
        h, w = input_shape[0], input_shape[1]
        stages = []
        for i, (n, c) in enumerate(zip(blocks_per_stage, channels)):
            stride = 1 if i == 0 else 2
            h, w = -(-h // stride), -(-w // stride)
            stages.append(StageSpec(int(n), int(c), (h, w), stride))
        return cls(stages=tuple(stages), input_shape=tuple(input_shape), **kwargs)

    @property
    def num_blocks(self) -> int:
        return sum(s.num_blocks for s in self.stages)

    def hidden_units(self, channels: int) -> int:
        # r is clamped so the bottleneck keeps at least MIN_HIDDEN units
        r = self.reduction_ratio
        if channels // r < MIN_HIDDEN:
            r = max(1, channels // MIN_HIDDEN)
        return channels // r

    def block_ids(self) -> list[tuple[int, int]]:
        return [(s, b) for s, st in enumerate(self.stages) for b in range(st.num_blocks)]

    def to_dict(self) -> dict:
        return {
            "num_blocks": [s.num_blocks for s in self.stages],
            "channels": [s.channels for s in self.stages],
            "strides": [s.stride_in for s in self.stages],
            "num_classes": self.num_classes,
            "attention_kind": self.attention_kind,
            "reduction_ratio": self.reduction_ratio,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        _reject_unknown("network", d, {"num_blocks", "channels", "strides", "num_classes",
                                        "attention_kind", "reduction_ratio", "input_shape"})
        channels = d.pop("channels", [16, 32, 64])
        num_blocks = d.pop("num_blocks", 3)
        if isinstance(num_blocks, int):
            num_blocks = [num_blocks] * len(channels)
        strides = d.pop("strides", [1] + [2] * (len(channels) - 1))
        input_shape = tuple(d.pop("input_shape", (32, 32, 3)))
        if not (len(channels) == len(num_blocks) == len(strides)):
            raise ConfigError("network", "channels, num_blocks and strides must have equal length")
        h, w = input_shape[0], input_shape[1]
        stages = []
        for n, c, s in zip(num_blocks, channels, strides):
            h, w = -(-h // s), -(-w // s)
            stages.append(StageSpec(int(n), int(c), (h, w), int(s)))
        return cls(stages=tuple(stages), input_shape=input_shape, **d)


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 1.0
    ratio_epsilon: float = 1e-10

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError("reward.gamma", "must be >= 0", self.gamma)
        if not 0 < self.ratio_epsilon <= 1e-6:
            raise ConfigError("reward.ratio_epsilon", "must be in (0, 1e-6]", self.ratio_epsilon)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.1
    lr_decay_epochs: tuple[int, ...] = (30, 45)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lambda_q: float = 1.0
    lambda_r: float = 1.0
    enabled_stages: Optional[tuple[int, ...]] = None
    reinforce: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(self.lr_decay_epochs))
        if self.enabled_stages is not None:
            object.__setattr__(self, "enabled_stages", tuple(self.enabled_stages))
            if not self.enabled_stages:
                raise ConfigError("train.enabled_stages", "must be non-empty")
        if self.epochs < 1:
            raise ConfigError("train.epochs", "must be >= 1", self.epochs)
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1", self.batch_size)
        if not self.lr > 0:
            raise ConfigError("train.lr", "must be > 0", self.lr)
        for name in ("lambda_q", "lambda_r", "weight_decay", "momentum"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"train.{name}", "must be >= 0", getattr(self, name))

    def learning_rate(self, epoch: int) -> float:
        """Step decay: multiply by ``lr_decay_factor`` at every milestone already reached."""
        passed = sum(1 for m in self.lr_decay_epochs if epoch >= m)
        return self.lr * self.lr_decay_factor ** passed

    def stages_enabled(self, num_stages: int) -> tuple[int, ...]:
        if self.enabled_stages is None:
            return tuple(range(num_stages))
        for s in self.enabled_stages:
            if not 0 <= s < num_stages:
                raise ConfigError("train.enabled_stages", f"stage index out of range [0, {num_stages})", s)
        return tuple(sorted(set(self.enabled_stages)))


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "synthetic"
    root: Optional[str] = None
    num_classes: int = 10
    num_train: int = 4000
    num_val: int = 2000
    image_size: int = 16
    channels: int = 3
    noise: float = 1.5
    blobs_per_class: int = 3
    seed: int = 1234
    augment: bool = True
    crop_padding: int = 2

    def __post_init__(self):
        if self.name not in ("synthetic", "cifar10"):
            raise ConfigError("dataset.name", "must be 'synthetic' or 'cifar10'", self.name)
        if self.name == "cifar10" and not self.root:
            raise ConfigError("dataset.root", "required for cifar10")
        if self.num_classes < 2:
            raise ConfigError("dataset.num_classes", "must be >= 2", self.num_classes)
        if self.num_train < 1 or self.num_val < 0:
            raise ConfigError("dataset.num_train", "must be >= 1 (num_val >= 0)", self.num_train)
        if self.noise < 0:
            raise ConfigError("dataset.noise", "must be >= 0", self.noise)
        if self.crop_padding < 0:
            raise ConfigError("dataset.crop_padding", "must be >= 0", self.crop_padding)


@dataclass(frozen=True)
class PlotConfig:
    attention: bool = True
    critique: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    output_dir: str = "runs/default"
    plots: PlotConfig = field(default_factory=PlotConfig)

    def __post_init__(self):
        self.train.stages_enabled(len(self.network.stages))
        shape = self.network.input_shape
        ds = self.dataset
        if ds.name == "synthetic":
            if (ds.image_size, ds.image_size, ds.channels) != tuple(shape):
                raise ConfigError("network.input_shape",
                                  "must match dataset image_size/channels", shape)
            if ds.num_classes != self.network.num_classes:
                raise ConfigError("network.num_classes", "must match dataset.num_classes",
                                  self.network.num_classes)

    def to_dict(self) -> dict:
        out = {"network": self.network.to_dict(), "output_dir": self.output_dir}
        for name in ("train", "reward", "dataset", "plots"):
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v
                         for k, v in d.items() if v is not None}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        _reject_unknown("config", d, {"network", "train", "reward", "dataset", "output_dir", "plots"})
        kwargs: dict[str, Any] = {}
        for name, klass in (("train", TrainConfig), ("reward", RewardConfig),
                            ("dataset", DatasetConfig), ("plots", PlotConfig)):
            section = dict(d.get(name, {}))
            _reject_unknown(name, section, {f.name for f in dataclasses.fields(klass)})
            try:
                kwargs[name] = klass(**section)
            except TypeError as exc:
                raise ConfigError(name, str(exc)) from exc
        # input shape and class count default to the dataset's
        net = dict(d.get("network", {}))
        ds = kwargs["dataset"]
        net.setdefault("input_shape", [ds.image_size, ds.image_size, ds.channels])
        net.setdefault("num_classes", ds.num_classes)
        kwargs["network"] = NetworkConfig.from_dict(net)
        if "output_dir" in d:
            kwargs["output_dir"] = str(d["output_dir"])
        return cls(**kwargs)


def _reject_unknown(section: str, d: dict, allowed: set) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown key")


def _parse_value(text: str) -> Any:
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(tree: dict, overrides: Sequence[str]) -> dict:
    """Apply ``section.key=value`` strings to a raw config tree (values parsed as TOML)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "path does not name a section")
        node[parts[-1]] = _parse_value(text.strip())
    return tree


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as f:
        try:
            tree = tomli.load(f)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML: {exc}") from exc
    return ExperimentConfig.from_dict(apply_overrides(tree, overrides))
