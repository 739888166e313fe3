"""Checkpoint container: network (all three parameter groups), optimizer state,
epoch, metric history and the config that built the network."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import torch

from ..backbone import Network, build_network
from ..config import ExperimentConfig, NetworkConfig, TrainConfig
from ..trainer import Optimizers, make_optimizers
from .metrics import MetricRecord

SCHEMA_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Resumed:
    network: Network
    optimizers: Optional[Optimizers]
    epoch: int  # number of completed epochs
    history: list
    experiment: Optional[ExperimentConfig]


def checkpoint(network: Network, optimizers: Optional[Optimizers], epoch: int, path,
               history=(), experiment: Optional[ExperimentConfig] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "network_config": network.config.to_dict(),
        "experiment": experiment.to_dict() if experiment is not None else None,
        "epoch": epoch,
        "model": network.state_dict(),
        "optimizers": optimizers.state_dict() if optimizers is not None else None,
        "history": [asdict(r) for r in history],
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def restore(path, network: Optional[Network] = None) -> Resumed:
    """Load a checkpoint, into ``network`` when given (its config must match)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"checkpoint schema version {version} is not supported "
                              f"(this build reads version {SCHEMA_VERSION})")
    saved_cfg = NetworkConfig.from_dict(payload["network_config"])
    if network is None:
        network = build_network(saved_cfg)
    elif network.config != saved_cfg:
        raise CheckpointError(f"network config mismatch: checkpoint has {payload['network_config']}, "
                              f"target network has {network.config.to_dict()}")
    network.load_state_dict(payload["model"])
    experiment = None
    if payload.get("experiment") is not None:
        experiment = ExperimentConfig.from_dict(payload["experiment"])
    optimizers = None
    if payload.get("optimizers") is not None:
        train_cfg = experiment.train if experiment is not None else TrainConfig()
        optimizers = make_optimizers(network, train_cfg)
        optimizers.load_state_dict(payload["optimizers"])
    history = [MetricRecord(**r) for r in payload.get("history", [])]
    return Resumed(network, optimizers, payload["epoch"], history, experiment)
