"""Dataset ingestion: a seeded synthetic blob dataset and CIFAR-10 from disk."""
from __future__ import annotations

import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch

from ..config import DatasetConfig


@dataclass
class Split:
    images: torch.Tensor  # (N, C, H, W), normalized
    labels: torch.Tensor  # (N,) int64
    augment: bool = False
    crop_padding: int = 0

    def __len__(self):
        return len(self.labels)

    def transform(self, images: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Random crop-with-padding and horizontal flip when augmenting, identity otherwise."""
        if not self.augment:
            return images
        b, c, h, w = images.shape
        p = self.crop_padding
        out = images
        if p > 0:
            padded = torch.nn.functional.pad(images, (p, p, p, p))
            dy = torch.randint(0, 2 * p + 1, (b,), generator=generator)
            dx = torch.randint(0, 2 * p + 1, (b,), generator=generator)
            rows = (dy[:, None] + torch.arange(h))[:, None, :, None]
            cols = (dx[:, None] + torch.arange(w))[:, None, None, :]
            out = padded[torch.arange(b)[:, None, None, None], torch.arange(c)[None, :, None, None], rows, cols]
        flip = torch.rand(b, generator=generator) < 0.5
        return torch.where(flip[:, None, None, None], out.flip(-1), out)

    def batches(self, batch_size: int, generator: Optional[torch.Generator] = None,
                shuffle: Optional[bool] = None) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Yield ``(images, labels)``; shuffles when a generator is given.

        A trailing batch of one sample is dropped (batch statistics need two).
        """
        n = len(self)
        shuffle = generator is not None if shuffle is None else shuffle
        order = torch.randperm(n, generator=generator) if shuffle else torch.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2 and n >= 2:
                break
            yield self.transform(self.images[idx], generator), self.labels[idx]


@dataclass
class Splits:
    train: Split
    val: Split
    num_classes: int


def _blob_images(rng: np.random.Generator, labels: np.ndarray, templates: dict,
                 size: int, channels: int, noise: float) -> np.ndarray:
    n = len(labels)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    imgs = rng.normal(0.0, noise, size=(n, channels, size, size))
    centers, sigmas, colors = templates["centers"], templates["sigmas"], templates["colors"]
    for i, k in enumerate(labels):
        for j in range(centers.shape[1]):
            cy, cx = centers[k, j] + rng.normal(0.0, 1.0, 2)
            amp = rng.uniform(0.6, 1.4)
            g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigmas[k, j] ** 2))
            imgs[i] += amp * colors[k, j][:, None, None] * g
        # one class-independent distractor blob per image
        cy, cx = rng.uniform(0, size, 2)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rng.uniform(1.0, 2.5) ** 2))
        imgs[i] += rng.normal(0.0, 1.0, channels)[:, None, None] * g
    return imgs


def synthetic_splits(cfg: DatasetConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    k, m, size = cfg.num_classes, cfg.blobs_per_class, cfg.image_size
    templates = {
        "centers": rng.uniform(0.2 * size, 0.8 * size, size=(k, m, 2)),
        "sigmas": rng.uniform(0.08 * size, 0.16 * size, size=(k, m)),
        "colors": rng.normal(0.0, 1.0, size=(k, m, cfg.channels)),
    }

    def labels(n):
        y = np.arange(n) % k
        rng.shuffle(y)
        return y

    ytr, yva = labels(cfg.num_train), labels(cfg.num_val)
    xtr = _blob_images(rng, ytr, templates, size, cfg.channels, cfg.noise)
    xva = _blob_images(rng, yva, templates, size, cfg.channels, cfg.noise)
    return xtr, ytr, xva, yva


def _load_cifar10(cfg: DatasetConfig):
    root = Path(cfg.root) / "cifar-10-batches-py"
    if not root.is_dir():
        raise FileNotFoundError(
            f"CIFAR-10 not found under {root}; download and extract cifar-10-python.tar.gz "
            f"into {cfg.root}, or set dataset.name = \"synthetic\"")

    def read(name):
        with open(root / name, "rb") as f:
            d = pickle.load(f, encoding="bytes")
        return d[b"data"].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0, np.asarray(d[b"labels"])

    parts = [read(f"data_batch_{i}") for i in range(1, 6)]
    xtr = np.concatenate([p[0] for p in parts])[:cfg.num_train]
    ytr = np.concatenate([p[1] for p in parts])[:cfg.num_train]
    xva, yva = read("test_batch")
    return xtr, ytr, xva[:cfg.num_val], yva[:cfg.num_val]


def ingest_dataset(cfg: DatasetConfig) -> Splits:
    if cfg.name == "synthetic":
        xtr, ytr, xva, yva = synthetic_splits(cfg)
        num_classes = cfg.num_classes
    else:
        xtr, ytr, xva, yva = _load_cifar10(cfg)
        num_classes = 10
    mean = xtr.mean(axis=(0, 2, 3), keepdims=True)
    std = xtr.std(axis=(0, 2, 3), keepdims=True) + 1e-8

    def tensor(x):
        return torch.from_numpy(((x - mean) / std).astype(np.float32))

    train = Split(tensor(xtr), torch.from_numpy(ytr.astype(np.int64)), cfg.augment, cfg.crop_padding)
    val = Split(tensor(xva), torch.from_numpy(yva.astype(np.int64)))
    return Splits(train, val, num_classes)
