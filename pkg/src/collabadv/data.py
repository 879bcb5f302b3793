"""Synthetic desk-scale datasets and the raw-tensor ingestion path.

Three generators, all deterministic by seed, all emitting inputs in
[0, 1] with an 80/20 train/test split:

  two-moons           2-D, 2 classes, interleaved half-circles
  gaussian-blobs      2-D (default), k isotropic clusters on a ring
  tiny-images-subset  10 classes of 1x8x8 smoothed template images

Real data can be supplied instead as a directory of flat .npy files
(see load_dataset_dir for the layout).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from collabadv.core import LabeledBatch

DATASET_NAMES = ("two-moons", "gaussian-blobs", "tiny-images-subset", "from-dir")

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    size: int = 1000
    noise: float = 0.1
    seed: int = 0
    classes: Optional[int] = None
    dim: Optional[int] = None
    path: Optional[str] = None

    def __post_init__(self):
        if self.name not in DATASET_NAMES:
            raise ValueError(f"unknown dataset {self.name!r}")
        if self.name != "from-dir" and self.size < 10:
            raise ValueError("dataset size must be at least 10")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.name == "from-dir" and not self.path:
            raise ValueError("from-dir dataset needs a path")

    def to_dict(self) -> dict:
        d = {"name": self.name, "size": self.size, "noise": self.noise, "seed": self.seed}
        if self.classes is not None:
            d["classes"] = self.classes
        if self.dim is not None:
            d["dim"] = self.dim
        if self.path is not None:
            d["path"] = self.path
        return d


@dataclass
class DataSplits:
    train: LabeledBatch
    test: LabeledBatch

    @property
    def num_classes(self) -> int:
        return self.train.num_classes

    @property
    def input_shape(self) -> tuple:
        return tuple(self.train.inputs.shape[1:])


def _two_moons(rng: np.random.Generator, size: int, noise: float):
    n0 = size // 2
    n1 = size - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    outer = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    inner = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([outer, inner], axis=0)
    x += noise * rng.standard_normal(x.shape)
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    # Fixed affine map into the unit box (clip absorbs noise outliers).
    x[:, 0] = (x[:, 0] + 1.5) / 4.0
    x[:, 1] = (x[:, 1] + 1.0) / 2.75
    return np.clip(x, 0.0, 1.0), y, 2


def _gaussian_blobs(rng: np.random.Generator, size: int, noise: float, classes: int, dim: int):
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = np.full((classes, dim), 0.5)
    centers[:, 0] += 0.35 * np.cos(angles)
    centers[:, 1 % dim] += 0.35 * np.sin(angles)
    y = np.arange(size, dtype=np.int64) % classes
    x = centers[y] + noise * rng.standard_normal((size, dim))
    return np.clip(x, 0.0, 1.0), y, classes


def _tiny_images(rng: np.random.Generator, size: int, noise: float, classes: int = 10, side: int = 8):
    # Per-class smooth templates: blurred noise, rescaled into [0.25, 0.75].
    templates = rng.standard_normal((classes, 1, side, side))
    kernel = np.ones((3, 3)) / 9.0
    for _ in range(2):
        blurred = np.zeros_like(templates)
        padded = np.pad(templates, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        for di in range(3):
            for dj in range(3):
                blurred += kernel[di, dj] * padded[:, :, di:di + side, dj:dj + side]
        templates = blurred
    lo = templates.min(axis=(1, 2, 3), keepdims=True)
    hi = templates.max(axis=(1, 2, 3), keepdims=True)
    templates = 0.25 + 0.5 * (templates - lo) / (hi - lo)
    y = np.arange(size, dtype=np.int64) % classes
    x = templates[y] + noise * rng.standard_normal((size, 1, side, side))
    return np.clip(x, 0.0, 1.0), y, classes


def generate_dataset(spec: DatasetSpec) -> DataSplits:
    """Deterministic-by-seed labeled splits with inputs in [0, 1]."""
    if spec.name == "from-dir":
        return load_dataset_dir(spec.path)
    rng = np.random.default_rng(spec.seed)
    if spec.name == "two-moons":
        x, y, c = _two_moons(rng, spec.size, spec.noise)
    elif spec.name == "gaussian-blobs":
        x, y, c = _gaussian_blobs(rng, spec.size, spec.noise, spec.classes or 3, spec.dim or 2)
    else:
        x, y, c = _tiny_images(rng, spec.size, spec.noise, spec.classes or 10)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    n_train = int(round(TRAIN_FRACTION * len(y)))
    return DataSplits(
        train=LabeledBatch(x[:n_train], y[:n_train], c),
        test=LabeledBatch(x[n_train:], y[n_train:], c),
    )


def save_dataset_dir(splits: DataSplits, out_dir: str) -> None:
    """Write the flat .npy layout consumed by load_dataset_dir."""
    os.makedirs(out_dir, exist_ok=True)
    np.save(os.path.join(out_dir, "train_inputs.npy"), splits.train.inputs.numpy())
    np.save(os.path.join(out_dir, "train_labels.npy"), splits.train.labels.numpy())
    np.save(os.path.join(out_dir, "test_inputs.npy"), splits.test.inputs.numpy())
    np.save(os.path.join(out_dir, "test_labels.npy"), splits.test.labels.numpy())
    meta = {
        "num_classes": splits.num_classes,
        "input_shape": list(splits.input_shape),
        "train_size": len(splits.train),
        "test_size": len(splits.test),
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_dataset_dir(path: str) -> DataSplits:
    """Load a dataset directory.

    Layout: train_inputs.npy (float, values in [0, 1], shape (N, d) or
    (N, C, H, W)), train_labels.npy (int), test_inputs.npy,
    test_labels.npy, and meta.json carrying "num_classes".
    """
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    c = int(meta["num_classes"])
    return DataSplits(
        train=LabeledBatch(
            np.load(os.path.join(path, "train_inputs.npy")),
            np.load(os.path.join(path, "train_labels.npy")),
            c,
        ),
        test=LabeledBatch(
            np.load(os.path.join(path, "test_inputs.npy")),
            np.load(os.path.join(path, "test_labels.npy")),
            c,
        ),
    )
