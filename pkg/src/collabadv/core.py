"""Differentiable-classifier core: architectures, batches, gradients, checkpoints.

Models are deliberately tiny (an MLP for 2-D point clouds, a 4-conv net
for small single-channel images), run in float64, and contain no
stochastic layers, so forward passes and input gradients are exact,
deterministic functions of (parameters, inputs). Tanh activations keep
every objective smooth enough for tight finite-difference audits.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from collabadv.seeding import make_generator

DTYPE = torch.float64

CHECKPOINT_FORMAT_VERSION = 1

OBJECTIVE_KINDS = ("ce", "kl", "cw")


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class Architecture:
    """Descriptor from which a classifier can be rebuilt exactly.

    kind: "mlp" (inputs flattened to a vector) or "conv" (inputs are
    CxHxW images). ``hidden`` holds layer widths for the MLP and channel
    counts for the four conv layers.
    """

    kind: str
    input_shape: tuple
    num_classes: int
    hidden: tuple = (32, 32)

    def __post_init__(self):
        if self.kind not in ("mlp", "conv"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind == "mlp" and len(self.input_shape) == 0:
            raise ValueError("mlp needs a non-empty input shape")
        if self.kind == "conv":
            if len(self.input_shape) != 3:
                raise ValueError("conv expects an input shape (C, H, W)")
            if len(self.hidden) != 4:
                raise ValueError("conv uses exactly 4 conv layers; give 4 channel counts")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
        }

    @staticmethod
    def from_dict(d: dict) -> "Architecture":
        return Architecture(
            kind=d["kind"],
            input_shape=tuple(d["input_shape"]),
            num_classes=int(d["num_classes"]),
            hidden=tuple(d["hidden"]),
        )


@dataclass
class LabeledBatch:
    """Inputs in the unit box with integer class labels."""

    inputs: torch.Tensor
    labels: torch.Tensor
    num_classes: int

    def __post_init__(self):
        self.inputs = torch.as_tensor(self.inputs, dtype=DTYPE)
        self.labels = torch.as_tensor(self.labels, dtype=torch.long)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on batch size")
        if self.inputs.numel() and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("inputs must lie in [0, 1]")
        if self.labels.numel() and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range for class count")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "LabeledBatch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return LabeledBatch(self.inputs[idx], self.labels[idx], self.num_classes)


def _build_module(arch: Architecture) -> nn.Module:
    if arch.kind == "mlp":
        layers = []
        d = int(np.prod(arch.input_shape))
        if len(arch.input_shape) > 1:
            layers.append(nn.Flatten(1))
        for width in arch.hidden:
            layers += [nn.Linear(d, width), nn.Tanh()]
            d = width
        layers.append(nn.Linear(d, arch.num_classes))
        return nn.Sequential(*layers)
    c_in = arch.input_shape[0]
    c1, c2, c3, c4 = arch.hidden
    return nn.Sequential(
        nn.Conv2d(c_in, c1, 3, padding=1), nn.Tanh(),
        nn.Conv2d(c1, c2, 3, padding=1), nn.Tanh(),
        nn.MaxPool2d(2),
        nn.Conv2d(c2, c3, 3, padding=1), nn.Tanh(),
        nn.Conv2d(c3, c4, 3, padding=1), nn.Tanh(),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(c4, arch.num_classes),
    )


def _init_parameters(module: nn.Module, gen: torch.Generator) -> None:
    # Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases,
    # drawn in a fixed layer order so init is a pure function of the seed.
    for layer in module.modules():
        if isinstance(layer, (nn.Linear, nn.Conv2d)):
            fan_in = layer.weight.shape[1:].numel()
            bound = 1.0 / float(np.sqrt(fan_in))
            with torch.no_grad():
                layer.weight.uniform_(-bound, bound, generator=gen)
                if layer.bias is not None:
                    layer.bias.zero_()


class Classifier:
    """A small deterministic classifier built from an Architecture.

    Two classifiers built from the same (architecture, seed) have
    identical parameters. Forward passes are pure: no dropout, no
    batch-norm, float64 throughout.
    """

    def __init__(self, arch: Architecture, seed: int = 0, _skip_init: bool = False):
        self.arch = arch
        self.seed = int(seed)
        self.module = _build_module(arch).to(DTYPE)
        if not _skip_init:
            _init_parameters(self.module, make_generator(self.seed, "init"))
        self.module.eval()

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def parameters(self):
        return list(self.module.parameters())

    def named_parameters(self):
        return list(self.module.named_parameters())

    def logits(self, inputs: torch.Tensor) -> torch.Tensor:
        inputs = torch.as_tensor(inputs, dtype=DTYPE)
        expected = self.arch.input_shape
        if tuple(inputs.shape[1:]) != expected:
            raise ValueError(
                f"input shape {tuple(inputs.shape[1:])} does not match "
                f"architecture input shape {expected}"
            )
        return self.module(inputs)

    def state_arrays(self) -> dict:
        return {name: p.detach().numpy().copy() for name, p in self.module.named_parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        with torch.no_grad():
            for name, p in self.module.named_parameters():
                if name not in arrays:
                    raise ValueError(f"checkpoint is missing parameter {name!r}")
                src = torch.as_tensor(arrays[name], dtype=DTYPE)
                if src.shape != p.shape:
                    raise ValueError(f"parameter {name!r} has shape {tuple(src.shape)}, expected {tuple(p.shape)}")
                p.copy_(src)

    def clone(self) -> "Classifier":
        twin = Classifier(self.arch, self.seed, _skip_init=True)
        twin.load_state_arrays(self.state_arrays())
        return twin


def forward_logits(model: Classifier, inputs: torch.Tensor) -> torch.Tensor:
    """Score a batch; returns finite (B, C) logits."""
    out = model.logits(inputs)
    if not torch.isfinite(out).all():
        raise DivergenceError("model produced non-finite logits")
    return out


def predict(model: Classifier, inputs: torch.Tensor) -> torch.Tensor:
    """Argmax class per row; ties break to the lowest class index."""
    with torch.no_grad():
        logits = forward_logits(model, inputs)
    return argmax_lowest(logits)


def argmax_lowest(logits: torch.Tensor) -> torch.Tensor:
    # Explicit tie-break: first column attaining the row max.
    is_max = logits == logits.max(dim=1, keepdim=True).values
    return is_max.to(torch.int64).argmax(dim=1)


def objective_value(
    model: Classifier,
    inputs: torch.Tensor,
    labels: torch.Tensor,
    objective: str,
    reference: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Scalar attack objective (mean over the batch) for gradient ascent.

    ce: cross-entropy against the labels. kl: KL(reference || current
    logits), the smoothing-loss inner maximand; requires reference
    logits. cw: runner-up margin max_{j!=y} z_j - z_y.
    """
    if objective not in OBJECTIVE_KINDS:
        raise ValueError(f"unknown objective {objective!r}")
    if (reference is None) == (objective == "kl"):
        raise ValueError("reference logits are required exactly when objective='kl'")
    logits = model.logits(inputs)
    if objective == "ce":
        return F.cross_entropy(logits, labels)
    if objective == "kl":
        ref_log = F.log_softmax(reference.detach(), dim=1)
        cur_log = F.log_softmax(logits, dim=1)
        return (ref_log.exp() * (ref_log - cur_log)).sum(dim=1).mean()
    return cw_margin(logits, labels).mean()


def cw_margin(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-row margin max_{j != y} z_j - z_y (confidence 0)."""
    mask = F.one_hot(labels, logits.shape[1]).to(torch.bool)
    runner_up = logits.masked_fill(mask, float("-inf")).max(dim=1).values
    own = logits.gather(1, labels.unsqueeze(1)).squeeze(1)
    return runner_up - own


def input_gradient(
    model: Classifier,
    batch: LabeledBatch,
    objective: str,
    reference: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """d(objective)/d(inputs), same shape as the inputs."""
    x = batch.inputs.detach().clone().requires_grad_(True)
    value = objective_value(model, x, batch.labels, objective, reference)
    (grad,) = torch.autograd.grad(value, x)
    return grad


# -- checkpoint container ----------------------------------------------------
#
# A checkpoint is a single .npz file: one JSON metadata entry
# ("__meta__": format version, architecture descriptor, epoch, extra
# metadata) plus one float64 array per parameter under "param/<name>".
# It is readable with numpy alone; no training code required.


@dataclass
class Checkpoint:
    arch: Architecture
    params: dict
    epoch: int
    meta: dict = dataclasses.field(default_factory=dict)

    def save(self, path) -> None:
        header = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "architecture": self.arch.to_dict(),
            "num_classes": self.arch.num_classes,
            "epoch": self.epoch,
            "meta": self.meta,
        }
        arrays = {f"param/{name}": np.asarray(arr, dtype=np.float64) for name, arr in self.params.items()}
        np.savez(path, __meta__=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8), **arrays)

    @staticmethod
    def load(path) -> "Checkpoint":
        with np.load(path) as data:
            header = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint format version {header.get('format_version')!r}")
            params = {
                key[len("param/"):]: data[key].astype(np.float64)
                for key in data.files
                if key.startswith("param/")
            }
        return Checkpoint(
            arch=Architecture.from_dict(header["architecture"]),
            params=params,
            epoch=int(header["epoch"]),
            meta=header.get("meta", {}),
        )

    def to_classifier(self) -> Classifier:
        model = Classifier(self.arch, _skip_init=True)
        model.load_state_arrays(self.params)
        return model


def snapshot(model: Classifier, epoch: int, meta: Optional[dict] = None) -> Checkpoint:
    return Checkpoint(arch=model.arch, params=model.state_arrays(), epoch=epoch, meta=dict(meta or {}))
