"""L-inf bounded sign-gradient attacks: FGSM and PGD with CE/KL/CW objectives.

All attacks are pure functions of (model parameters, batch, config, RNG
generator). With random_start=False they are fully deterministic. Every
output satisfies the threat-model feasibility invariants: the perturbed
point stays inside both the epsilon-box around the original and the unit
box. sign(0) = 0, so a zero gradient leaves the input untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from collabadv.core import (
    Classifier,
    DTYPE,
    LabeledBatch,
    OBJECTIVE_KINDS,
    cw_margin,
    objective_value,
)

__all__ = [
    "AttackConfig",
    "AdversarialBatch",
    "project_feasible",
    "fgsm",
    "pgd",
    "cw_margin_objective",
    "craft_for_method",
]


@dataclass(frozen=True)
class AttackConfig:
    """Threat-model parameters for an L-inf attack."""

    epsilon: float = 8.0 / 255.0
    step_size: float = 2.0 / 255.0
    iterations: int = 10
    random_start: bool = True
    objective: str = "ce"

    def __post_init__(self):
        if not (0.0 < self.step_size <= self.epsilon <= 1.0):
            if self.epsilon == 0.0 and self.step_size == 0.0:
                pass  # epsilon=0 is the clean-evaluation degenerate config
            else:
                raise ValueError("need 0 < step_size <= epsilon <= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.objective not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown attack objective {self.objective!r}")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "step_size": self.step_size,
            "iterations": self.iterations,
            "random_start": self.random_start,
            "objective": self.objective,
        }


@dataclass
class AdversarialBatch:
    """Original inputs, their feasible perturbations, and copied labels."""

    originals: torch.Tensor
    perturbed: torch.Tensor
    labels: torch.Tensor
    epsilon: float

    def __post_init__(self):
        gap = (self.perturbed - self.originals).abs().max().item() if self.originals.numel() else 0.0
        if gap > self.epsilon + 1e-9:
            raise ValueError(f"perturbation {gap} exceeds epsilon {self.epsilon}")
        if self.perturbed.numel() and (self.perturbed.min() < 0 or self.perturbed.max() > 1):
            raise ValueError("perturbed inputs left the unit box")

    def as_batch(self, num_classes: int) -> LabeledBatch:
        return LabeledBatch(self.perturbed, self.labels, num_classes)


def project_feasible(candidate: torch.Tensor, original: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Clamp into [original - eps, original + eps] intersected with [0, 1]."""
    if candidate.shape != original.shape:
        raise ValueError("candidate and original must have the same shape")
    out = torch.clamp(candidate, original - epsilon, original + epsilon)
    return torch.clamp(out, 0.0, 1.0)


def pgd(
    model: Classifier,
    batch: LabeledBatch,
    config: AttackConfig,
    reference: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None,
) -> AdversarialBatch:
    """Iterative sign-gradient ascent with per-step projection."""
    x0 = batch.inputs.detach()
    x = x0.clone()
    if config.random_start:
        noise = torch.empty_like(x)
        noise.uniform_(-config.epsilon, config.epsilon, generator=generator)
        x = project_feasible(x + noise, x0, config.epsilon)
    for _ in range(config.iterations):
        xg = x.detach().requires_grad_(True)
        value = objective_value(model, xg, batch.labels, config.objective, reference)
        (grad,) = torch.autograd.grad(value, xg)
        x = project_feasible(x.detach() + config.step_size * torch.sign(grad), x0, config.epsilon)
    return AdversarialBatch(x0, x.detach(), batch.labels.clone(), config.epsilon)


def fgsm(model: Classifier, batch: LabeledBatch, epsilon: float) -> AdversarialBatch:
    """One epsilon-sized step along the sign of the CE input gradient."""
    if not (0.0 < epsilon <= 1.0):
        raise ValueError("epsilon must be in (0, 1]")
    x0 = batch.inputs.detach()
    xg = x0.clone().requires_grad_(True)
    value = objective_value(model, xg, batch.labels, "ce")
    (grad,) = torch.autograd.grad(value, xg)
    adv = project_feasible(x0 + epsilon * torch.sign(grad), x0, epsilon)
    return AdversarialBatch(x0, adv.detach(), batch.labels.clone(), epsilon)


def cw_margin_objective(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-row runner-up margin max_{j != y} z_j - z_y."""
    return cw_margin(logits, labels)


def craft_for_method(
    model: Classifier,
    method,
    batch: LabeledBatch,
    config: AttackConfig,
    generator: Optional[torch.Generator] = None,
) -> AdversarialBatch:
    """Inner-maximization dispatch for a training method.

    Adversarial-CE and logit-pairing methods attack the CE loss; the
    KL-smoothing method attacks the KL divergence from the model's own
    clean-input logits.
    """
    from collabadv.losses import MethodSpec  # avoid import cycle

    if not isinstance(method, MethodSpec):
        raise TypeError("method must be a MethodSpec")
    if method.kind == "TRADES":
        with torch.no_grad():
            clean_logits = model.logits(batch.inputs)
        cfg = AttackConfig(
            epsilon=config.epsilon,
            step_size=config.step_size,
            iterations=config.iterations,
            random_start=config.random_start,
            objective="kl",
        )
        return pgd(model, batch, cfg, reference=clean_logits, generator=generator)
    cfg = AttackConfig(
        epsilon=config.epsilon,
        step_size=config.step_size,
        iterations=config.iterations,
        random_start=config.random_start,
        objective="ce",
    )
    return pgd(model, batch, cfg, generator=generator)
