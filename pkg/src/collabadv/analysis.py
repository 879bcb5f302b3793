"""Post-hoc evaluation: robust accuracy, transfer attacks, cross-model
confusion matrices, and the prediction intersection/discrepancy statistic.

Models are read-only throughout. An epsilon = 0 attack config means
clean evaluation and agrees bitwise with direct prediction accuracy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from collabadv.attacks import AttackConfig, pgd
from collabadv.core import Classifier, LabeledBatch, argmax_lowest

__all__ = [
    "RobustnessEntry",
    "RobustnessReport",
    "ConfusionMatrix",
    "DiscrepancyScore",
    "robust_accuracy",
    "transfer_robustness",
    "cross_confusion",
    "prediction_discrepancy",
    "standard_eval_suite",
]

EVAL_CHUNK = 256


@dataclass
class RobustnessEntry:
    attack_name: str
    attack: Optional[AttackConfig]
    correct: int
    count: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count

    def to_dict(self) -> dict:
        return {
            "attack": self.attack_name,
            "config": self.attack.to_dict() if self.attack is not None else None,
            "accuracy": self.accuracy,
            "correct": self.correct,
            "count": self.count,
        }


@dataclass
class RobustnessReport:
    model_name: str
    entries: List[RobustnessEntry] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "entries": [e.to_dict() for e in self.entries],
            "metadata": self.metadata,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "attack", "accuracy", "correct", "count"])
            for e in self.entries:
                writer.writerow([self.model_name, e.attack_name, repr(e.accuracy), e.correct, e.count])


@dataclass
class ConfusionMatrix:
    """Counts[i, j] = samples predicted i by the row model, j by the column model."""

    counts: np.ndarray
    row_model: str
    col_model: str
    attack_name: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path, zero_diagonal: bool = False) -> None:
        display = self.counts.copy()
        if zero_diagonal:
            np.fill_diagonal(display, 0)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + [f"{self.col_model}={j}" for j in range(display.shape[1])])
            for i, row in enumerate(display):
                writer.writerow([f"{self.row_model}={i}"] + row.tolist())

    def write_json(self, path, zero_diagonal_csv: bool = False) -> None:
        payload = {
            "row_model": self.row_model,
            "col_model": self.col_model,
            "attack": self.attack_name,
            "counts": self.counts.tolist(),
            "diagonal_zeroed_in_csv": zero_diagonal_csv,
            "metadata": self.metadata,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


@dataclass
class DiscrepancyScore:
    intersection: float

    @property
    def discrepancy(self) -> float:
        return 1.0 - self.intersection

    def to_dict(self) -> dict:
        return {"intersection": self.intersection, "discrepancy": self.discrepancy}


def _perturbed_inputs(
    model: Classifier,
    batch: LabeledBatch,
    attack: Optional[AttackConfig],
    generator: Optional[torch.Generator],
) -> torch.Tensor:
    """White-box adversarial inputs against ``model`` (clean if no attack)."""
    if attack is None or attack.epsilon == 0.0:
        return batch.inputs
    pieces = []
    for start in range(0, len(batch), EVAL_CHUNK):
        chunk = batch.subset(range(start, min(start + EVAL_CHUNK, len(batch))))
        if attack.objective == "kl":
            with torch.no_grad():
                ref = model.logits(chunk.inputs)
            adv = pgd(model, chunk, attack, reference=ref, generator=generator)
        else:
            adv = pgd(model, chunk, attack, generator=generator)
        pieces.append(adv.perturbed)
    return torch.cat(pieces, dim=0)


def _predict_chunked(model: Classifier, inputs: torch.Tensor) -> torch.Tensor:
    preds = []
    for start in range(0, inputs.shape[0], EVAL_CHUNK):
        with torch.no_grad():
            preds.append(argmax_lowest(model.logits(inputs[start:start + EVAL_CHUNK])))
    return torch.cat(preds)


def robust_accuracy(
    model: Classifier,
    dataset: LabeledBatch,
    attack: Optional[AttackConfig],
    generator: Optional[torch.Generator] = None,
    name: Optional[str] = None,
) -> RobustnessEntry:
    """White-box accuracy under an attack crafted against this model."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    inputs = _perturbed_inputs(model, dataset, attack, generator)
    preds = _predict_chunked(model, inputs)
    correct = int((preds == dataset.labels).sum())
    attack_name = name or (attack.objective if attack is not None else "clean")
    return RobustnessEntry(attack_name=attack_name, attack=attack, correct=correct, count=len(dataset))


def transfer_robustness(
    surrogate: Classifier,
    target: Classifier,
    dataset: LabeledBatch,
    attack: Optional[AttackConfig],
    generator: Optional[torch.Generator] = None,
    name: Optional[str] = None,
) -> RobustnessEntry:
    """Black-box transfer: craft on the surrogate, measure on the target."""
    if surrogate.arch.input_shape != target.arch.input_shape or surrogate.num_classes != target.num_classes:
        raise ValueError("surrogate and target must share input shape and class count")
    inputs = _perturbed_inputs(surrogate, dataset, attack, generator)
    preds = _predict_chunked(target, inputs)
    correct = int((preds == dataset.labels).sum())
    attack_name = name or (attack.objective if attack is not None else "clean")
    return RobustnessEntry(attack_name=attack_name, attack=attack, correct=correct, count=len(dataset))


def cross_confusion(
    model_a: Classifier,
    model_b: Classifier,
    dataset: LabeledBatch,
    attack: Optional[AttackConfig] = None,
    craft_against: int = 0,
    generator: Optional[torch.Generator] = None,
    names: tuple = ("A", "B"),
) -> ConfusionMatrix:
    """Joint prediction counts of two models on shared (clean or
    adversarial) inputs; the attack is crafted against the designated
    model (0 = first argument)."""
    if model_a.num_classes != model_b.num_classes:
        raise ValueError("models must share a class count")
    crafter = model_a if craft_against == 0 else model_b
    inputs = _perturbed_inputs(crafter, dataset, attack, generator)
    preds_a = _predict_chunked(model_a, inputs).numpy()
    preds_b = _predict_chunked(model_b, inputs).numpy()
    c = model_a.num_classes
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (preds_a, preds_b), 1)
    return ConfusionMatrix(
        counts=counts,
        row_model=names[0],
        col_model=names[1],
        attack_name=attack.objective if attack is not None else "clean",
        metadata={"craft_against": names[craft_against], "count": len(dataset)},
    )


def prediction_discrepancy(
    model_a: Classifier,
    model_b: Classifier,
    dataset: LabeledBatch,
    attack: Optional[AttackConfig] = None,
    craft_against: int = 0,
    generator: Optional[torch.Generator] = None,
) -> DiscrepancyScore:
    """Fraction of inputs on which the two models disagree.

    Derived from the cross-confusion trace so the trace identity
    discrepancy = 1 - trace/N holds exactly.
    """
    cm = cross_confusion(model_a, model_b, dataset, attack, craft_against, generator)
    return DiscrepancyScore(intersection=float(np.trace(cm.counts)) / cm.total)


def standard_eval_suite(epsilon: float = 8.0 / 255.0, step_size: float = 2.0 / 255.0, random_start: bool = True):
    """The default white-box protocol: FGSM, 20-step PGD-CE, 20-step PGD-CW."""
    return [
        ("fgsm", AttackConfig(epsilon, epsilon, 1, False, "ce")),
        ("pgd20", AttackConfig(epsilon, step_size, 20, random_start, "ce")),
        ("cw20", AttackConfig(epsilon, step_size, 20, random_start, "cw")),
    ]
