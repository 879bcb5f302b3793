"""Collaborative training loop: per-participant attacks, peer-guided losses,
synchronous SGD updates, checkpointing, and best/last selection.

All participants are updated simultaneously: every loss in a step is
computed against the pre-update parameters of every model, so the
participant order never changes any computed value. Each participant
carries an rng_tag that keys its attack and evaluation RNG substreams;
a participant trained alone with the same tag, seed, and config follows
bitwise the same trajectory as inside an alpha = 1 collaborative run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch

from collabadv.attacks import AttackConfig, craft_for_method, pgd
from collabadv.core import (
    Checkpoint,
    Classifier,
    DivergenceError,
    LabeledBatch,
    argmax_lowest,
    snapshot,
)
from collabadv.data import DataSplits
from collabadv.losses import CollabConfig, MethodSpec, cat_objective, cross_entropy, kl_divergence
from collabadv.seeding import make_generator

__all__ = [
    "TrainConfig",
    "TrainingLog",
    "EpochRecord",
    "Participant",
    "FitResult",
    "lr_at",
    "train_step",
    "fit",
    "select_best_checkpoint",
    "make_configuration",
    "CatConfiguration",
    "CONFIGURATION_NAMES",
]

DEFAULT_LR_DROPS = ((100, 10.0), (150, 10.0))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    base_lr: float = 0.1
    lr_drops: tuple = DEFAULT_LR_DROPS
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    inner_attack: AttackConfig = AttackConfig()

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.base_lr <= 0:
            raise ValueError("epochs >= 1, batch_size >= 1, base_lr > 0 required")
        object.__setattr__(self, "lr_drops", tuple((int(e), float(d)) for e, d in self.lr_drops))
        drop_epochs = [e for e, _ in self.lr_drops]
        if drop_epochs != sorted(set(drop_epochs)):
            raise ValueError("lr_drop epochs must be strictly increasing")
        if any(e >= self.epochs or e < 0 for e in drop_epochs):
            raise ValueError("lr_drop epochs must lie in [0, epochs)")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "lr_drops": [list(d) for d in self.lr_drops],
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "inner_attack": self.inner_attack.to_dict(),
        }


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate in effect at an epoch, all passed drops applied."""
    if not (0 <= epoch < config.epochs):
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    lr = config.base_lr
    for drop_epoch, divisor in config.lr_drops:
        if epoch >= drop_epoch:
            lr /= divisor
    return lr


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    losses: List[float]
    clean_acc: List[float]
    robust_acc: List[float]


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError("epoch indices must be consecutive")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        n = len(self.records[0].losses) if self.records else 0
        header = ["epoch", "lr"]
        for i in range(n):
            header += [f"p{i}_loss", f"p{i}_clean_acc", f"p{i}_pgd10_acc"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.records:
                row = [r.epoch, repr(r.lr)]
                for i in range(n):
                    row += [repr(r.losses[i]), repr(r.clean_acc[i]), repr(r.robust_acc[i])]
                writer.writerow(row)


@dataclass
class Participant:
    classifier: Classifier
    method: MethodSpec
    rng_tag: str
    momentum_buffers: Optional[List[torch.Tensor]] = None

    def __post_init__(self):
        if self.momentum_buffers is None:
            self.momentum_buffers = [torch.zeros_like(p) for p in self.classifier.parameters()]


def as_participants(pairs, rng_tags: Optional[Sequence[str]] = None) -> List[Participant]:
    """Wrap (classifier, method) pairs; tags default to the list index."""
    out = []
    for i, item in enumerate(pairs):
        if isinstance(item, Participant):
            out.append(item)
            continue
        model, method = item
        tag = rng_tags[i] if rng_tags is not None else str(i)
        out.append(Participant(model, method, tag))
    return out


def _sgd_update(participant: Participant, grads, lr: float, momentum: float, weight_decay: float) -> None:
    # Classic SGD with momentum and decoupled-from-nothing L2 decay:
    #   g <- grad + wd * p;  buf <- m * buf + g;  p <- p - lr * buf
    with torch.no_grad():
        for p, g, buf in zip(participant.classifier.parameters(), grads, participant.momentum_buffers):
            g = g + weight_decay * p
            buf.mul_(momentum).add_(g)
            p.add_(buf, alpha=-lr)


def train_step(
    participants: List[Participant],
    batch: LabeledBatch,
    collab: CollabConfig,
    train: TrainConfig,
    epoch: int,
    batch_index: int,
    dual_attack: Optional[Tuple[AttackConfig, AttackConfig]] = None,
) -> List[float]:
    """One synchronous collaborative update; returns per-participant losses."""
    pairs = [(p.classifier, p.method) for p in participants]
    if dual_attack is not None:
        losses = _dual_attack_losses(participants[0], batch, collab.alpha, train, epoch, batch_index, dual_attack)
    else:
        adv_batches = [
            craft_for_method(
                p.classifier,
                p.method,
                batch,
                train.inner_attack,
                generator=make_generator(train.seed, "attack-start", p.rng_tag, epoch, batch_index),
            )
            for p in participants
        ]
        losses = cat_objective(pairs, batch, collab.alpha, adv_batches=adv_batches)
    values = [float(l.detach()) for l in losses]
    if not all(torch.isfinite(l).item() for l in losses):
        raise DivergenceError(
            f"non-finite loss at epoch {epoch}, batch {batch_index}: {values}",
            epoch=epoch,
            batch=batch_index,
        )
    # Gradients for every participant before any parameter moves.
    grads_per_participant = [
        torch.autograd.grad(loss, p.classifier.parameters(), allow_unused=False)
        for loss, p in zip(losses, participants)
    ]
    lr = lr_at(train, epoch)
    for p, grads in zip(participants, grads_per_participant):
        _sgd_update(p, grads, lr, train.momentum, train.weight_decay)
    return values


def _dual_attack_losses(
    participant: Participant,
    batch: LabeledBatch,
    alpha: float,
    train: TrainConfig,
    epoch: int,
    batch_index: int,
    dual_attack: Tuple[AttackConfig, AttackConfig],
) -> List[torch.Tensor]:
    # Single model, two attack objectives: average CE over both
    # adversarial batches plus symmetric KL between the model's own
    # logits on them. A documented, non-canonical reading of the
    # one-model/two-attack configuration.
    model = participant.classifier
    advs = [
        pgd(model, batch, cfg, generator=make_generator(train.seed, "attack-start", participant.rng_tag, epoch, batch_index, k))
        for k, cfg in enumerate(dual_attack)
    ]
    logits = [model.logits(a.perturbed) for a in advs]
    ce = 0.5 * (cross_entropy(logits[0], batch.labels) + cross_entropy(logits[1], batch.labels))
    sym_kl = 0.5 * (kl_divergence(logits[0], logits[1]) + kl_divergence(logits[1], logits[0]))
    return [alpha * ce + (1.0 - alpha) * sym_kl]


def _accuracy(preds: torch.Tensor, labels: torch.Tensor) -> float:
    return float((preds == labels).sum().item()) / len(labels)


def _eval_participant(
    participant: Participant,
    test: LabeledBatch,
    attack: AttackConfig,
    seed: int,
    epoch: int,
    batch_size: int,
) -> Tuple[float, float]:
    """(clean accuracy, PGD robust accuracy) on the test split."""
    model = participant.classifier
    gen = make_generator(seed, "eval-attack", participant.rng_tag, epoch)
    clean_correct = 0
    robust_correct = 0
    for start in range(0, len(test), batch_size):
        chunk = test.subset(range(start, min(start + batch_size, len(test))))
        with torch.no_grad():
            clean_preds = argmax_lowest(model.logits(chunk.inputs))
        clean_correct += int((clean_preds == chunk.labels).sum())
        adv = pgd(model, chunk, attack, generator=gen)
        with torch.no_grad():
            adv_preds = argmax_lowest(model.logits(adv.perturbed))
        robust_correct += int((adv_preds == chunk.labels).sum())
    return clean_correct / len(test), robust_correct / len(test)


@dataclass
class FitResult:
    log: TrainingLog
    best: List[Checkpoint]
    last: List[Checkpoint]


def fit(
    participants,
    dataset: DataSplits,
    collab: CollabConfig,
    train: TrainConfig,
    dual_attack: Optional[Tuple[AttackConfig, AttackConfig]] = None,
) -> FitResult:
    """Full training run with per-epoch evaluation and checkpoint tracking.

    Keeps, per participant, the snapshot with the highest PGD robust
    test accuracy (ties to the earliest epoch) and the final snapshot.
    """
    participants = as_participants(participants)
    if dual_attack is not None and len(participants) != 1:
        raise ValueError("the dual-attack configuration uses exactly one participant")
    n_train = len(dataset.train)
    log = TrainingLog()
    best: List[Optional[Checkpoint]] = [None] * len(participants)
    best_acc = [-1.0] * len(participants)

    eval_attack = AttackConfig(
        epsilon=train.inner_attack.epsilon,
        step_size=train.inner_attack.step_size,
        iterations=train.inner_attack.iterations,
        random_start=True,
        objective="ce",
    )

    for epoch in range(train.epochs):
        perm = torch.randperm(n_train, generator=make_generator(train.seed, "shuffle", epoch))
        loss_sums = [0.0] * len(participants)
        n_batches = 0
        for start in range(0, n_train, train.batch_size):
            idx = perm[start:start + train.batch_size]
            batch = dataset.train.subset(idx)
            values = train_step(participants, batch, collab, train, epoch, n_batches, dual_attack)
            for i, v in enumerate(values):
                loss_sums[i] += v
            n_batches += 1

        clean_accs, robust_accs = [], []
        for i, p in enumerate(participants):
            clean, robust = _eval_participant(p, dataset.test, eval_attack, train.seed, epoch, train.batch_size)
            clean_accs.append(clean)
            robust_accs.append(robust)
            if robust > best_acc[i]:
                best_acc[i] = robust
                best[i] = snapshot(p.classifier, epoch, {
                    "pgd_robust_acc": robust, "clean_acc": clean, "rng_tag": p.rng_tag,
                })
        log.append(EpochRecord(
            epoch=epoch,
            lr=lr_at(train, epoch),
            losses=[s / n_batches for s in loss_sums],
            clean_acc=clean_accs,
            robust_acc=robust_accs,
        ))

    last = [
        snapshot(p.classifier, train.epochs - 1, {
            "pgd_robust_acc": log.records[-1].robust_acc[i],
            "clean_acc": log.records[-1].clean_acc[i],
            "rng_tag": p.rng_tag,
        })
        for i, p in enumerate(participants)
    ]
    return FitResult(log=log, best=list(best), last=last)


def select_best_checkpoint(log: TrainingLog, checkpoints: Sequence[Checkpoint], participant: int = 0) -> Checkpoint:
    """Checkpoint at the epoch of maximal PGD robust accuracy, earliest tie.

    ``checkpoints`` holds one snapshot per logged epoch, in order.
    """
    if len(log) == 0:
        raise ValueError("empty training log")
    if len(checkpoints) != len(log):
        raise ValueError("need one checkpoint per logged epoch")
    accs = [r.robust_acc[participant] for r in log.records]
    best_epoch = max(range(len(accs)), key=lambda e: (accs[e], -e))
    return checkpoints[best_epoch]


# -- named collaborative configurations --------------------------------------

CONFIGURATION_NAMES = ("CAT_T-A", "CAT_A-T", "CAT_A-A", "CAT_T-T", "CAT_P-C", "CAT_A-A-T")


@dataclass(frozen=True)
class CatConfiguration:
    name: str
    methods: tuple
    alpha: float = 0.05
    dual_attack: Optional[Tuple[AttackConfig, AttackConfig]] = None


def make_configuration(name: str, alpha: float = 0.05) -> CatConfiguration:
    """Template (participant methods + trade-off) for a named setup."""
    if name == "CAT_T-A":
        methods = (MethodSpec("TRADES"), MethodSpec("ALP"))
    elif name == "CAT_A-T":
        methods = (MethodSpec("AT"), MethodSpec("TRADES"))
    elif name == "CAT_A-A":
        methods = (MethodSpec("AT"), MethodSpec("ALP"))
    elif name == "CAT_T-T":
        methods = (MethodSpec("TRADES"), MethodSpec("TRADES"))
    elif name == "CAT_A-A-T":
        methods = (MethodSpec("AT"), MethodSpec("ALP"), MethodSpec("TRADES"))
    elif name == "CAT_P-C":
        base = AttackConfig()
        return CatConfiguration(
            name=name,
            methods=(MethodSpec("AT"),),
            alpha=alpha,
            dual_attack=(
                AttackConfig(base.epsilon, base.step_size, base.iterations, base.random_start, "ce"),
                AttackConfig(base.epsilon, base.step_size, base.iterations, base.random_start, "cw"),
            ),
        )
    else:
        raise ValueError(f"unknown configuration {name!r}; choose from {CONFIGURATION_NAMES}")
    return CatConfiguration(name=name, methods=methods, alpha=alpha)
