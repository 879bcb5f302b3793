"""Training objectives: base robust losses, peer-guidance terms, and the
combined collaborative objective.

Three base methods are supported, tagged by MethodSpec:

  AT      adversarial cross-entropy (CE on PGD examples)
  TRADES  clean CE + lambda * KL(clean logits || adversarial logits)
  ALP     adversarial CE + lambda * mean squared clean/adv logit gap

Collaboration adds, for each participant, the mean KL divergence from its
own logits on its own adversarial batch to each peer's logits on that
same batch, with the peer logits treated as constants (stop-gradient).
The per-participant training loss is

  loss_i = alpha * base_i + (1 - alpha) * mean_j KL(self_i || stopgrad(peer_j))

which for two participants expands into the familiar four-term sum and
for a single participant degenerates to alpha * base.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from collabadv.attacks import AdversarialBatch, AttackConfig, craft_for_method
from collabadv.core import Classifier, LabeledBatch

__all__ = [
    "MethodSpec",
    "CollabConfig",
    "cross_entropy",
    "kl_divergence",
    "at_loss",
    "trades_loss",
    "alp_loss",
    "collab_term",
    "method_loss",
    "cat_objective",
]

METHOD_KINDS = ("AT", "TRADES", "ALP")

DEFAULT_TRADES_LAMBDA = 6.0
DEFAULT_ALP_LAMBDA = 0.5


@dataclass(frozen=True)
class MethodSpec:
    """Tagged choice of base training objective."""

    kind: str
    lam: Optional[float] = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.kind == "AT":
            return
        if self.lam is None:
            object.__setattr__(
                self,
                "lam",
                DEFAULT_TRADES_LAMBDA if self.kind == "TRADES" else DEFAULT_ALP_LAMBDA,
            )
        if self.lam <= 0:
            raise ValueError("lambda must be positive")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "AT":
            d["lambda"] = self.lam
        return d


@dataclass
class CollabConfig:
    """Trade-off alpha and the ordered participant list.

    alpha = 0 is rejected: with no label supervision the participants
    only imitate each other and training collapses. Tests that want to
    demonstrate exactly that collapse can set unsafe_allow_collapse.
    """

    alpha: float
    participants: List[Tuple[Classifier, MethodSpec]] = field(default_factory=list)
    unsafe_allow_collapse: bool = False

    def __post_init__(self):
        lo_ok = self.alpha > 0 or (self.unsafe_allow_collapse and self.alpha == 0)
        if not (lo_ok and self.alpha <= 1):
            raise ValueError("alpha must lie in (0, 1]")


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean -log softmax(logits)[y], in stable log-sum-exp form."""
    return F.cross_entropy(logits, labels)


def kl_divergence(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of KL(softmax(p) || softmax(q))."""
    if p_logits.shape != q_logits.shape:
        raise ValueError("logit shapes must match")
    p_log = F.log_softmax(p_logits, dim=1)
    q_log = F.log_softmax(q_logits, dim=1)
    return (p_log.exp() * (p_log - q_log)).sum(dim=1).mean()


def at_loss(model: Classifier, adv_batch: AdversarialBatch) -> torch.Tensor:
    """Cross-entropy on the perturbed inputs."""
    return cross_entropy(model.logits(adv_batch.perturbed), adv_batch.labels)


def trades_loss(
    model: Classifier,
    clean_batch: LabeledBatch,
    adv_batch: AdversarialBatch,
    lam: float,
) -> torch.Tensor:
    """Clean CE plus lambda-weighted clean-to-adversarial KL."""
    clean_logits = model.logits(clean_batch.inputs)
    adv_logits = model.logits(adv_batch.perturbed)
    return cross_entropy(clean_logits, clean_batch.labels) + lam * kl_divergence(clean_logits, adv_logits)


def alp_loss(
    model: Classifier,
    clean_batch: LabeledBatch,
    adv_batch: AdversarialBatch,
    lam: float,
) -> torch.Tensor:
    """Adversarial CE plus lambda-weighted mean squared logit pairing gap."""
    clean_logits = model.logits(clean_batch.inputs)
    adv_logits = model.logits(adv_batch.perturbed)
    pairing = ((clean_logits - adv_logits) ** 2).mean()
    return cross_entropy(adv_logits, adv_batch.labels) + lam * pairing


def collab_term(self_logits: torch.Tensor, peer_logits: torch.Tensor) -> torch.Tensor:
    """KL(self || peer) peer-guidance term.

    The caller must pass peer logits that carry no gradient linkage to
    the peer's parameters (detach them); this function only delegates to
    kl_divergence so the stop-gradient contract stays visible at the
    call site.
    """
    return kl_divergence(self_logits, peer_logits)


def method_loss(
    model: Classifier,
    method: MethodSpec,
    clean_batch: LabeledBatch,
    adv_batch: AdversarialBatch,
) -> torch.Tensor:
    if method.kind == "AT":
        return at_loss(model, adv_batch)
    if method.kind == "TRADES":
        return trades_loss(model, clean_batch, adv_batch, method.lam)
    return alp_loss(model, clean_batch, adv_batch, method.lam)


def cat_objective(
    participants: Sequence[Tuple[Classifier, MethodSpec]],
    batch: LabeledBatch,
    alpha: float,
    attack_config: Optional[AttackConfig] = None,
    adv_batches: Optional[Sequence[AdversarialBatch]] = None,
    generators: Optional[Sequence[Optional[torch.Generator]]] = None,
) -> List[torch.Tensor]:
    """Per-participant collaborative losses on one batch.

    Each participant crafts (or is handed) its own adversarial batch;
    its loss combines its base objective on that batch with the mean
    peer-guidance KL evaluated on the same batch, peers stop-gradient.
    At alpha = 1 the guidance term is skipped entirely, so the result is
    bitwise identical to the standalone method losses.
    """
    if len(participants) == 0:
        raise ValueError("need at least one participant")
    if adv_batches is None:
        if attack_config is None:
            raise ValueError("provide either attack_config or precomputed adv_batches")
        if generators is None:
            generators = [None] * len(participants)
        adv_batches = [
            craft_for_method(model, method, batch, attack_config, generator=gen)
            for (model, method), gen in zip(participants, generators)
        ]
    if len(adv_batches) != len(participants):
        raise ValueError("one adversarial batch per participant required")

    losses = []
    for i, (model, method) in enumerate(participants):
        base = method_loss(model, method, batch, adv_batches[i])
        if alpha == 1.0 or len(participants) == 1:
            losses.append(alpha * base)
            continue
        self_logits = model.logits(adv_batches[i].perturbed)
        peer_terms = []
        for j, (peer, _) in enumerate(participants):
            if j == i:
                continue
            with torch.no_grad():
                peer_logits = peer.logits(adv_batches[i].perturbed)
            peer_terms.append(collab_term(self_logits, peer_logits))
        guidance = sum(peer_terms) / len(peer_terms)
        losses.append(alpha * base + (1.0 - alpha) * guidance)
    return losses
