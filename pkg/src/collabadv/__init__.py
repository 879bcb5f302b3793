"""Desk-scale toolkit for collaborative adversarial training.

Small deterministic classifiers, L-inf sign-gradient attacks, robust
training objectives (adversarial CE, clean-CE + KL smoothing, logit
pairing), a peer-guided collaborative trainer, and the evaluation
machinery (robust accuracy, transfer attacks, cross-model confusion and
prediction discrepancy) needed to study how robust models trained with
different objectives disagree and what joint training buys.

Everything runs in float64 on CPU and is bitwise reproducible from a
single root seed.
"""

__version__ = "0.1.0"

from collabadv.core import Architecture, Classifier, LabeledBatch
from collabadv.attacks import AttackConfig, AdversarialBatch
from collabadv.losses import MethodSpec, CollabConfig
from collabadv.training import TrainConfig

__all__ = [
    "Architecture",
    "Classifier",
    "LabeledBatch",
    "AttackConfig",
    "AdversarialBatch",
    "MethodSpec",
    "CollabConfig",
    "TrainConfig",
    "__version__",
]
