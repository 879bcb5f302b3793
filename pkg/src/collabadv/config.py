"""Experiment configuration: strict JSON parsing, canonicalization, hashing,
and the run manifest.

Parsing is strict: any unknown field anywhere in the document is an
error naming the field, so silent config drift cannot happen. The
canonical form (sorted keys, defaults filled in) is a fixed point of
parse -> canonicalize -> reparse, and the manifest's config hash is the
SHA-256 of the canonical text with output paths excluded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from collabadv.attacks import AttackConfig
from collabadv.core import Architecture
from collabadv.data import DatasetSpec
from collabadv.losses import MethodSpec
from collabadv.training import TrainConfig

__all__ = ["ExperimentConfig", "ParticipantConfig", "RunManifest", "ConfigParseError", "load_config"]


class ConfigParseError(ValueError):
    pass


def _check_fields(d: dict, allowed, required, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigParseError(f"{where}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigParseError(f"{where}: unknown field(s) {', '.join(unknown)}")
    missing = sorted(set(required) - set(d))
    if missing:
        raise ConfigParseError(f"{where}: missing required field(s) {', '.join(missing)}")


def _parse_dataset(d: dict) -> DatasetSpec:
    _check_fields(d, ["name", "size", "noise", "seed", "classes", "dim", "path"], ["name"], "dataset")
    try:
        return DatasetSpec(
            name=d["name"],
            size=int(d.get("size", 1000)),
            noise=float(d.get("noise", 0.1)),
            seed=int(d.get("seed", 0)),
            classes=d.get("classes"),
            dim=d.get("dim"),
            path=d.get("path"),
        )
    except ValueError as exc:
        raise ConfigParseError(f"dataset: {exc}") from exc


def _parse_arch(d: dict, where: str) -> Architecture:
    _check_fields(d, ["kind", "input_shape", "num_classes", "hidden"], ["kind", "input_shape", "num_classes"], where)
    try:
        if "hidden" in d:
            return Architecture(d["kind"], tuple(d["input_shape"]), int(d["num_classes"]), tuple(d["hidden"]))
        return Architecture(d["kind"], tuple(d["input_shape"]), int(d["num_classes"]))
    except ValueError as exc:
        raise ConfigParseError(f"{where}: {exc}") from exc


def _parse_method(d: dict, where: str) -> MethodSpec:
    _check_fields(d, ["kind", "lambda"], ["kind"], where)
    try:
        return MethodSpec(kind=d["kind"], lam=d.get("lambda"))
    except ValueError as exc:
        raise ConfigParseError(f"{where}: {exc}") from exc


def _parse_attack(d: dict, where: str) -> AttackConfig:
    _check_fields(
        d,
        ["epsilon", "step_size", "iterations", "random_start", "objective"],
        [],
        where,
    )
    base = AttackConfig()
    try:
        return AttackConfig(
            epsilon=float(d.get("epsilon", base.epsilon)),
            step_size=float(d.get("step_size", base.step_size)),
            iterations=int(d.get("iterations", base.iterations)),
            random_start=bool(d.get("random_start", base.random_start)),
            objective=d.get("objective", base.objective),
        )
    except ValueError as exc:
        raise ConfigParseError(f"{where}: {exc}") from exc


def _parse_train(d: dict) -> TrainConfig:
    allowed = ["epochs", "batch_size", "base_lr", "lr_drops", "momentum", "weight_decay", "seed", "inner_attack"]
    _check_fields(d, allowed, [], "train")
    base = TrainConfig()
    try:
        return TrainConfig(
            epochs=int(d.get("epochs", base.epochs)),
            batch_size=int(d.get("batch_size", base.batch_size)),
            base_lr=float(d.get("base_lr", base.base_lr)),
            lr_drops=tuple(tuple(x) for x in d.get("lr_drops", base.lr_drops)),
            momentum=float(d.get("momentum", base.momentum)),
            weight_decay=float(d.get("weight_decay", base.weight_decay)),
            seed=int(d.get("seed", base.seed)),
            inner_attack=_parse_attack(d.get("inner_attack", {}), "train.inner_attack"),
        )
    except ConfigParseError:
        raise
    except ValueError as exc:
        raise ConfigParseError(f"train: {exc}") from exc


@dataclass(frozen=True)
class ParticipantConfig:
    arch: Architecture
    method: MethodSpec

    def to_dict(self) -> dict:
        return {"arch": self.arch.to_dict(), "method": self.method.to_dict()}


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    participants: List[ParticipantConfig]
    alpha: float
    train: TrainConfig
    eval_attacks: List[Tuple[str, AttackConfig]] = field(default_factory=list)
    out_dir: Optional[str] = None

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        _check_fields(
            d,
            ["dataset", "participants", "collab", "train", "eval", "out_dir"],
            ["dataset", "participants", "collab"],
            "config",
        )
        collab = d["collab"]
        _check_fields(collab, ["alpha"], ["alpha"], "collab")
        alpha = float(collab["alpha"])
        if not (0.0 < alpha <= 1.0):
            raise ConfigParseError("collab.alpha: must lie in (0, 1]")
        if not isinstance(d["participants"], list) or not d["participants"]:
            raise ConfigParseError("participants: need a non-empty list")
        participants = []
        for i, pd in enumerate(d["participants"]):
            where = f"participants[{i}]"
            _check_fields(pd, ["arch", "method"], ["arch", "method"], where)
            participants.append(ParticipantConfig(
                arch=_parse_arch(pd["arch"], where + ".arch"),
                method=_parse_method(pd["method"], where + ".method"),
            ))
        eval_attacks = []
        for i, ed in enumerate(d.get("eval", [])):
            where = f"eval[{i}]"
            _check_fields(ed, ["name", "epsilon", "step_size", "iterations", "random_start", "objective"], ["name"], where)
            body = {k: v for k, v in ed.items() if k != "name"}
            eval_attacks.append((ed["name"], _parse_attack(body, where)))
        return ExperimentConfig(
            dataset=_parse_dataset(d["dataset"]),
            participants=participants,
            alpha=alpha,
            train=_parse_train(d.get("train", {})),
            eval_attacks=eval_attacks,
            out_dir=d.get("out_dir"),
        )

    def to_dict(self) -> dict:
        d = {
            "dataset": self.dataset.to_dict(),
            "participants": [p.to_dict() for p in self.participants],
            "collab": {"alpha": self.alpha},
            "train": self.train.to_dict(),
            "eval": [dict({"name": name}, **cfg.to_dict()) for name, cfg in self.eval_attacks],
        }
        if self.out_dir is not None:
            d["out_dir"] = self.out_dir
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        # Output paths are excluded: moving artifacts does not change the run.
        d = self.to_dict()
        d.pop("out_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


@dataclass
class RunManifest:
    config_hash: str
    toolkit_version: str
    seed: int
    duration_s: float
    artifacts: dict

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {
                    "config_hash": self.config_hash,
                    "toolkit_version": self.toolkit_version,
                    "seed": self.seed,
                    "duration_s": self.duration_s,
                    "artifacts": self.artifacts,
                },
                fh,
                indent=2,
            )
