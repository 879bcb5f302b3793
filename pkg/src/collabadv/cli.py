"""Command-line entry points: train, eval, analyze, gen-data.

Every command is headless and exits with 0 on success, 2 on
configuration/validation errors, and 3 on training divergence, so the
toolkit can run unattended in CI.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time

from collabadv import __version__, analysis
from collabadv.attacks import AttackConfig
from collabadv.config import ConfigParseError, RunManifest, load_config
from collabadv.core import Checkpoint, Classifier, DivergenceError
from collabadv.data import generate_dataset, save_dataset_dir
from collabadv.losses import CollabConfig
from collabadv.seeding import derive_seed, make_generator
from collabadv.training import Participant, fit


def _load_and_override(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    out_dir = args.out or cfg.out_dir
    if out_dir is None:
        raise ConfigParseError("no output directory: set out_dir in the config or pass --out")
    return cfg, out_dir


def _build_participants(cfg):
    root = cfg.train.seed
    return [
        Participant(
            classifier=Classifier(pc.arch, seed=derive_seed(root, "participant", i)),
            method=pc.method,
            rng_tag=str(i),
        )
        for i, pc in enumerate(cfg.participants)
    ]


def cmd_train(args) -> int:
    cfg, out_dir = _load_and_override(args)
    os.makedirs(out_dir, exist_ok=True)
    dataset = generate_dataset(cfg.dataset)
    participants = _build_participants(cfg)
    collab = CollabConfig(cfg.alpha, [(p.classifier, p.method) for p in participants])
    started = time.monotonic()
    result = fit(participants, dataset, collab, cfg.train)
    duration = time.monotonic() - started

    artifacts = {}
    log_path = os.path.join(out_dir, "training_log.csv")
    result.log.write_csv(log_path)
    artifacts["training_log"] = log_path
    for i in range(len(participants)):
        for tag, ckpt in (("best", result.best[i]), ("last", result.last[i])):
            path = os.path.join(out_dir, f"participant{i}_{tag}.npz")
            ckpt.save(path)
            artifacts[f"participant{i}_{tag}"] = path
    manifest = RunManifest(
        config_hash=cfg.config_hash(),
        toolkit_version=__version__,
        seed=cfg.train.seed,
        duration_s=duration,
        artifacts=artifacts,
    )
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest.write(manifest_path)
    print(f"wrote {len(artifacts) + 1} artifacts to {out_dir} (config hash {cfg.config_hash()[:12]})")
    return 0


def _eval_attacks(cfg):
    if cfg.eval_attacks:
        return list(cfg.eval_attacks)
    return analysis.standard_eval_suite(cfg.train.inner_attack.epsilon, cfg.train.inner_attack.step_size)


def _eval_generator(cfg, name, attack, ckpt, ckpt_index):
    # If this is the same PGD the trainer used for checkpoint selection,
    # replay the trainer's evaluation substream so the reported accuracy
    # reproduces the training log exactly.
    ia = cfg.train.inner_attack
    trainer_eval = AttackConfig(ia.epsilon, ia.step_size, ia.iterations, True, "ce")
    tag = ckpt.meta.get("rng_tag")
    if tag is not None and attack == trainer_eval:
        return make_generator(cfg.train.seed, "eval-attack", tag, ckpt.epoch)
    return make_generator(cfg.train.seed, "eval-cli", name, ckpt_index)


def cmd_eval(args) -> int:
    cfg, out_dir = _load_and_override(args)
    os.makedirs(out_dir, exist_ok=True)
    dataset = generate_dataset(cfg.dataset)
    checkpoints = [Checkpoint.load(p) for p in args.checkpoints]
    models = [c.to_classifier() for c in checkpoints]
    attacks = _eval_attacks(cfg)

    reports = []
    for k, (path, ckpt, model) in enumerate(zip(args.checkpoints, checkpoints, models)):
        report = analysis.RobustnessReport(model_name=os.path.basename(path), metadata={"epoch": ckpt.epoch})
        report.entries.append(analysis.robust_accuracy(model, dataset.test, None, name="clean"))
        for name, attack in attacks:
            gen = _eval_generator(cfg, name, attack, ckpt, k)
            report.entries.append(analysis.robust_accuracy(model, dataset.test, attack, generator=gen, name=name))
        reports.append(report)

    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "report.csv")
    import csv as _csv
    import json as _json
    with open(json_path, "w") as fh:
        _json.dump([r.to_dict() for r in reports], fh, indent=2)
    with open(csv_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["model", "attack", "accuracy", "correct", "count"])
        for r in reports:
            for e in r.entries:
                writer.writerow([r.model_name, e.attack_name, repr(e.accuracy), e.correct, e.count])
    print(f"wrote {json_path} and {csv_path}")

    if args.confusion:
        if len(models) != 2:
            raise ConfigParseError("--confusion needs exactly two checkpoints")
        _emit_confusion(models, args.checkpoints, dataset, out_dir, attack=None, zero_diagonal=False)
    return 0


def _emit_confusion(models, paths, dataset, out_dir, attack, zero_diagonal, generator=None):
    names = tuple(os.path.basename(p) for p in paths)
    cm = analysis.cross_confusion(models[0], models[1], dataset.test, attack, generator=generator, names=names)
    score = analysis.DiscrepancyScore(intersection=float(cm.counts.trace()) / cm.total)
    cm.write_csv(os.path.join(out_dir, "confusion.csv"), zero_diagonal=zero_diagonal)
    cm.write_json(os.path.join(out_dir, "confusion.json"), zero_diagonal_csv=zero_diagonal)
    import json as _json
    with open(os.path.join(out_dir, "discrepancy.json"), "w") as fh:
        _json.dump(score.to_dict(), fh, indent=2)
    print(f"confusion + discrepancy written to {out_dir} (discrepancy {score.discrepancy:.4f})")


def cmd_analyze(args) -> int:
    cfg, out_dir = _load_and_override(args)
    os.makedirs(out_dir, exist_ok=True)
    dataset = generate_dataset(cfg.dataset)
    checkpoints = [Checkpoint.load(p) for p in args.checkpoints]
    if checkpoints[0].arch.num_classes != checkpoints[1].arch.num_classes:
        raise ConfigParseError("checkpoints disagree on class count")
    models = [c.to_classifier() for c in checkpoints]
    attack = None
    generator = None
    if args.adversarial:
        attacks = _eval_attacks(cfg)
        attack = attacks[0][1]
        generator = make_generator(cfg.train.seed, "analyze-attack")
    _emit_confusion(models, args.checkpoints, dataset, out_dir, attack, args.zero_diagonal, generator)
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out or cfg.out_dir
    if out_dir is None:
        raise ConfigParseError("no output directory: set out_dir in the config or pass --out")
    spec = cfg.dataset
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    save_dataset_dir(generate_dataset(spec), out_dir)
    print(f"wrote dataset {spec.name} (size {spec.size}, seed {spec.seed}) to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collabadv", description="Collaborative adversarial training toolkit")
    parser.add_argument("--version", action="version", version=f"collabadv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the training seed")
        p.add_argument("--out", default=None, help="output directory (overrides config out_dir)")

    p_train = sub.add_parser("train", help="run collaborative training")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints under the configured attacks")
    common(p_eval)
    p_eval.add_argument("checkpoints", nargs="+", help="checkpoint .npz files")
    p_eval.add_argument("--confusion", action="store_true", help="also emit a cross-model confusion matrix (2 checkpoints)")
    p_eval.set_defaults(func=cmd_eval)

    p_an = sub.add_parser("analyze", help="cross-model confusion and prediction discrepancy")
    common(p_an)
    p_an.add_argument("checkpoints", nargs=2, help="two checkpoint .npz files")
    p_an.add_argument("--zero-diagonal", action="store_true", help="zero the diagonal in the CSV (raw counts kept in JSON)")
    p_an.add_argument("--adversarial", action="store_true", help="compare on adversarial instead of clean inputs")
    p_an.set_defaults(func=cmd_analyze)

    p_gen = sub.add_parser("gen-data", help="generate a dataset directory")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
