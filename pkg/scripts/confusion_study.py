#!/usr/bin/env python3
"""Train standalone AT and TRADES models and measure how differently
they fail under attack: cross-model confusion and prediction discrepancy.

Example:
    python3 scripts/confusion_study.py --seeds 0 1 2 --out /tmp/confusion
"""

import argparse
import json
import os

from collabadv import analysis
from collabadv.attacks import AttackConfig
from collabadv.core import Architecture, Classifier
from collabadv.data import DatasetSpec, generate_dataset
from collabadv.losses import CollabConfig, MethodSpec
from collabadv.seeding import derive_seed, make_generator
from collabadv.training import Participant, TrainConfig, fit

ARCH = Architecture("mlp", (2,), 2, (16,))


def train_one(method, data, seed, index, epochs):
    train = TrainConfig(
        epochs=epochs, batch_size=64, base_lr=0.1, lr_drops=(),
        seed=seed, inner_attack=AttackConfig(0.1, 0.05, 5, True),
    )
    part = Participant(
        classifier=Classifier(ARCH, seed=derive_seed(seed, "participant", index)),
        method=method,
        rng_tag=str(index),
    )
    return fit([part], data, CollabConfig(1.0), train).best[0].to_classifier()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=300)
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    attack = AttackConfig(0.1, 0.05, 10, True)
    results = []
    for seed in args.seeds:
        data = generate_dataset(DatasetSpec("two-moons", size=args.size, noise=args.noise, seed=seed))
        m_at = train_one(MethodSpec("AT"), data, seed, 0, args.epochs)
        m_tr = train_one(MethodSpec("TRADES"), data, seed, 1, args.epochs)

        cm = analysis.cross_confusion(
            m_at, m_tr, data.test, attack,
            generator=make_generator(seed, "confusion"), names=("AT", "TRADES"),
        )
        score = analysis.prediction_discrepancy(
            m_at, m_tr, data.test, attack, generator=make_generator(seed, "confusion"),
        )
        cm.write_csv(os.path.join(args.out, f"confusion_seed{seed}.csv"))
        results.append({"seed": seed, "discrepancy": score.discrepancy, "intersection": score.intersection})
        print(f"seed {seed}: discrepancy {score.discrepancy:.4f} (intersection {score.intersection:.4f})")

    with open(os.path.join(args.out, "discrepancy.json"), "w") as fh:
        json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
