#!/usr/bin/env python3
"""Train a TRADES-ALP collaborative pair against standalone baselines and
report best-checkpoint robust accuracy gaps.

Example:
    python3 scripts/compare_cat_vs_standalone.py --dataset two-moons \
        --seeds 0 1 2 --epochs 100 --out /tmp/cat_compare
"""

import argparse
import csv
import json
import os

from collabadv.attacks import AttackConfig
from collabadv.core import Architecture, Classifier
from collabadv.data import DatasetSpec, generate_dataset
from collabadv.losses import CollabConfig, MethodSpec
from collabadv.seeding import derive_seed
from collabadv.training import Participant, TrainConfig, fit

ARCHS = {
    "two-moons": Architecture("mlp", (2,), 2, (16,)),
    "gaussian-blobs": Architecture("mlp", (2,), 3, (16,)),
    "tiny-images-subset": Architecture("mlp", (1, 8, 8), 10, (32,)),
}

ATTACKS = {
    "two-moons": AttackConfig(0.1, 0.025, 10, True),
    "gaussian-blobs": AttackConfig(0.1, 0.025, 10, True),
    "tiny-images-subset": AttackConfig(8 / 255, 2 / 255, 5, True),
}


def make_participant(arch, method, seed, index):
    return Participant(
        classifier=Classifier(arch, seed=derive_seed(seed, "participant", index)),
        method=method,
        rng_tag=str(index),
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset", choices=sorted(ARCHS), default="two-moons")
    parser.add_argument("--size", type=int, default=1000)
    parser.add_argument("--noise", type=float, default=0.2)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    arch = ARCHS[args.dataset]
    attack = ATTACKS[args.dataset]
    data = generate_dataset(DatasetSpec(args.dataset, size=args.size, noise=args.noise, seed=args.data_seed))
    drops = ((args.epochs * 3 // 5, 10.0), (args.epochs * 4 // 5, 10.0))

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed in args.seeds:
        train = TrainConfig(epochs=args.epochs, batch_size=64, base_lr=0.1, lr_drops=drops,
                            momentum=0.9, weight_decay=5e-4, seed=seed, inner_attack=attack)
        cat = fit(
            [make_participant(arch, MethodSpec("TRADES"), seed, 0),
             make_participant(arch, MethodSpec("ALP"), seed, 1)],
            data, CollabConfig(args.alpha), train,
        )
        solo_tr = fit([make_participant(arch, MethodSpec("TRADES"), seed, 0)], data, CollabConfig(1.0), train)
        solo_alp = fit([make_participant(arch, MethodSpec("ALP"), seed, 1)], data, CollabConfig(1.0), train)
        row = {
            "seed": seed,
            "cat_trades": cat.best[0].meta["pgd_robust_acc"],
            "cat_alp": cat.best[1].meta["pgd_robust_acc"],
            "solo_trades": solo_tr.best[0].meta["pgd_robust_acc"],
            "solo_alp": solo_alp.best[0].meta["pgd_robust_acc"],
        }
        row["gap_trades"] = row["cat_trades"] - row["solo_trades"]
        row["gap_alp"] = row["cat_alp"] - row["solo_alp"]
        rows.append(row)
        print(f"seed {seed}: TRADES {row['cat_trades']:.3f} vs {row['solo_trades']:.3f} "
              f"({row['gap_trades']:+.3f}), ALP {row['cat_alp']:.3f} vs {row['solo_alp']:.3f} "
              f"({row['gap_alp']:+.3f})")

    n = len(rows)
    summary = {
        "dataset": args.dataset,
        "alpha": args.alpha,
        "mean_gap_trades": sum(r["gap_trades"] for r in rows) / n,
        "mean_gap_alp": sum(r["gap_alp"] for r in rows) / n,
    }
    print(f"mean gap: TRADES {summary['mean_gap_trades']:+.4f}, ALP {summary['mean_gap_alp']:+.4f}")

    with open(os.path.join(args.out, "comparison.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
