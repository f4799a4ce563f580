"""Desk-scale ablation: component toggles and self-supervision strategies.

Generates procedural data, runs both toggle matrices through the ``ablate``
pipeline and prints the resulting table. Orderings at this scale are noisy;
treat the CSV as a harness check, not as a reproduction of full-size results.

    python scripts/run_ablation.py --out runs/ablation --iters 150
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
from pathlib import Path

from crn.cli import run_ablation
from crn.config import RunConfig, TrainConfig
from crn.selfsup import make_labeled_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--shapes", type=int, default=100)
    ap.add_argument("--test-shapes", type=int, default=20)
    ap.add_argument("--iters", type=int, default=150, help="training iterations per run")
    ap.add_argument("--ratio", type=float, default=0.1, help="labeled ratio for the strategy matrix")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = make_labeled_dataset(args.shapes, seed=args.seed + 1)
    split = args.shapes - args.test_shapes
    train = TrainConfig(lr_g=1e-3, lr_d=5e-4, epochs=10**6, max_iters=args.iters, batch_size=8,
                        ramp_iters=max(1, args.iters // 4), decay_period=10, seed=args.seed, eval_every=0)
    cfg = dataclasses.replace(RunConfig(), train=train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_ablation(cfg, data[:split], data[split:], args.ratio, out / "ablation.csv")

    with open(out / "ablation.csv") as fh:
        for row in csv.reader(fh):
            print("  ".join(f"{c:>10.10}" for c in row))


if __name__ == "__main__":
    main()
