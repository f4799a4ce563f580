"""Desk-scale training run on procedural shapes; prints a JSON summary.

    python scripts/smoke_train.py --ratio 1.0            # supervised
    python scripts/smoke_train.py --ratio 0.0            # resampling + MixUp only

Run with OPENBLAS_NUM_THREADS=1 (or OMP_NUM_THREADS=1) for single-thread timing.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import time

from crn.config import NetConfig, TrainConfig
from crn.selfsup import make_labeled_dataset
from crn.train import compute_mean_shapes, evaluate, fit, init_state


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratio", type=float, default=1.0, help="labeled ratio; below 1 enables resampling and MixUp")
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--shapes", type=int, default=200)
    ap.add_argument("--test-shapes", type=int, default=40)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--replay", type=int, default=20, help="iterations re-run to check determinism (0 skips)")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()
    if args.verbose:
        logging.basicConfig(level=logging.INFO)

    data = make_labeled_dataset(args.shapes, n_points=512, n_input=256, seed=args.data_seed)
    train, test = data[: args.shapes - args.test_shapes], data[args.shapes - args.test_shapes:]
    net = NetConfig()
    cfg = TrainConfig(
        lr_g=args.lr, lr_d=args.lr / 2, epochs=10**6, max_iters=args.iters, batch_size=8,
        ramp_iters=max(1, args.iters // 4), decay_period=10, seed=args.seed,
        labeled_ratio=args.ratio, resampling=args.ratio < 1, mixup=args.ratio < 1, eval_every=0,
    )

    start = init_state(net, cfg)
    start.mean_shapes = compute_mean_shapes(train, start.gen)
    before, _ = evaluate(start, test, full=False)

    t0 = time.perf_counter()
    state, rows = fit(train, net, cfg)
    seconds = time.perf_counter() - t0
    after, _ = evaluate(state, test, full=False)

    replay_ok = None
    if args.replay:
        _, again = fit(train, net, dataclasses.replace(cfg, max_iters=args.replay))
        replay_ok = again == rows[: args.replay]

    print(json.dumps({
        "ratio": args.ratio,
        "iterations": state.iteration,
        "seconds": seconds,
        "cd2_before": before["cd2"],
        "cd2_after": after["cd2"],
        "cd2_ratio": after["cd2"] / before["cd2"],
        "cd1_before": before["cd1"],
        "cd1_after": after["cd1"],
        "replay_identical": replay_ok,
    }))


if __name__ == "__main__":
    main()
