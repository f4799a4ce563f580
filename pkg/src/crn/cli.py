"""``crn`` command line: gen-data, train, complete, evaluate, ablate."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, parse_config, parse_config_text
from .errors import ContractError, FormatError
from .io import read_cloud, read_manifest, write_cloud, write_manifest
from .metrics import METRIC_COLUMNS, MetricsReport, cloud_metrics
from .model import complete
from .selfsup import make_labeled_dataset
from .shapes import SHAPE_KINDS
from .train import TrainingError, evaluate, fit, write_loss_log

log = logging.getLogger("crn")

ABLATION_COLUMNS = (
    "table", "mirror", "contraction_expansion", "discriminator",
    "resampling", "mixup", "partial_ae", "labeled_ratio", "iterations", "cd1", "cd2", "fscore",
)


def _load_config(path) -> RunConfig:
    return parse_config(path) if path else parse_config_text("")


def cmd_gen_data(args) -> int:
    pairs = make_labeled_dataset(args.n_shapes, args.n_points, args.n_input, seed=args.seed,
                                 kinds=tuple(args.kinds.split(",")) if args.kinds else SHAPE_KINDS)
    n_test = int(round(args.test_fraction * len(pairs)))
    out = Path(args.out)
    train_manifest = write_manifest(pairs[n_test:], out / "train")
    print(f"wrote {len(pairs) - n_test} training pairs to {train_manifest}")
    if n_test:
        test_manifest = write_manifest(pairs[:n_test], out / "test")
        print(f"wrote {n_test} test pairs to {test_manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data = args.data or cfg.data
    if not data:
        raise ContractError("no training manifest: pass --data or set data= in the config")
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_used.txt").write_text(dump_config(cfg))
    dataset = read_manifest(data)
    test_path = args.test_data or cfg.test_data
    eval_pairs = read_manifest(test_path) if test_path else None
    state = load_checkpoint(args.resume) if args.resume else None
    ckpt = out / "checkpoint.crn"
    state, rows = fit(dataset, cfg.net, cfg.train, eval_pairs, state, ckpt)
    save_checkpoint(ckpt, state)
    write_loss_log(rows, out / "loss_log.csv")
    if state.metrics_log:
        with open(out / "metrics.csv", "w", newline="") as fh:
            fh.write("epoch," + MetricsReport.csv_header() + "\n")
            for entry in state.metrics_log:
                values = {k: v for k, v in entry.items() if k != "epoch"}
                fh.write(f"{entry['epoch']},{MetricsReport(values).to_csv_row()}\n")
    print(f"trained {state.iteration} iterations over {state.epoch} epochs; checkpoint {ckpt}")
    return 0


def cmd_complete(args) -> int:
    state = load_checkpoint(args.ckpt)
    P = read_cloud(args.inp)
    prior = state.mean_shapes.lookup(args.category) if args.category else state.mean_shapes.global_mean
    from . import tensor as T

    with T.no_grad():
        coarse, dense = complete(P, state.gen, state.net, args.seed, prior, iterations=args.iters)
    out = Path(args.out)
    coarse_path = Path(args.coarse_out) if args.coarse_out else out.with_name(out.stem + "_coarse" + out.suffix)
    write_cloud(dense.data, out)
    write_cloud(coarse.data, coarse_path)
    print(f"wrote {len(dense.data)} dense points to {out} and {len(coarse.data)} coarse points to {coarse_path}")
    return 0


def _write_metrics(rows: list[tuple[str, MetricsReport]], path) -> None:
    text = "name," + MetricsReport.csv_header() + "\n"
    text += "".join(f"{name},{report.to_csv_row()}\n" for name, report in rows)
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


def cmd_evaluate(args) -> int:
    if args.pred:
        if not args.gt:
            raise ContractError("--pred needs --gt")
        partial = read_cloud(args.input) if args.input else None
        report = cloud_metrics(read_cloud(args.pred), read_cloud(args.gt), partial, args.tau)
        _write_metrics([("pair", report)], args.out)
        return 0
    if not (args.ckpt and args.data):
        raise ContractError("evaluate needs either --pred/--gt or --ckpt/--data")
    state = load_checkpoint(args.ckpt)
    overall, per_cat = evaluate(state, read_manifest(args.data), seed=args.seed, tau=args.tau,
                                with_emd=not args.no_emd)
    _write_metrics([("overall", overall)] + sorted(per_cat.items()), args.out)
    return 0


def ablation_runs(cfg: RunConfig, ratio: float):
    """Yield (table, RunConfig) for the component and strategy toggle matrices."""
    for mir, ce, dis in itertools.product((False, True), repeat=3):
        net = dataclasses.replace(cfg.net, mirror=mir, contraction_expansion=ce, discriminator=dis)
        train = dataclasses.replace(cfg.train, labeled_ratio=1.0, resampling=False, mixup=False)
        yield "components", dataclasses.replace(cfg, net=net, train=train)
    for res, mix, ae in itertools.product((False, True), repeat=3):
        train = dataclasses.replace(cfg.train, labeled_ratio=ratio, resampling=res, mixup=mix, partial_ae=ae)
        yield "strategies", dataclasses.replace(cfg, train=train)


def run_ablation(cfg: RunConfig, dataset, test_pairs, ratio: float, out_path) -> list[dict]:
    rows = []
    for table, run in ablation_runs(cfg, ratio):
        row = {
            "table": table,
            "mirror": int(run.net.mirror),
            "contraction_expansion": int(run.net.contraction_expansion),
            "discriminator": int(run.net.discriminator),
            "resampling": int(run.train.resampling),
            "mixup": int(run.train.mixup),
            "partial_ae": int(run.train.partial_ae),
            "labeled_ratio": run.train.labeled_ratio,
        }
        try:
            state, _ = fit(dataset, run.net, run.train)
        except ContractError as exc:
            # e.g. no labeled pairs survive the ratio and no strategy refills them
            log.warning("ablation run skipped (%s): %s", row, exc)
            rows.append({**row, "iterations": 0, "cd1": "", "cd2": "", "fscore": ""})
            continue
        report, _ = evaluate(state, test_pairs, seed=run.train.seed, with_emd=False)
        row.update(iterations=state.iteration, cd1=report["cd1"], cd2=report["cd2"], fscore=report["fscore"])
        log.info("ablation %s", row)
        rows.append(row)
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    data = args.data or cfg.data
    test = args.test_data or cfg.test_data
    if not data or not test:
        raise ContractError("ablate needs both a training and a test manifest")
    rows = run_ablation(cfg, read_manifest(data), read_manifest(test), args.ratio, args.out)
    print(f"wrote {len(rows)} ablation rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crn", description="Cascaded point-cloud completion toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a procedural dataset with partial views")
    p.add_argument("--out", required=True)
    p.add_argument("--n-shapes", type=int, default=200)
    p.add_argument("--n-points", type=int, default=512)
    p.add_argument("--n-input", type=int, default=256)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--kinds", default="", help=f"comma-separated subset of {','.join(SHAPE_KINDS)}")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model from a config file")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--test-data")
    p.add_argument("--out")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complete", help="complete a single cloud")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--iters", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--coarse-out")
    p.add_argument("--category", default="")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint or a single prediction")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--tau", type=float, default=0.03)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-emd", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the component and strategy toggle matrices")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--test-data")
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=0.1, help="labeled ratio for the strategy matrix")
    p.set_defaults(func=cmd_ablate)
    return parser


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractError, FormatError, TrainingError, ValueError, OSError) as exc:
        print(f"crn {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
