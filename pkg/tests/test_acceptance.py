"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``; the verdict lines are also
written to the terminal when output is captured. Criteria 6 and 7 train the
desk-scale network for 500 iterations each (several minutes apiece).
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
import subprocess
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from conftest import numeric_grad, rel_error, toy_net
from crn import tensor as T
from crn.cli import ABLATION_COLUMNS, run_command
from crn.config import NetConfig
from crn.geometry import farthest_point_sample
from crn.losses import chamfer, lsgan_discriminator_loss, lsgan_generator_loss, reconstruction_loss, total_generator_loss
from crn.metrics import emd, fpd, fpd_from_stats
from crn.model import (
    assemble_synthesis_input, decode_coarse, dense_reconstruct, discriminate, encode, forward,
    init_discriminator, init_generator,
)
from crn.selfsup import RemovalSpec, TrainingPair, build_training_set, mixup, resample_partial
from crn.tensor import Tensor

ROOT = Path(__file__).resolve().parents[1]

# tolerances and budgets pinned from the acceptance criteria
FD_STEP = 1e-5
OP_TOL = 1e-4
E2E_TOL = 1e-3
GRAD_BUDGET_S = 60.0
ORACLE_TOL = 1e-12
ORACLE_BUDGET_S = 60.0
FPD_TOL = 1e-8
SMOKE_ITERS = 500
SMOKE_BUDGET_S = 15 * 60
SUPERVISED_RATIO = 0.5
SELFSUP_RATIO = 0.75


def verdict(request, number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    capman = request.config.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("\n" + line, flush=True)
    assert ok, line


# ----------------------------------------------------------------- criterion 1


def _op_cases(rng):
    """(name, leaf, scalar builder) for every differentiable primitive."""
    x = Tensor(rng.uniform(-1, 1, (2, 5, 3)), requires_grad=True)
    W = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)
    y = Tensor(rng.uniform(-1, 1, (2, 5, 3)))
    idx = rng.integers(0, 5, size=(2, 6))
    w = rng.uniform(-1, 1, 400)
    # keep relu inputs away from the kink
    xr = Tensor(np.where(np.abs(x.data) < 1e-2, 0.5, x.data), requires_grad=True)
    xm = Tensor(rng.permutation(30).reshape(2, 5, 3) * 0.05 + rng.uniform(0, 1e-3, (2, 5, 3)), requires_grad=True)
    d = Tensor(rng.uniform(-1, 1, 6), requires_grad=True)
    g = Tensor(rng.uniform(-1, 1, 6))

    def weighted(t):
        flat = T.reshape(t, (t.size,))
        return T.sum(T.mul(flat, Tensor(w[: t.size])))

    Q = Tensor(rng.uniform(-1, 1, (2, 7, 3)), requires_grad=True)
    G = Tensor(rng.uniform(-1, 1, (2, 6, 3)))
    return [
        ("affine/x", x, lambda: weighted(T.affine(x, W, b))),
        ("affine/W", W, lambda: weighted(T.square(T.affine(x, W, b)))),
        ("affine/b", b, lambda: weighted(T.square(T.affine(x, W, b)))),
        ("relu", xr, lambda: weighted(T.relu(xr))),
        ("reduce_max", xm, lambda: weighted(T.reduce_max(xm, 1))),
        ("concat", x, lambda: weighted(T.concat([x, y], -1))),
        ("reshape", x, lambda: weighted(T.reshape(x, (10, 3)))),
        ("tile", x, lambda: weighted(T.tile(x, 1, 2))),
        ("slice", x, lambda: weighted(T.slice_axis(x, 1, 1, 4))),
        ("gather", x, lambda: weighted(T.gather(x, idx))),
        ("add", x, lambda: weighted(T.add(x, y))),
        ("sub", x, lambda: weighted(T.sub(y, x))),
        ("mul", x, lambda: weighted(T.mul(x, y))),
        ("square", x, lambda: weighted(T.square(x))),
        ("norm", x, lambda: weighted(T.norm(x, -1))),
        ("sum", x, lambda: weighted(T.sum(x, 1))),
        ("mean", x, lambda: weighted(T.mean(x, 1))),
        ("chamfer/CD1", Q, lambda: chamfer(Q, G, "CD1")),
        ("chamfer/CD2", Q, lambda: chamfer(Q, G, "CD2")),
        ("lsgan/G", d, lambda: lsgan_generator_loss(d)),
        ("lsgan/D", d, lambda: lsgan_discriminator_loss(d, g)),
    ]


def _total_loss(gp, dp, cfg, P, G, seed=5):
    out = forward(P, gp, cfg, seed, with_partial=True)
    rec = reconstruction_loss(out.coarse, out.dense, out.partial, P, G, lambda_f=0.3, lambda_ae=100.0)
    _, d_q = discriminate(out.dense, dp, cfg, seed)
    return total_generator_loss(lsgan_generator_loss(d_q), rec, 1.0, 200.0)


def test_criterion_1_gradient_suite(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst_op, worst_name = 0.0, ""
    for name, leaf, build in _op_cases(rng):
        leaf.grad = None
        T.backward(build())
        num = numeric_grad(lambda: float(build().data), leaf.data, eps=FD_STEP)
        err = rel_error(leaf.grad, num)
        if err >= worst_op:
            worst_op, worst_name = err, name

    cfg = toy_net()
    gp, dp = init_generator(cfg), init_discriminator(cfg)
    P = rng.uniform(-0.5, 0.5, (1, cfg.n_input, 3))
    G = rng.uniform(-0.5, 0.5, (1, cfg.output_size, 3))
    params = gp.named()
    for p in params.values():
        p.grad = None
    T.backward(_total_loss(gp, dp, cfg, P, G))
    worst_e2e, worst_param = 0.0, ""
    for pname, p in params.items():
        entries = rng.choice(p.size, size=min(6, p.size), replace=False)
        num = numeric_grad(lambda: float(_total_loss(gp, dp, cfg, P, G).data), p.data, FD_STEP, entries)
        ana = p.grad.reshape(-1)[entries]
        err = rel_error(ana, num.reshape(-1)[entries])
        if err >= worst_e2e:
            worst_e2e, worst_param = err, pname
    elapsed = time.perf_counter() - t0
    ok = worst_op < OP_TOL and worst_e2e < E2E_TOL and elapsed < GRAD_BUDGET_S
    verdict(request, 1, ok,
            f"worst op {worst_name} {worst_op:.2e} (<{OP_TOL}), total loss worst at {worst_param} "
            f"{worst_e2e:.2e} (<{E2E_TOL}), {elapsed:.1f}s (<{GRAD_BUDGET_S:.0f}s)")


# ----------------------------------------------------------------- criterion 2


def _chamfer_loop(X, Y, squared):
    def side(A, B):
        total = 0.0
        for a in A:
            best = math.inf
            for b_ in B:
                d = (a[0] - b_[0]) ** 2 + (a[1] - b_[1]) ** 2 + (a[2] - b_[2]) ** 2
                best = min(best, d)
            total += best if squared else math.sqrt(best)
        return total / len(A)
    return side(X.tolist(), Y.tolist()) + side(Y.tolist(), X.tolist())


def _emd_permutations(X, Y):
    cost = np.sqrt(((X[:, None] - Y[None]) ** 2).sum(-1))
    n = len(X)
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def _fps_greedy(cloud, k, start):
    chosen = [start]
    for _ in range(k - 1):
        d = np.sqrt(((cloud[:, None, :] - cloud[None, chosen, :]) ** 2).sum(-1)).min(axis=1)
        d[chosen] = -np.inf
        chosen.append(int(np.flatnonzero(d == d.max())[0]))
    return chosen


def test_criterion_2_oracle_equivalence(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(22)
    cd_err = 0.0
    for _ in range(200):
        X = rng.uniform(-1, 1, (rng.integers(1, 65), 3))
        Y = rng.uniform(-1, 1, (rng.integers(1, 65), 3))
        for variant, sq in (("CD1", True), ("CD2", False)):
            with T.no_grad():
                got = float(chamfer(X, Y, variant).data)
            cd_err = max(cd_err, abs(got - _chamfer_loop(X, Y, sq)))
    emd_err = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        X, Y = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3))
        emd_err = max(emd_err, abs(emd(X, Y) - _emd_permutations(X, Y)))
    fps_bad = 0
    for _ in range(100):
        cloud = rng.uniform(-1, 1, (rng.integers(1, 65), 3))
        k = int(rng.integers(1, len(cloud) + 1))
        idx = farthest_point_sample(cloud, k, int(rng.integers(2**31)))
        fps_bad += idx.tolist() != _fps_greedy(cloud, k, int(idx[0]))
    elapsed = time.perf_counter() - t0
    ok = cd_err <= ORACLE_TOL and emd_err <= ORACLE_TOL and fps_bad == 0 and elapsed < ORACLE_BUDGET_S
    verdict(request, 2, ok,
            f"chamfer max err {cd_err:.1e}, emd max err {emd_err:.1e} (<= {ORACLE_TOL}), "
            f"fps mismatches {fps_bad}/100, {elapsed:.1f}s (<{ORACLE_BUDGET_S:.0f}s)")


# ----------------------------------------------------------------- criterion 3


def test_criterion_3_formula_spot_checks(request):
    cases = [(1.0, 1.0), (0.0, 1.0), (1.0, 0.0)]
    disc = [float(lsgan_discriminator_loss(Tensor(q), Tensor(g)).data) for q, g in cases]
    gen = [float(lsgan_generator_loss(Tensor(q)).data) for q, _ in cases]
    feats = np.random.default_rng(3).normal(size=(300, 8))
    same = fpd(feats, feats)
    z = np.zeros(2)
    diag = fpd_from_stats(z, np.diag([4.0, 1.0]), z, np.diag([1.0, 4.0]))
    ok = disc == [0.5, 0.0, 1.0] and gen == [0.0, 0.5, 0.0] and abs(same) <= FPD_TOL and abs(diag - 2) <= FPD_TOL
    verdict(request, 3, ok, f"D-loss {disc}, G-loss {gen}, fpd(identical) {same:.1e}, diagonal case {diag!r}")


# ----------------------------------------------------------------- criterion 4


def test_criterion_4_shape_cascade(request):
    cfg = NetConfig.full_scale()
    gp = init_generator(cfg)
    P = np.random.default_rng(4).uniform(-0.5, 0.5, (1, cfg.n_input, 3))
    sizes = []
    with T.no_grad():
        f = encode(P, gp)
        PS = assemble_synthesis_input(P, decode_coarse(f, gp, cfg), cfg, 0)
        for it in (1, 2, 3, 4):
            sizes.append(dense_reconstruct(PS, f, None, it, gp, cfg, 0).shape[1])
    counts = {init_generator(NetConfig.full_scale(iterations=it)).count() for it in (1, 2, 3, 4)}
    ok = PS.shape[1] == 1024 and sizes == [2048, 4096, 8192, 16384] and len(counts) == 1
    verdict(request, 4, ok, f"P_S {PS.shape[1]} points, outputs {sizes}, parameter counts {sorted(counts)}")


# ----------------------------------------------------------------- criterion 5


def test_criterion_5_selfsup_invariants(request):
    rng = np.random.default_rng(5)
    P = rng.uniform(-0.5, 0.5, (256, 3))
    sub_ok = region_ok = True
    for seed in range(20):
        for spec in (RemovalSpec(center="cloud-point", radius=0.2), RemovalSpec(n_remove=64)):
            pair = resample_partial(P, spec, seed)
            left, full = Counter(map(tuple, pair.input)), Counter(map(tuple, P))
            sub_ok &= not (left - full) and sum(left.values()) < sum(full.values())
            removed = np.array(list((full - left).elements()))
            # the removal center is the first draw of the seeded generator
            draw = np.random.default_rng(seed)
            if spec.radius:
                center = P[draw.integers(256)]
                region_ok &= bool(np.all(np.linalg.norm(pair.input - center, axis=1) > spec.radius))
            else:
                direction = draw.standard_normal(3)
                center = direction / np.linalg.norm(direction)
                reach = np.linalg.norm(removed - center, axis=1).max()
                region_ok &= bool(np.all(np.linalg.norm(pair.input - center, axis=1) >= reach))
    a = TrainingPair(rng.normal(size=(100, 3)), rng.normal(size=(100, 3)))
    b = TrainingPair(rng.normal(size=(100, 3)) + 5, rng.normal(size=(100, 3)) + 5)
    mixed = mixup(a, b, gamma=0.4, seed=1)
    from_a = sum(tuple(p) in set(map(tuple, a.input)) for p in mixed.input)
    from_a_t = sum(tuple(p) in set(map(tuple, a.target)) for p in mixed.target)
    ten = [TrainingPair(rng.normal(size=(32, 3)), rng.normal(size=(64, 3))) for _ in range(10)]
    labeled = sum(p.source == "labeled" for p in build_training_set(ten, 0.3, True, True, RemovalSpec(n_remove=8)))
    ok = sub_ok and region_ok and (from_a, from_a_t) == (40, 40) and labeled == 3
    verdict(request, 5, ok, f"strict sub-multisets {sub_ok}, removal region empty {region_ok}, "
                            f"mixup split {from_a}/{100 - from_a}, labeled kept {labeled}/10")


# ------------------------------------------------------------- criteria 6 & 7


def _smoke(ratio: float) -> dict:
    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1", MKL_NUM_THREADS="1")
    cmd = [sys.executable, str(ROOT / "scripts" / "smoke_train.py"), "--ratio", str(ratio),
           "--iters", str(SMOKE_ITERS)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_criterion_6_supervised_smoke(request):
    r = _smoke(1.0)
    ok = (r["iterations"] == SMOKE_ITERS and r["seconds"] < SMOKE_BUDGET_S
          and r["cd2_ratio"] <= SUPERVISED_RATIO and r["replay_identical"])
    verdict(request, 6, ok, f"CD-2 {r['cd2_before']:.4f} -> {r['cd2_after']:.4f} (x{r['cd2_ratio']:.3f}, "
                            f"<= {SUPERVISED_RATIO}), {r['iterations']} iters in {r['seconds']:.0f}s single-thread, "
                            f"replay identical {r['replay_identical']}")


@pytest.mark.slow
def test_criterion_7_selfsupervised_smoke(request):
    r = _smoke(0.0)
    ok = r["iterations"] == SMOKE_ITERS and r["cd2_ratio"] <= SELFSUP_RATIO
    verdict(request, 7, ok, f"labeled ratio 0: CD-2 {r['cd2_before']:.4f} -> {r['cd2_after']:.4f} "
                            f"({(1 - r['cd2_ratio']) * 100:.1f}% better, need >= 25%), {r['seconds']:.0f}s")


# ------------------------------------------------------------- criteria 8 & 9

TINY = """\
n_input=16
n_coarse=4
feat_dim=8
encoder_stage1=8,8
encoder_stage2=8
coarse_hidden=8
lift_pre=8,8
contraction=8,8
expansion=8
head_hidden=8
iterations=1
disc_seeds=4
disc_k=3,4,5
disc_widths=4,4/4,4/4,4
batch_size=4
lr_g=0.001
lr_d=0.0005
ramp_iters=4
"""


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    assert run_command(["gen-data", "--out", str(root), "--n-shapes", "25", "--n-points", "64",
                        "--n-input", "16", "--seed", "8"]) == 0
    return root


def test_criterion_8_ablation_harness(request, tiny_data, tmp_path):
    (tmp_path / "c.cfg").write_text(TINY + "epochs=1\n")
    out = tmp_path / "ablation.csv"
    rc = run_command(["ablate", "--config", str(tmp_path / "c.cfg"), "--data", str(tiny_data / "train/manifest.txt"),
                      "--test-data", str(tiny_data / "test/manifest.txt"), "--out", str(out)])
    with open(out) as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    comp = {(r["mirror"], r["contraction_expansion"], r["discriminator"]) for r in rows if r["table"] == "components"}
    strat = {(r["resampling"], r["mixup"], r["partial_ae"]) for r in rows if r["table"] == "strategies"}
    finite = all(np.isfinite(float(r[k])) for r in rows for k in ("cd1", "cd2", "fscore"))
    ok = rc == 0 and tuple(reader.fieldnames) == ABLATION_COLUMNS and len(comp) == 8 and len(strat) == 8 and finite
    verdict(request, 8, ok, f"{len(rows)} rows, {len(comp)} component combos, {len(strat)} strategy combos, "
                            f"schema ok {tuple(reader.fieldnames) == ABLATION_COLUMNS}, values finite {finite}")


def _train(cfg_path, data, out, resume=None):
    argv = ["train", "--config", str(cfg_path), "--data", str(data), "--out", str(out)]
    if resume:
        argv += ["--resume", str(resume)]
    assert run_command(argv) == 0
    return (out / "loss_log.csv").read_bytes()


def test_criterion_9_determinism_and_resume(request, tiny_data, tmp_path):
    data = tiny_data / "train/manifest.txt"
    for epochs in (1, 3):
        (tmp_path / f"e{epochs}.cfg").write_text(TINY + f"epochs={epochs}\nresampling=true\nmixup=true\n"
                                                 "labeled_ratio=0.5\n")
    log_a = _train(tmp_path / "e3.cfg", data, tmp_path / "a")
    log_b = _train(tmp_path / "e3.cfg", data, tmp_path / "b")
    _train(tmp_path / "e1.cfg", data, tmp_path / "c")
    head = (tmp_path / "c/loss_log.csv").read_text().splitlines()
    tail = _train(tmp_path / "e3.cfg", data, tmp_path / "d", resume=tmp_path / "c/checkpoint.crn")
    joined = "\n".join(head + tail.decode().splitlines()[1:]) + "\n"
    same_ckpt = (tmp_path / "a/checkpoint.crn").read_bytes() == (tmp_path / "d/checkpoint.crn").read_bytes()
    ok = log_a == log_b and joined.encode() == log_a and same_ckpt
    verdict(request, 9, ok, f"repeat run bit-identical {log_a == log_b}, resumed log identical "
                            f"{joined.encode() == log_a}, final checkpoints identical {same_ckpt}")
