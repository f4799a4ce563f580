"""Alternating LS-GAN training, mean-shape priors and evaluation."""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .config import NetConfig, TrainConfig
from .errors import ContractError
from .geometry import random_subsample
from .losses import chamfer, chamfer_value, lsgan_discriminator_loss, lsgan_generator_loss, total_generator_loss
from .metrics import MetricsReport, cloud_metrics, fpd
from .model import (
    DiscriminatorParams, GeneratorParams, discriminate, encode, forward,
    init_discriminator, init_generator,
)
from .optim import Adam
from .selfsup import RemovalSpec, TrainingPair, build_training_set

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "iter", "L_G", "L_D", "cd_coarse", "cd_dense", "cd_ae", "lr_G", "lr_D", "lambda_f")


class TrainingError(RuntimeError):
    pass


@dataclass
class MeanShapeTable:
    vectors: dict[str, np.ndarray]
    global_mean: np.ndarray

    def lookup(self, category: str) -> np.ndarray:
        vec = self.vectors.get(category)
        if vec is None:
            log.debug("no mean shape for category %r, using the global mean", category)
            return self.global_mean
        return vec

    @classmethod
    def zeros(cls, dim: int) -> "MeanShapeTable":
        return cls({}, np.zeros(dim))


def _embed(clouds: list[np.ndarray], gp: GeneratorParams) -> np.ndarray:
    with T.no_grad():
        return np.stack([encode(c, gp).data[0] for c in clouds])


def compute_mean_shapes(items: Iterable[TrainingPair], gp: GeneratorParams) -> MeanShapeTable:
    """Per-category mean of the encoder embeddings of each pair's input cloud."""
    items = list(items)
    if not items:
        raise ContractError("compute_mean_shapes: empty dataset")
    emb = _embed([p.input for p in items], gp)
    cats = np.array([p.category for p in items])
    vectors = {c: emb[cats == c].mean(axis=0) for c in dict.fromkeys(cats.tolist())}
    return MeanShapeTable(vectors, emb.mean(axis=0))


@dataclass
class TrainState:
    net: NetConfig
    train: TrainConfig
    gen: GeneratorParams
    disc: DiscriminatorParams
    opt_g: Adam
    opt_d: Adam
    mean_shapes: MeanShapeTable
    rng: np.random.Generator
    iteration: int = 0
    epoch: int = 0
    metrics_log: list[dict] = field(default_factory=list)


def init_state(net: NetConfig, train: TrainConfig) -> TrainState:
    gen = init_generator(net)
    disc = init_discriminator(net)
    return TrainState(
        net, train, gen, disc,
        Adam(gen.named(), train.adam_beta1, train.adam_beta2, train.adam_eps),
        Adam(disc.named(), train.adam_beta1, train.adam_beta2, train.adam_eps),
        MeanShapeTable.zeros(net.feat_dim),
        np.random.default_rng(train.seed),
    )


def _resize(cloud: np.ndarray, n: int, rng) -> np.ndarray:
    return cloud if len(cloud) == n else random_subsample(cloud, n, rng)


def _target_size(state: TrainState) -> int:
    return state.train.n_target or state.net.output_size


def _check(name: str, value: T.Tensor) -> None:
    if not np.all(np.isfinite(value.data)):
        raise TrainingError(f"non-finite {name} at this step: {value.data}")


def train_step(batch: list[TrainingPair], state: TrainState) -> dict[str, float]:
    """One discriminator update followed by one generator update."""
    if not batch:
        raise ContractError("train_step: empty batch")
    net, cfg, rng = state.net, state.train, state.rng
    P = np.stack([_resize(p.input, net.n_input, rng) for p in batch])
    G = np.stack([_resize(p.target, _target_size(state), rng) for p in batch])
    prior = np.stack([state.mean_shapes.lookup(p.category) for p in batch])
    lr_g = cfg.lr_at(cfg.lr_g, state.epoch)
    lr_d = cfg.lr_at(cfg.lr_d, state.epoch)
    lam_f = cfg.lambda_f_at(state.iteration)
    use_ae = cfg.partial_ae and cfg.lambda_ae > 0

    out = forward(P, state.gen, net, rng, prior, with_partial=use_ae)

    loss_d = float("nan")
    if net.discriminator:
        fake = out.dense.detach()
        real = T.Tensor(G)
        for _ in range(cfg.d_steps):
            _, d_fake = discriminate(fake, state.disc, net, rng)
            _, d_real = discriminate(real, state.disc, net, rng)
            L_D = lsgan_discriminator_loss(d_fake, d_real)
            _check("L_D", L_D)
            state.opt_d.zero_grad()
            T.backward(L_D)
            state.opt_d.step(lr_d)
            loss_d = float(L_D.data)

    cd_coarse = chamfer(out.coarse, G, cfg.chamfer)
    cd_dense = chamfer(out.dense, G, cfg.chamfer)
    L_rec = T.add(cd_coarse, T.mul(cd_dense, lam_f))
    cd_ae = None
    if use_ae:
        cd_ae = chamfer(out.partial, P, cfg.chamfer)
        L_rec = T.add(L_rec, T.mul(cd_ae, cfg.lambda_ae))
    for name, term in (("cd_coarse", cd_coarse), ("cd_dense", cd_dense), ("cd_ae", cd_ae)):
        if term is not None:
            _check(name, term)
    if net.discriminator:
        with T.frozen(state.disc.named().values()):
            _, d_q = discriminate(out.dense, state.disc, net, rng)
            L_gan = lsgan_generator_loss(d_q)
        _check("L_GAN", L_gan)
        L_G = total_generator_loss(L_gan, L_rec, cfg.lambda_gan, cfg.beta_rec)
    else:
        L_G = T.mul(L_rec, cfg.beta_rec)
    _check("L_G", L_G)
    state.opt_g.zero_grad()
    T.backward(L_G)
    state.opt_g.step(lr_g)
    state.opt_d.zero_grad()

    row = {
        "epoch": state.epoch,
        "iter": state.iteration,
        "L_G": float(L_G.data),
        "L_D": loss_d,
        "cd_coarse": float(cd_coarse.data),
        "cd_dense": float(cd_dense.data),
        "cd_ae": float(cd_ae.data) if cd_ae is not None else float("nan"),
        "lr_G": lr_g,
        "lr_D": lr_d,
        "lambda_f": lam_f,
    }
    state.iteration += 1
    return row


def complete_batch(pairs: list[TrainingPair], state: TrainState, seed=0,
                   batch_size: int = 16) -> list[np.ndarray]:
    """Dense completions of every pair's input, computed without a graph."""
    rng = np.random.default_rng(seed)
    outputs = []
    with T.no_grad():
        for lo in range(0, len(pairs), batch_size):
            chunk = pairs[lo:lo + batch_size]
            P = np.stack([_resize(p.input, state.net.n_input, rng) for p in chunk])
            prior = np.stack([state.mean_shapes.lookup(p.category) for p in chunk])
            dense = forward(P, state.gen, state.net, rng, prior, with_partial=False).dense
            outputs.extend(dense.data)
    return outputs


def evaluate(state: TrainState, pairs: list[TrainingPair], seed=0, tau: float = 0.03,
             full: bool = True, with_emd: bool = True,
             feature_fn: Callable[[list[np.ndarray]], np.ndarray] | None = None,
             ) -> tuple[MetricsReport, dict[str, MetricsReport]]:
    """Mean metrics over ``pairs``, overall and per category.

    With ``full=False`` only the two Chamfer variants are computed. FPD uses
    ``feature_fn`` (default: the model's own encoder) over all outputs versus
    all targets, so it only appears in the overall report.
    """
    if not pairs:
        raise ContractError("evaluate: empty test set")
    outputs = complete_batch(pairs, state, seed)
    reports = []
    for pair, out in zip(pairs, outputs):
        if full:
            reports.append(cloud_metrics(out, pair.target, pair.input, tau, with_emd))
        else:
            reports.append(MetricsReport({"cd1": chamfer_value(out, pair.target, "CD1"),
                                          "cd2": chamfer_value(out, pair.target, "CD2")}))
    overall = MetricsReport.mean_of(reports)
    if full and len(pairs) >= 2:
        feats = feature_fn or (lambda clouds: _embed(list(clouds), state.gen))
        overall.values["fpd"] = fpd(feats(outputs), feats([p.target for p in pairs]))
    per_category = {}
    for cat in dict.fromkeys(p.category for p in pairs):
        per_category[cat] = MetricsReport.mean_of([r for r, p in zip(reports, pairs) if p.category == cat])
    return overall, per_category


def epoch_pairs(dataset: list[TrainingPair], cfg: TrainConfig, epoch: int) -> list[TrainingPair]:
    """Training pairs for ``epoch``; fixed across epochs unless regeneration is on."""
    key = [cfg.seed, epoch if cfg.regenerate else 0]
    return build_training_set(
        dataset, cfg.labeled_ratio, cfg.resampling, cfg.mixup,
        RemovalSpec(fraction=cfg.removal_fraction),
        (cfg.mixup_alpha, cfg.mixup_beta),
        np.random.default_rng(key),
    )


def fit(dataset: list[TrainingPair], net: NetConfig, train: TrainConfig,
        eval_pairs: list[TrainingPair] | None = None, state: TrainState | None = None,
        checkpoint_path=None, log_rows: list[dict] | None = None) -> tuple[TrainState, list[dict]]:
    """Train until ``train.epochs`` (or ``train.max_iters``) is reached.

    Passing a restored ``state`` resumes where it stopped, even mid-epoch,
    taking only the epoch and iteration budget from ``train``. Returns the
    final state and the per-iteration loss rows appended during this call.
    """
    from .checkpoint import save_checkpoint

    if not dataset:
        raise ContractError("fit: empty dataset")
    if state is None:
        state = init_state(net, train)
        state.mean_shapes = compute_mean_shapes(dataset, state.gen)
    elif train is not None:
        # a resumed run may extend its budget; everything else stays as checkpointed
        state.train = dataclasses.replace(state.train, epochs=train.epochs, max_iters=train.max_iters)
    rows = [] if log_rows is None else log_rows
    cfg = state.train
    per_epoch = -(-len(dataset) // cfg.batch_size)

    def budget_left() -> bool:
        return not cfg.max_iters or state.iteration < cfg.max_iters

    while state.epoch < cfg.epochs and budget_left():
        pairs = epoch_pairs(dataset, cfg, state.epoch)
        order = np.random.default_rng([cfg.seed, state.epoch, 1]).permutation(len(pairs))
        # a checkpoint taken mid-epoch resumes at the next unseen batch
        done = max(0, state.iteration - state.epoch * per_epoch)
        for lo in range(done * cfg.batch_size, len(order), cfg.batch_size):
            if not budget_left():
                break
            rows.append(train_step([pairs[i] for i in order[lo:lo + cfg.batch_size]], state))
        else:
            state.epoch += 1
            if cfg.mean_shape_refresh and state.epoch % cfg.mean_shape_refresh == 0:
                state.mean_shapes = compute_mean_shapes(dataset, state.gen)
            if eval_pairs and cfg.eval_every and state.epoch % cfg.eval_every == 0:
                report, _ = evaluate(state, eval_pairs, seed=[cfg.seed, state.epoch], full=False)
                state.metrics_log.append({"epoch": state.epoch, **report.values})
                log.info("epoch %d: %s", state.epoch, report.values)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, state)
    return state, rows


def write_loss_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

