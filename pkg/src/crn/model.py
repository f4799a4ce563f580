"""Cascaded refinement completion network and its patch discriminator.

Tensors flowing through the network are batched: clouds are ``(B, n, 3)``
and global features ``(B, feat_dim)``. Public entry points also accept a
single ``(n, 3)`` cloud and strip the batch axis again on the way out.

Per-point MLPs are shared affine maps applied row-wise; ReLU follows every
layer except the last of a block unless the block feeds a max-pool.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .config import NetConfig
from .errors import ContractError
from .geometry import ball_query, farthest_point_sample, grid_seeds, mirror, random_subsample
from .tensor import Tensor

log = logging.getLogger(__name__)


class Layer(NamedTuple):
    W: Tensor
    b: Tensor


def _glorot(rng: np.random.Generator, d_in: int, d_out: int, name: str) -> Layer:
    s = np.sqrt(6.0 / (d_in + d_out))
    W = Tensor(rng.uniform(-s, s, size=(d_in, d_out)), requires_grad=True, name=f"{name}.W")
    b = Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.b")
    return Layer(W, b)


def _block(rng, d_in: int, widths, name: str) -> list[Layer]:
    layers = []
    for i, w in enumerate(widths):
        layers.append(_glorot(rng, d_in, w, f"{name}.{i}"))
        d_in = w
    return layers


def mlp(x, layers: list[Layer], final_relu: bool = False) -> Tensor:
    for i, layer in enumerate(layers):
        x = T.affine(x, layer.W, layer.b)
        if final_relu or i < len(layers) - 1:
            x = T.relu(x)
    return x


class _ParamGroup:
    def named(self) -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            for i, layer in enumerate(getattr(self, f.name)):
                out[f"{f.name}.{i}.W"] = layer.W
                out[f"{f.name}.{i}.b"] = layer.b
        return out

    def count(self) -> int:
        return sum(p.size for p in self.named().values())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named().items():
            if name not in arrays or arrays[name].shape != p.shape:
                raise ContractError(f"parameter {name} missing or mis-shaped")
            p.data = np.array(arrays[name], dtype=np.float64)


@dataclass
class GeneratorParams(_ParamGroup):
    encoder1: list[Layer]
    encoder2: list[Layer]
    coarse: list[Layer]
    lift_pre: list[Layer]
    contraction: list[Layer]
    expansion: list[Layer]
    head: list[Layer]
    partial: list[Layer]


@dataclass
class DiscriminatorParams(_ParamGroup):
    scale0: list[Layer]
    scale1: list[Layer]
    scale2: list[Layer]
    head: list[Layer]

    @property
    def scales(self) -> list[list[Layer]]:
        return [self.scale0, self.scale1, self.scale2]


def init_generator(cfg: NetConfig, seed=None) -> GeneratorParams:
    rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
    F = cfg.feat_dim
    c1 = cfg.encoder_stage1[-1]
    lift_in = 3 + 2 + F + F
    pre_out = cfg.lift_pre[-1]
    if cfg.expansion[-1] % 2:
        raise ContractError("the last expansion width must be even to split rows back in two")
    head_in = pre_out + (cfg.expansion[-1] // 2 if cfg.contraction_expansion else 0)
    return GeneratorParams(
        encoder1=_block(rng, 3, cfg.encoder_stage1, "encoder1"),
        encoder2=_block(rng, 2 * c1, tuple(cfg.encoder_stage2) + (F,), "encoder2"),
        coarse=_block(rng, F, tuple(cfg.coarse_hidden) + (3 * cfg.n_coarse,), "coarse"),
        lift_pre=_block(rng, lift_in, cfg.lift_pre, "lift_pre"),
        contraction=_block(rng, pre_out, cfg.contraction, "contraction") if cfg.contraction_expansion else [],
        expansion=_block(rng, 2 * cfg.contraction[-1], cfg.expansion, "expansion") if cfg.contraction_expansion else [],
        head=_block(rng, head_in, tuple(cfg.head_hidden) + (3,), "head"),
        partial=_block(rng, F, tuple(cfg.coarse_hidden) + (3 * cfg.n_input,), "partial"),
    )


def init_discriminator(cfg: NetConfig, seed=None) -> DiscriminatorParams:
    rng = np.random.default_rng(cfg.init_seed + 1 if seed is None else seed)
    if len(cfg.disc_widths) != 3:
        raise ContractError("the discriminator uses exactly three neighbourhood scales")
    scales = [_block(rng, 3, w, f"scale{i}") for i, w in enumerate(cfg.disc_widths)]
    width = sum(w[-1] for w in cfg.disc_widths)
    return DiscriminatorParams(*scales, head=[_glorot(rng, width, 1, "head.0")])


# ------------------------------------------------------------------- helpers


def _batched(P) -> tuple[np.ndarray, bool]:
    arr = P.data if isinstance(P, Tensor) else np.asarray(P, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ContractError(f"expected (n, 3) or (B, n, 3) points, got {arr.shape}")
    if arr.shape[1] == 0:
        raise ContractError("empty point cloud")
    return arr, False


def _expand_rows(x: Tensor, count: int) -> Tensor:
    """``(B, F)`` -> ``(B, count, F)`` by tiling."""
    B, F = x.shape
    return T.tile(T.reshape(x, (B, 1, F)), 1, count)


def _mean_shape_batch(mean_shape, B: int, F: int) -> np.ndarray:
    if mean_shape is None:
        return np.zeros((B, F))
    ms = np.asarray(mean_shape, dtype=np.float64)
    if ms.ndim == 1:
        ms = np.broadcast_to(ms, (B, F))
    if ms.shape != (B, F):
        raise ContractError(f"mean shape prior has shape {ms.shape}, expected {(B, F)}")
    return np.array(ms)


# ------------------------------------------------------------------- generator


def encode(P, gp: GeneratorParams) -> Tensor:
    """Two stacked point-wise MLP + max-pool stages; returns ``(B, feat_dim)``."""
    x = P if isinstance(P, Tensor) and P.ndim == 3 else T.as_tensor(_batched(P)[0])
    B, n, _ = x.shape
    h = mlp(x, gp.encoder1)
    pooled = T.reduce_max(h, axis=1)
    h = T.concat([h, _expand_rows(pooled, n)], axis=-1)
    h = mlp(h, gp.encoder2)
    return T.reduce_max(h, axis=1)


def decode_coarse(f: Tensor, gp: GeneratorParams, cfg: NetConfig) -> Tensor:
    out = mlp(f, gp.coarse)
    return T.reshape(out, (f.shape[0], cfg.n_coarse, 3))


def decode_partial(f: Tensor, gp: GeneratorParams, cfg: NetConfig) -> Tensor:
    out = mlp(f, gp.partial)
    return T.reshape(out, (f.shape[0], cfg.n_input, 3))


def synthesis_seed_points(P: np.ndarray, cfg: NetConfig, seed=0) -> np.ndarray:
    """``n_coarse`` points per cloud sampled from the input and its reflection."""
    rng = np.random.default_rng(seed)
    out = np.empty((len(P), cfg.n_coarse, 3))
    for b, cloud in enumerate(P):
        union = np.concatenate([cloud, mirror(cloud, cfg.mirror_plane)]) if cfg.mirror else cloud
        if len(union) >= cfg.n_coarse:
            out[b] = union[farthest_point_sample(union, cfg.n_coarse, rng)]
        else:
            out[b] = random_subsample(union, cfg.n_coarse, rng)
    return out


def assemble_synthesis_input(P, coarse: Tensor, cfg: NetConfig, seed=0) -> Tensor:
    """Input-derived points followed by the coarse points: ``(B, 2 n_coarse, 3)``."""
    arr, _ = _batched(P)
    if coarse.shape[1:] != (cfg.n_coarse, 3):
        raise ContractError(f"coarse cloud has shape {coarse.shape}, expected (B, {cfg.n_coarse}, 3)")
    return T.concat([Tensor(synthesis_seed_points(arr, cfg, seed)), coarse], axis=1)


def lifting_module(points: Tensor, f: Tensor, mean_shape, gp: GeneratorParams, cfg: NetConfig,
                   seed=0) -> Tensor:
    """Double every point and add a learned per-vertex offset: ``(B, n, 3) -> (B, 2n, 3)``."""
    B, n, _ = points.shape
    F = f.shape[1]
    rng = np.random.default_rng(seed)
    dup = T.reshape(T.tile(T.reshape(points, (B, n, 1, 3)), 2, 2), (B, 2 * n, 3))
    grid = grid_seeds(B * 2 * n, rng, cfg.grid_lo, cfg.grid_hi).reshape(B, 2 * n, 2)
    prior = Tensor(_mean_shape_batch(mean_shape, B, F))
    x = T.concat([dup, Tensor(grid), _expand_rows(prior, 2 * n), _expand_rows(f, 2 * n)], axis=-1)
    feat = mlp(x, gp.lift_pre, final_relu=True)
    if cfg.contraction_expansion:
        fc = mlp(feat, gp.contraction, final_relu=True)
        fc = T.reshape(fc, (B, n, 2 * fc.shape[-1]))
        fe = mlp(fc, gp.expansion, final_relu=True)
        fe = T.reshape(fe, (B, 2 * n, fe.shape[-1] // 2))
        feat = T.concat([feat, fe], axis=-1)
    offset = mlp(feat, gp.head)
    return T.add(offset, dup)


def dense_reconstruct(P_S: Tensor, f: Tensor, mean_shape, iterations: int, gp: GeneratorParams,
                      cfg: NetConfig, seed=0) -> Tensor:
    if iterations not in (1, 2, 3, 4):
        raise ContractError(f"iterations must be in 1..4, got {iterations}")
    rng = np.random.default_rng(seed)
    x = P_S
    for _ in range(iterations):
        x = lifting_module(x, f, mean_shape, gp, cfg, rng)
    return x


class Forward(NamedTuple):
    feature: Tensor
    coarse: Tensor
    dense: Tensor
    partial: Tensor | None


def forward(P, gp: GeneratorParams, cfg: NetConfig, seed=0, mean_shape=None,
            with_partial: bool = True, iterations: int | None = None) -> Forward:
    """Both branches on a batch ``(B, n, 3)``; the encoder pass is shared."""
    arr, _ = _batched(P)
    rng = np.random.default_rng(seed)
    f = encode(arr, gp)
    coarse = decode_coarse(f, gp, cfg)
    P_S = assemble_synthesis_input(arr, coarse, cfg, rng)
    dense = dense_reconstruct(P_S, f, mean_shape, iterations or cfg.iterations, gp, cfg, rng)
    partial = None
    if with_partial:
        if arr.shape[1] != cfg.n_input:
            raise ContractError(f"partial branch is sized for {cfg.n_input} points, got {arr.shape[1]}")
        partial = decode_partial(f, gp, cfg)
    return Forward(f, coarse, dense, partial)


def _unbatch(x: Tensor, single: bool) -> Tensor:
    return T.reshape(x, x.shape[1:]) if single else x


def complete(P, gp: GeneratorParams, cfg: NetConfig, seed=0, mean_shape=None,
             iterations: int | None = None) -> tuple[Tensor, Tensor]:
    """Coarse and dense completions of ``P``."""
    _, single = _batched(P)
    out = forward(P, gp, cfg, seed, mean_shape, with_partial=False, iterations=iterations)
    return _unbatch(out.coarse, single), _unbatch(out.dense, single)


def reconstruct_partial(P, gp: GeneratorParams, cfg: NetConfig) -> Tensor:
    arr, single = _batched(P)
    if arr.shape[1] != cfg.n_input:
        raise ContractError(f"partial branch is sized for {cfg.n_input} points, got {arr.shape[1]}")
    return _unbatch(decode_partial(encode(arr, gp), gp, cfg), single)


# --------------------------------------------------------------- discriminator


def discriminate(Q, dp: DiscriminatorParams, cfg: NetConfig, seed=0) -> tuple[Tensor, Tensor]:
    """Per-patch realism scores ``(B, S)`` and their per-cloud mean ``(B,)``."""
    single = False
    if not isinstance(Q, Tensor):
        arr, single = _batched(Q)
        Q = Tensor(arr)
    elif Q.ndim == 2:
        Q, single = T.reshape(Q, (1,) + Q.shape), True
    B, M, _ = Q.shape
    S = cfg.disc_seeds
    if M < S:
        raise ContractError(f"discriminator needs at least {S} points, got {M}")
    rng = np.random.default_rng(seed)
    seed_idx = np.stack([farthest_point_sample(Q.data[b], S, rng) for b in range(B)])
    centers = T.gather(Q, seed_idx)
    feats = []
    for layers, radius, K in zip(dp.scales, cfg.disc_radii, cfg.disc_k):
        idx = np.stack([ball_query(Q.data[b], centers.data[b], radius, K) for b in range(B)])
        grouped = T.reshape(T.gather(Q, idx.reshape(B, S * K)), (B, S, K, 3))
        local = T.sub(grouped, T.tile(T.reshape(centers, (B, S, 1, 3)), 2, K))
        feats.append(T.reduce_max(mlp(local, layers, final_relu=True), axis=2))
    scores = T.reshape(mlp(T.concat(feats, axis=-1), dp.head), (B, S))
    mean_score = T.mean(scores, axis=1)
    if single:
        return T.reshape(scores, (S,)), T.reshape(mean_score, ())
    return scores, mean_score
