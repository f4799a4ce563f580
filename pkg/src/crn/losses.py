"""Differentiable training losses: Chamfer, LS-GAN and their weighted sums."""
from __future__ import annotations

from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ContractError
from .geometry import nearest_neighbor_dists
from .tensor import Tensor


class ChamferVariant(str, Enum):
    CD1 = "CD1"  # squared Euclidean distance per point
    CD2 = "CD2"  # Euclidean norm per point

    @classmethod
    def parse(cls, value) -> "ChamferVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper().replace("-", ""))
        except ValueError:
            raise ContractError(f"unknown chamfer variant {value!r}; expected CD1 or CD2") from None


def _one_sided(X: Tensor, Y: Tensor, variant: ChamferVariant) -> Tensor:
    # correspondence is fixed at the forward pass; gradient flows through coordinates
    _, idx = nearest_neighbor_dists(X.data, Y.data)
    diff = T.sub(X, T.gather(Y, idx))
    per_point = T.sum(T.square(diff), -1) if variant is ChamferVariant.CD1 else T.norm(diff, -1)
    return T.mean(per_point, -1)


def chamfer_per_sample(X, Y, variant="CD2") -> Tensor:
    """Chamfer distance for each cloud in a batch ``(B, n, 3)`` vs ``(B, m, 3)``."""
    variant = ChamferVariant.parse(variant)
    X, Y = T.as_tensor(X), T.as_tensor(Y)
    if X.ndim < 2 or Y.ndim < 2 or X.shape[-1] != 3 or Y.shape[-1] != 3:
        raise ContractError(f"chamfer: expected point arrays, got {X.shape} and {Y.shape}")
    if X.shape[-2] == 0 or Y.shape[-2] == 0:
        raise ContractError("chamfer: empty cloud")
    return T.add(_one_sided(X, Y, variant), _one_sided(Y, X, variant))


def chamfer(X, Y, variant="CD2") -> Tensor:
    """Symmetric Chamfer distance; batched inputs are averaged over the batch."""
    per = chamfer_per_sample(X, Y, variant)
    return per if per.ndim == 0 else T.mean(per)


def lsgan_generator_loss(d_of_q) -> Tensor:
    """``0.5 * (D(Q) - 1)^2``, averaged when given several scores."""
    d = T.as_tensor(d_of_q)
    return T.mul(T.mean(T.square(T.sub(d, 1.0))), 0.5)


def lsgan_discriminator_loss(d_of_q, d_of_gt) -> Tensor:
    """``0.5 * (D(Q)^2 + (D(Q') - 1)^2)``, averaged when given several scores."""
    fake = T.mean(T.square(T.as_tensor(d_of_q)))
    real = T.mean(T.square(T.sub(T.as_tensor(d_of_gt), 1.0)))
    return T.mul(T.add(fake, real), 0.5)


def reconstruction_loss(
    coarse, dense, partial_hat, partial, target,
    lambda_f: float = 1.0, lambda_ae: float = 100.0, variant="CD2",
) -> Tensor:
    """Coarse and dense Chamfer against the target plus the weighted auto-encoder term.

    ``partial_hat`` may be ``None`` when the auto-encoder branch is disabled.
    """
    loss = T.add(chamfer(coarse, target, variant), T.mul(chamfer(dense, target, variant), lambda_f))
    if partial_hat is not None and lambda_ae:
        loss = T.add(loss, T.mul(chamfer(partial_hat, partial, variant), lambda_ae))
    return loss


def total_generator_loss(gan_loss, rec_loss, lam: float = 1.0, beta: float = 200.0) -> Tensor:
    return T.add(T.mul(T.as_tensor(gan_loss), lam), T.mul(T.as_tensor(rec_loss), beta))


def chamfer_value(X: np.ndarray, Y: np.ndarray, variant="CD2") -> float:
    """Plain-float Chamfer distance of two single clouds (no graph)."""
    with T.no_grad():
        return float(chamfer(X, Y, variant).data)
