import numpy as np
import pytest

from crn.config import NetConfig


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5, entries=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the largest gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def away_from_zero(rng, shape, margin=1e-3):
    """Uniform [-1, 1] samples kept at least ``margin`` away from 0."""
    x = rng.uniform(-1, 1, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def toy_net(**overrides) -> NetConfig:
    """A 16-point network small enough for exhaustive gradient checks."""
    base = dict(
        n_input=16, n_coarse=4, feat_dim=8,
        encoder_stage1=(8, 8), encoder_stage2=(8,), coarse_hidden=(8,),
        lift_pre=(8, 8), contraction=(8, 8), expansion=(8,), head_hidden=(8,),
        iterations=1, disc_seeds=4, disc_k=(3, 4, 5),
        disc_widths=((4, 4), (4, 4), (4, 4)),
    )
    base.update(overrides)
    return NetConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
