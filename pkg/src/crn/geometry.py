"""Point-set kernels: sampling, neighbourhoods, reflection and folding seeds.

Clouds are ``(n, 3)`` float64 arrays. Every function that draws random
numbers takes ``seed``, which may be an int or an existing
``numpy.random.Generator`` (passed through unchanged by ``default_rng``).
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError

_PLANE_AXIS = {"xy": 2, "yz": 0, "xz": 1}
_CHUNK = 1 << 22  # max pairwise entries materialised at once


def as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ContractError(f"expected an (n, 3) point array, got shape {cloud.shape}")
    return cloud


def pairwise_sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``(..., n, m)`` squared distances, accumulated as dx*dx + dy*dy + dz*dz."""
    dx = X[..., :, None, 0] - Y[..., None, :, 0]
    dy = X[..., :, None, 1] - Y[..., None, :, 1]
    dz = X[..., :, None, 2] - Y[..., None, :, 2]
    return dx * dx + dy * dy + dz * dz


def _sq_dists_to(cloud: np.ndarray, p: np.ndarray) -> np.ndarray:
    d = cloud - p
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


def farthest_point_sample(cloud, k: int, seed=0) -> np.ndarray:
    """Greedy max-min index selection starting from a seeded random point."""
    cloud = as_cloud(cloud)
    n = len(cloud)
    if not 1 <= k <= n:
        raise ContractError(f"farthest_point_sample: need 1 <= k <= {n}, got k={k}")
    rng = np.random.default_rng(seed)
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = rng.integers(n)
    min_dist = np.sqrt(_sq_dists_to(cloud, cloud[chosen[0]]))
    # chosen indices are masked so duplicate points cannot be re-picked
    min_dist[chosen[0]] = -np.inf
    for i in range(1, k):
        # argmax returns the lowest index among ties
        nxt = int(np.argmax(min_dist))
        chosen[i] = nxt
        np.minimum(min_dist, np.sqrt(_sq_dists_to(cloud, cloud[nxt])), out=min_dist)
        min_dist[nxt] = -np.inf
    return chosen


def nearest_neighbor_dists(X, Y) -> tuple[np.ndarray, np.ndarray]:
    """Distance from every row of ``X`` to its closest row of ``Y``, plus that index.

    Works on single clouds ``(n, 3)`` and batches ``(B, n, 3)``. Ties go to the
    lowest index in ``Y``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[-2] == 0 or Y.shape[-2] == 0:
        raise ContractError("nearest_neighbor_dists: both clouds must be non-empty")
    if X.shape[:-2] != Y.shape[:-2]:
        raise ContractError(f"batch shapes differ: {X.shape} vs {Y.shape}")
    n, m = X.shape[-2], Y.shape[-2]
    batch = int(np.prod(X.shape[:-2], dtype=np.int64))
    Xb = X.reshape(batch, n, 3)
    Yb = Y.reshape(batch, m, 3)
    dist = np.empty((batch, n))
    index = np.empty((batch, n), dtype=np.intp)
    rows = max(1, _CHUNK // max(1, m))
    for b in range(batch):
        for lo in range(0, n, rows):
            d2 = pairwise_sq_dists(Xb[b, lo:lo + rows], Yb[b])
            j = np.argmin(d2, axis=1)
            index[b, lo:lo + rows] = j
            dist[b, lo:lo + rows] = np.sqrt(d2[np.arange(len(j)), j])
    return dist.reshape(X.shape[:-1]), index.reshape(X.shape[:-1])


def ball_query(cloud, centers, radius: float, K: int) -> np.ndarray:
    """``(n_centers, K)`` neighbour indices within ``radius`` of each center.

    Qualifying indices come in ascending order, truncated to ``K``. Short lists
    are padded with their first entry; an empty ball falls back to the
    nearest point of the cloud.
    """
    cloud = as_cloud(cloud)
    centers = as_cloud(centers)
    if len(cloud) == 0:
        raise ContractError("ball_query: empty cloud")
    if radius <= 0 or K < 1:
        raise ContractError(f"ball_query: need radius > 0 and K >= 1, got {radius}, {K}")
    d = np.sqrt(pairwise_sq_dists(centers, cloud))
    inside = d <= radius
    # stable sort puts qualifying indices first, in ascending order
    order = np.argsort(~inside, axis=1, kind="stable")
    if order.shape[1] < K:
        order = np.pad(order, ((0, 0), (0, K - order.shape[1])), mode="edge")
    idx = order[:, :K].copy()
    count = inside.sum(axis=1)
    first = np.where(count > 0, order[:, 0], np.argmin(d, axis=1))
    pad = np.arange(K)[None, :] >= count[:, None]
    idx[pad] = np.broadcast_to(first[:, None], idx.shape)[pad]
    return idx


def random_subsample(cloud, m: int, seed=0) -> np.ndarray:
    """``m`` random points; without replacement unless ``m`` exceeds the cloud."""
    cloud = as_cloud(cloud)
    if m < 1 or len(cloud) == 0:
        raise ContractError(f"random_subsample: need m >= 1 and a non-empty cloud, got m={m}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=m, replace=m > len(cloud))
    return cloud[idx]


def mirror(cloud, plane: str = "xy") -> np.ndarray:
    """Reflect across an axis-aligned plane through the origin."""
    if plane not in _PLANE_AXIS:
        raise ContractError(f"unknown mirror plane {plane!r}; expected one of {sorted(_PLANE_AXIS)}")
    out = np.array(cloud, dtype=np.float64)
    out[..., _PLANE_AXIS[plane]] *= -1.0
    return out


def grid_seeds(n: int, seed=0, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """``n`` pairwise-distinct 2D vectors drawn uniformly from ``[lo, hi]^2``."""
    if n < 1 or not lo < hi:
        raise ContractError(f"grid_seeds: need n >= 1 and lo < hi, got n={n}, [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    seeds = rng.uniform(lo, hi, size=(n, 2))
    while True:
        _, first = np.unique(seeds, axis=0, return_index=True)
        if len(first) == n:
            return seeds
        dup = np.setdiff1d(np.arange(n), first)
        seeds[dup] = rng.uniform(lo, hi, size=(len(dup), 2))
