"""Evaluation metrics: EMD, accuracy/completeness/F-score, fidelity, FPD."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .geometry import as_cloud, nearest_neighbor_dists, pairwise_sq_dists

METRIC_COLUMNS = ("cd1", "cd2", "emd", "accuracy", "completeness", "fscore", "fidelity", "fpd")
DEFAULT_TAU = 0.03


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (Hungarian method).

    Shortest augmenting paths with row/column potentials, O(n^3). Returns
    ``col`` such that row ``i`` is matched to column ``col[i]``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ContractError(f"linear_assignment needs a square matrix, got {cost.shape}")
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.intp)  # match[j]: row (1-based) owning column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col = np.empty(n, dtype=np.intp)
    col[match[1:] - 1] = np.arange(n)
    return col


def emd(X, Y) -> float:
    """Mean matched distance under the optimal bijection between equal-size clouds."""
    X, Y = as_cloud(X), as_cloud(Y)
    if len(X) != len(Y):
        raise ContractError(f"emd needs equal sizes, got {len(X)} and {len(Y)}")
    if len(X) == 0:
        raise ContractError("emd: empty clouds")
    cost = np.sqrt(pairwise_sq_dists(X, Y))
    col = linear_assignment(cost)
    return float(cost[np.arange(len(X)), col].mean())


def matched_fraction(A, B, tau: float = DEFAULT_TAU) -> float:
    """Fraction of ``A`` whose nearest neighbour in ``B`` is strictly closer than ``tau``."""
    if tau <= 0:
        raise ContractError(f"matched_fraction: tau must be positive, got {tau}")
    d, _ = nearest_neighbor_dists(as_cloud(A), as_cloud(B))
    return float(np.mean(d < tau))


def accuracy(output, gt, tau: float = DEFAULT_TAU) -> float:
    return matched_fraction(output, gt, tau)


def completeness(output, gt, tau: float = DEFAULT_TAU) -> float:
    return matched_fraction(gt, output, tau)


def fscore(acc: float, comp: float) -> float:
    if acc + comp == 0:
        return 0.0
    return 2.0 * acc * comp / (acc + comp)


def fidelity(partial, output) -> float:
    """Mean distance from each input point to the completed cloud."""
    d, _ = nearest_neighbor_dists(as_cloud(partial), as_cloud(output))
    return float(d.mean())


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def fpd(feats_x, feats_y) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The trace of ``(Sx Sy)^(1/2)`` is evaluated as the trace of the symmetric
    ``(Sx^(1/2) Sy Sx^(1/2))^(1/2)``, which shares its eigenvalues.
    """
    fx = np.asarray(feats_x, dtype=np.float64)
    fy = np.asarray(feats_y, dtype=np.float64)
    if fx.ndim != 2 or fy.ndim != 2 or fx.shape[1] != fy.shape[1]:
        raise ContractError(f"fpd: feature dimensions differ: {fx.shape} vs {fy.shape}")
    if len(fx) < 2 or len(fy) < 2:
        raise ContractError("fpd: each set needs at least two vectors")
    mx, my = fx.mean(axis=0), fy.mean(axis=0)
    sx = np.atleast_2d(np.cov(fx, rowvar=False))
    sy = np.atleast_2d(np.cov(fy, rowvar=False))
    return fpd_from_stats(mx, sx, my, sy)


def fpd_from_stats(mx, sx, my, sy) -> float:
    root_x = _sym_sqrt(np.asarray(sx, dtype=np.float64))
    inner = root_x @ np.asarray(sy, dtype=np.float64) @ root_x
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    cross = np.sum(np.sqrt(np.clip(w, 0.0, None)))
    diff = np.asarray(mx) - np.asarray(my)
    return float(diff @ diff + np.trace(sx) + np.trace(sy) - 2.0 * cross)


@dataclass
class MetricsReport:
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for key, val in self.values.items():
            if key not in METRIC_COLUMNS:
                raise ContractError(f"unknown metric {key!r}")
            if not np.isfinite(val):
                raise ContractError(f"metric {key} is not finite: {val}")

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def to_text(self) -> str:
        return "".join(f"{k}={self.values[k]!r}\n" for k in METRIC_COLUMNS if k in self.values)

    @staticmethod
    def csv_header() -> str:
        return ",".join(METRIC_COLUMNS)

    def to_csv_row(self) -> str:
        return ",".join(repr(self.values[k]) if k in self.values else "" for k in METRIC_COLUMNS)

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, _, val = line.partition("=")
                values[key.strip()] = float(val)
        return cls(values)

    @classmethod
    def mean_of(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        keys = [k for k in METRIC_COLUMNS if reports and all(k in r.values for r in reports)]
        return cls({k: float(np.mean([r.values[k] for r in reports])) for k in keys})


def cloud_metrics(output, gt, partial=None, tau: float = DEFAULT_TAU, with_emd: bool = True) -> MetricsReport:
    """All per-pair metrics except FPD, which is a population statistic."""
    from .losses import chamfer_value

    output, gt = as_cloud(output), as_cloud(gt)
    acc = accuracy(output, gt, tau)
    comp = completeness(output, gt, tau)
    values = {
        "cd1": chamfer_value(output, gt, "CD1"),
        "cd2": chamfer_value(output, gt, "CD2"),
        "accuracy": acc,
        "completeness": comp,
        "fscore": fscore(acc, comp),
    }
    if with_emd and len(output) == len(gt):
        values["emd"] = emd(output, gt)
    if partial is not None:
        values["fidelity"] = fidelity(partial, output)
    return MetricsReport(values)
