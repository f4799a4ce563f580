"""Training-pair construction: partial views, resampling, MixUp, hybrid sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .geometry import as_cloud, random_subsample
from .shapes import SHAPE_KINDS, synth_shape

SOURCES = ("labeled", "resampled", "mixed")
CENTER_MODES = ("sphere-direction", "cloud-point")


@dataclass(frozen=True)
class TrainingPair:
    input: np.ndarray
    target: np.ndarray
    source: str = "labeled"
    category: str = ""

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ContractError(f"unknown pair source {self.source!r}")
        if len(self.input) == 0 or len(self.target) == 0:
            raise ContractError("training pair clouds must be non-empty")


@dataclass(frozen=True)
class RemovalSpec:
    """Where to cut and how much.

    Fixed-count mode removes ``n_remove`` points (or ``fraction`` of the cloud
    when ``n_remove`` is None); radius mode removes everything within
    ``radius`` of the center and is selected by setting ``radius``.
    """

    center: str = "sphere-direction"
    n_remove: int | None = None
    radius: float | None = None
    fraction: float = 0.25

    def __post_init__(self):
        if self.center not in CENTER_MODES:
            raise ContractError(f"unknown center mode {self.center!r}")
        if self.radius is not None and self.radius <= 0:
            raise ContractError(f"removal radius must be positive, got {self.radius}")
        if self.n_remove is not None and self.n_remove < 0:
            raise ContractError(f"n_remove must be non-negative, got {self.n_remove}")
        if not 0.0 <= self.fraction < 1.0:
            raise ContractError(f"removal fraction must be in [0, 1), got {self.fraction}")

    def count_for(self, size: int) -> int:
        return self.n_remove if self.n_remove is not None else int(round(self.fraction * size))


def removal_center(cloud, spec: RemovalSpec, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if spec.center == "cloud-point":
        return np.array(cloud[rng.integers(len(cloud))])
    direction = rng.standard_normal(3)
    return direction / np.linalg.norm(direction)


def removal_mask(cloud, spec: RemovalSpec, seed=0) -> np.ndarray:
    """Boolean mask of the points a partial view drops."""
    cloud = as_cloud(cloud)
    rng = np.random.default_rng(seed)
    center = removal_center(cloud, spec, rng)
    d = np.sqrt(np.sum((cloud - center) ** 2, axis=1))
    mask = np.zeros(len(cloud), dtype=bool)
    if spec.radius is not None:
        mask = d <= spec.radius
    else:
        k = spec.count_for(len(cloud))
        mask[np.argsort(d, kind="stable")[:k]] = True
    if mask.all():
        raise ContractError(f"removal would empty a cloud of {len(cloud)} points")
    return mask


def make_partial_view(complete, spec: RemovalSpec, seed=0) -> np.ndarray:
    cloud = as_cloud(complete)
    return cloud[~removal_mask(cloud, spec, seed)]


def resample_partial(P, spec: RemovalSpec, seed=0, category: str = "") -> TrainingPair:
    """A more incomplete input cut from ``P``, paired with ``P`` as target."""
    P = as_cloud(P)
    mask = removal_mask(P, spec, seed)
    if not mask.any():
        raise ContractError("resampling removed no points; enlarge the removal region")
    return TrainingPair(P[~mask], P, "resampled", category)


def _mix_clouds(a: np.ndarray, b: np.ndarray, gamma: float, rng) -> np.ndarray:
    n = len(a)
    k = int(math.floor(gamma * n + 0.5))
    ia = rng.choice(n, size=k, replace=False)
    ib = rng.choice(n, size=n - k, replace=False)
    return np.concatenate([a[ia], b[ib]])


def mixup(pair1: TrainingPair, pair2: TrainingPair, beta_a: float = 1.0, beta_b: float = 1.0,
          seed=0, gamma: float | None = None) -> TrainingPair:
    """Blend two pairs with one Beta-distributed fraction for inputs and targets."""
    if len(pair1.input) != len(pair2.input) or len(pair1.target) != len(pair2.target):
        raise ContractError(
            f"mixup needs equal sizes: inputs {len(pair1.input)}/{len(pair2.input)}, "
            f"targets {len(pair1.target)}/{len(pair2.target)}"
        )
    rng = np.random.default_rng(seed)
    if gamma is None:
        gamma = float(rng.beta(beta_a, beta_b))
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"mixup fraction must lie in [0, 1], got {gamma}")
    category = pair1.category if pair1.category == pair2.category else f"{pair1.category}+{pair2.category}"
    return TrainingPair(
        _mix_clouds(pair1.input, pair2.input, gamma, rng),
        _mix_clouds(pair1.target, pair2.target, gamma, rng),
        "mixed",
        category,
    )


def _equalize(p1: TrainingPair, p2: TrainingPair, rng) -> tuple[TrainingPair, TrainingPair]:
    n_in = min(len(p1.input), len(p2.input))
    n_t = min(len(p1.target), len(p2.target))

    def cut(p):
        return replace(p, input=random_subsample(p.input, n_in, rng) if len(p.input) > n_in else p.input,
                       target=random_subsample(p.target, n_t, rng) if len(p.target) > n_t else p.target)

    return cut(p1), cut(p2)


def build_training_set(
    labeled_pairs: list[TrainingPair],
    labeled_ratio: float = 1.0,
    resampling: bool = False,
    use_mixup: bool = False,
    spec: RemovalSpec = RemovalSpec(),
    beta: tuple[float, float] = (1.0, 1.0),
    seed=0,
) -> list[TrainingPair]:
    """Keep a labeled fraction and refill the rest with self-supervised pairs.

    Withheld pairs contribute only their partial inputs. With both strategies
    on, the refill is split between resampled pairs (first half, rounded up)
    and MixUp pairs drawn from the kept-plus-resampled pool. With neither,
    kept labeled pairs are cycled so the total stays unchanged.
    """
    if not 0.0 <= labeled_ratio <= 1.0:
        raise ContractError(f"labeled_ratio must lie in [0, 1], got {labeled_ratio}")
    rng = np.random.default_rng(seed)
    total = len(labeled_pairs)
    n_keep = int(math.floor(labeled_ratio * total + 1e-9))
    order = rng.permutation(total)
    kept = [labeled_pairs[i] for i in order[:n_keep]]
    withheld = [labeled_pairs[i] for i in order[n_keep:]]
    refill = total - n_keep

    if resampling:
        n_res = math.ceil(refill / 2) if use_mixup else refill
    else:
        n_res = 0
    resampled = [
        resample_partial(withheld[i % len(withheld)].input, spec, rng,
                         withheld[i % len(withheld)].category)
        for i in range(n_res)
    ]

    pool = kept + resampled
    n_extra = refill - n_res
    extra: list[TrainingPair] = []
    if n_extra:
        if not pool:
            raise ContractError("no supervision available: enable resampling or keep labeled pairs")
        for i in range(n_extra):
            if use_mixup:
                a, b = rng.choice(len(pool), size=2, replace=len(pool) < 2)
                p1, p2 = _equalize(pool[a], pool[b], rng)
                extra.append(mixup(p1, p2, beta[0], beta[1], rng))
            else:
                extra.append(kept[i % len(kept)] if kept else pool[i % len(pool)])

    out = kept + resampled + extra
    return [out[i] for i in rng.permutation(len(out))]


def make_labeled_dataset(n_shapes: int, n_points: int = 512, n_input: int = 256,
                         partial_spec: RemovalSpec = RemovalSpec(fraction=0.25),
                         seed=0, kinds=SHAPE_KINDS) -> list[TrainingPair]:
    """Procedural (partial view, complete cloud) pairs cycling through ``kinds``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_shapes):
        complete, category = synth_shape(kinds[i % len(kinds)], n_points, rng)
        partial = make_partial_view(complete, partial_spec, rng)
        partial = random_subsample(partial, n_input, rng)
        pairs.append(TrainingPair(partial, complete, "labeled", category))
    return pairs
