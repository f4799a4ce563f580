"""Procedural stand-ins for mesh-sampled object clouds.

Each kind is an assembly of boxes and closed cylinders with randomised
proportions. Points are spread over the union of surfaces proportionally to
area, then the cloud is centred and scaled into ``[-0.5, 0.5]^3``. Every
assembly is symmetric about the xy-plane, like most man-made objects in the
usual canonical pose.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SHAPE_KINDS = ("box-frame", "table", "chair", "cylinder-lamp", "plane-wing")


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half: tuple[float, float, float]

    def area(self) -> float:
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hx * hz)

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        half = np.asarray(self.half)
        face_area = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
        axis = rng.choice(3, size=k, p=face_area / face_area.sum())
        pts = rng.uniform(-1.0, 1.0, size=(k, 3))
        pts[np.arange(k), axis] = rng.choice([-1.0, 1.0], size=k)
        return pts * half + np.asarray(self.center)


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float, float]
    axis: int
    radius: float
    half_height: float

    def area(self) -> float:
        r, h = self.radius, self.half_height
        return 4.0 * np.pi * r * h + 2.0 * np.pi * r * r

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        r, h = self.radius, self.half_height
        side = 4.0 * np.pi * r * h
        on_side = rng.random(k) < side / self.area()
        theta = rng.uniform(0.0, 2.0 * np.pi, size=k)
        rad = np.where(on_side, r, r * np.sqrt(rng.random(k)))
        height = np.where(on_side, rng.uniform(-h, h, size=k), h * rng.choice([-1.0, 1.0], size=k))
        u, w = rad * np.cos(theta), rad * np.sin(theta)
        others = [a for a in range(3) if a != self.axis]
        pts = np.empty((k, 3))
        pts[:, self.axis] = height
        pts[:, others[0]] = u
        pts[:, others[1]] = w
        return pts + np.asarray(self.center)


def _box_frame(rng):
    size = rng.uniform(0.7, 1.2, size=3)
    t = rng.uniform(0.03, 0.09)
    parts = []
    for a in range(3):
        b, c = [x for x in range(3) if x != a]
        for sb in (-1, 1):
            for sc in (-1, 1):
                center = [0.0, 0.0, 0.0]
                center[b] = sb * (size[b] / 2 - t)
                center[c] = sc * (size[c] / 2 - t)
                half = [t, t, t]
                half[a] = size[a] / 2
                parts.append(Box(tuple(center), tuple(half)))
    return parts


def _legs(width, depth, height, thick, top_y):
    legs = []
    for sx in (-1, 1):
        for sz in (-1, 1):
            legs.append(Box((sx * (width / 2 - thick), top_y - height / 2, sz * (depth / 2 - thick)),
                            (thick, height / 2, thick)))
    return legs


def _table(rng):
    width, depth = rng.uniform(0.8, 1.2), rng.uniform(0.5, 1.0)
    top_t, height = rng.uniform(0.03, 0.08), rng.uniform(0.45, 0.85)
    leg_t = rng.uniform(0.03, 0.1)
    top = Box((0.0, height, 0.0), (width / 2, top_t, depth / 2))
    return [top] + _legs(width, depth, height - top_t, leg_t, height - top_t)


def _chair(rng):
    width, depth = rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6)
    seat_h, seat_t = rng.uniform(0.35, 0.5), rng.uniform(0.03, 0.06)
    back_h, back_t = rng.uniform(0.35, 0.65), rng.uniform(0.03, 0.06)
    leg_t = rng.uniform(0.02, 0.05)
    seat = Box((0.0, seat_h, 0.0), (width / 2, seat_t, depth / 2))
    back = Box((-width / 2 + back_t, seat_h + seat_t + back_h / 2, 0.0), (back_t, back_h / 2, depth / 2))
    return [seat, back] + _legs(width, depth, seat_h - seat_t, leg_t, seat_h - seat_t)


def _lamp(rng):
    base_r, base_h = rng.uniform(0.12, 0.3), rng.uniform(0.02, 0.05)
    pole_r, pole_h = rng.uniform(0.015, 0.04), rng.uniform(0.5, 0.9)
    shade_r, shade_h = rng.uniform(0.15, 0.3), rng.uniform(0.12, 0.3)
    return [
        Cylinder((0.0, base_h, 0.0), 1, base_r, base_h),
        Cylinder((0.0, 2 * base_h + pole_h / 2, 0.0), 1, pole_r, pole_h / 2),
        Cylinder((0.0, 2 * base_h + pole_h, 0.0), 1, shade_r, shade_h / 2),
    ]


def _plane(rng):
    length, radius = rng.uniform(0.8, 1.2), rng.uniform(0.05, 0.1)
    span, chord = rng.uniform(0.8, 1.3), rng.uniform(0.15, 0.3)
    wing_x = rng.uniform(-0.1, 0.15) * length
    tail_span = span * rng.uniform(0.25, 0.4)
    fin_h = rng.uniform(0.1, 0.25)
    tail_x = -length / 2 + chord / 3
    return [
        Cylinder((0.0, 0.0, 0.0), 0, radius, length / 2),
        Box((wing_x, 0.0, 0.0), (chord / 2, 0.012, span / 2)),
        Box((tail_x, 0.0, 0.0), (chord / 4, 0.01, tail_span / 2)),
        Box((tail_x, radius + fin_h / 2, 0.0), (chord / 4, fin_h / 2, 0.01)),
    ]


_BUILDERS = {
    "box-frame": _box_frame,
    "table": _table,
    "chair": _chair,
    "cylinder-lamp": _lamp,
    "plane-wing": _plane,
}


def normalize_unit_box(cloud: np.ndarray) -> np.ndarray:
    lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    scale = float(np.max(hi - lo)) or 1.0
    return np.clip((cloud - (lo + hi) / 2.0) / scale, -0.5, 0.5)


def synth_shape(kind: str, n: int, seed=0) -> tuple[np.ndarray, str]:
    """Sample ``n`` surface points of a randomised ``kind`` assembly."""
    if kind not in _BUILDERS:
        raise ContractError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if n < 64:
        raise ContractError(f"synth_shape needs n >= 64, got {n}")
    rng = np.random.default_rng(seed)
    parts = _BUILDERS[kind](rng)
    areas = np.array([p.area() for p in parts])
    counts = rng.multinomial(n, areas / areas.sum())
    cloud = np.concatenate([p.sample(c, rng) for p, c in zip(parts, counts) if c])
    cloud = cloud[rng.permutation(n)]
    return normalize_unit_box(cloud), kind
