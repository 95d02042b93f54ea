"""Synthetic labeled plants: a stem, strap-shaped leaves and a panicle on top.

Organs have distinct base colors and intensities, so the classes are
separable; geometry varies with the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ClassMap, PointCloud

PLANT_CLASSES = ClassMap(("stem", "leaf", "panicle"))
STEM, LEAF, PANICLE = 0, 1, 2

_BASE_COLOR = {STEM: (120, 90, 40), LEAF: (40, 160, 50), PANICLE: (220, 200, 60)}
_BASE_INTENSITY = {STEM: 0.3, LEAF: 0.6, PANICLE: 0.9}


@dataclass(frozen=True)
class SyntheticPlantSpec:
    stem_height: float = 1.0
    stem_radius: float = 0.015
    leaf_count: int = 6
    leaf_length: float = 0.35
    leaf_width: float = 0.05
    stem_points: int = 12000
    points_per_leaf: int = 5000
    panicle_points: int = 8000
    panicle_radius: float = 0.06
    noise_sigma: float = 0.002
    color_sigma: float = 8.0
    seed: int = 0

    def __post_init__(self):
        for name in ("stem_points", "points_per_leaf", "panicle_points", "leaf_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.stem_height <= 0 or self.stem_radius <= 0:
            raise ValueError("stem dimensions must be positive")

    @property
    def total_points(self) -> int:
        return self.stem_points + self.leaf_count * self.points_per_leaf + self.panicle_points


def _stem(spec, rng):
    n = spec.stem_points
    theta = rng.uniform(0, 2 * math.pi, n)
    z = rng.uniform(0, spec.stem_height, n)
    radial = np.stack([np.cos(theta), np.sin(theta), np.zeros(n)], axis=1)
    pos = radial * spec.stem_radius + np.stack([np.zeros(n), np.zeros(n), z], axis=1)
    return pos, radial


def _leaf(spec, rng, n):
    # a gently arching strap leaving the stem at a random height and azimuth
    base_z = rng.uniform(0.15, 0.8) * spec.stem_height
    azimuth = rng.uniform(0, 2 * math.pi)
    s = rng.uniform(0, 1, n)
    w = rng.uniform(-0.5, 0.5, n) * spec.leaf_width * (1 - 0.8 * s)
    out_dir = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
    side = np.array([-math.sin(azimuth), math.cos(azimuth), 0.0])
    reach = spec.stem_radius + s * spec.leaf_length
    lift = 0.25 * spec.leaf_length * np.sin(math.pi * s * 0.8)
    pos = (out_dir[None] * reach[:, None] + side[None] * w[:, None]
           + np.stack([np.zeros(n), np.zeros(n), base_z + lift], axis=1))
    # the strap spans out_dir and side, so its normal is vertical up to the arch tilt
    slope = 0.25 * spec.leaf_length * math.pi * 0.8 * np.cos(math.pi * s * 0.8) / spec.leaf_length
    normal = np.stack([-slope * out_dir[0], -slope * out_dir[1], np.ones(n)], axis=1)
    return pos, normal


def _panicle(spec, rng):
    n = spec.panicle_points
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    center = np.array([0.0, 0.0, spec.stem_height + spec.panicle_radius * 1.5])
    pos = center + v * spec.panicle_radius * np.array([1.0, 1.0, 2.0])
    return pos, v


def synth_plant(spec: SyntheticPlantSpec = SyntheticPlantSpec()) -> PointCloud:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    parts = [(STEM, *_stem(spec, rng))]
    for _ in range(spec.leaf_count):
        parts.append((LEAF, *_leaf(spec, rng, spec.points_per_leaf)))
    parts.append((PANICLE, *_panicle(spec, rng)))

    pos = np.concatenate([p for _, p, _ in parts])
    normals = np.concatenate([n for _, _, n in parts])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    labels = np.concatenate([np.full(len(p), c, np.int64) for c, p, _ in parts])
    pos = pos + rng.normal(0, spec.noise_sigma, pos.shape)

    base = np.array([_BASE_COLOR[c] for c in range(3)], dtype=np.float64)[labels]
    colors = np.clip(np.rint(base + rng.normal(0, spec.color_sigma, base.shape)), 0, 255).astype(np.uint8)
    intensity = np.array([_BASE_INTENSITY[c] for c in range(3)])[labels]
    intensity = (intensity + rng.normal(0, 0.03, len(labels))).astype(np.float32)

    # shuffle so point order carries no organ information
    perm = rng.permutation(len(labels))
    return PointCloud(
        positions=pos[perm],
        colors=colors[perm],
        normals=normals[perm].astype(np.float32),
        intensity=intensity[perm],
        labels=labels[perm],
        class_map=PLANT_CLASSES,
    )
