"""Feature matrices per sub-sample, class weights and dataset splits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

from .core import FeatureSchema, PointCloud, SubSample

NORMALIZATION = "per-axis-minmax"
COLOR_SCALE = 255.0


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (rows, schema.total_width)
    schema: FeatureSchema

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[1] != self.schema.total_width:
            raise ValueError(
                f"feature matrix shape {v.shape} does not match schema width {self.schema.total_width}"
            )
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return self.schema.total_width

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.offsets()[name]]


class MissingChannelError(ValueError):
    pass


def minmax_normalize(xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    if len(xyz) == 0:
        return np.zeros((0, 3))
    lo = xyz.min(axis=0)
    span = xyz.max(axis=0) - lo
    out = np.zeros_like(xyz)
    ok = span > 0
    out[:, ok] = (xyz[:, ok] - lo[ok]) / span[ok]
    # guard against rounding a hair past 1
    return np.clip(out, 0.0, 1.0)


def normalize_coordinates(cloud: PointCloud, sub: SubSample) -> np.ndarray:
    """Per-axis min-max of the sub-sample's own coordinates; flat axes map to 0."""
    return minmax_normalize(cloud.positions[sub.indices])


def assemble(cloud: PointCloud, sub: SubSample, schema: FeatureSchema) -> FeatureMatrix:
    """Build the feature rows of ``sub`` in its extraction order."""
    for ch in schema.channels:
        if not cloud.has(ch):
            raise MissingChannelError(f"missing channel: {ch}")
    idx = sub.indices
    values = np.empty((len(idx), schema.total_width), dtype=np.float64)
    for ch, cols in schema.offsets().items():
        if ch == "position":
            block = cloud.positions[idx]
        elif ch == "normalized_position":
            block = normalize_coordinates(cloud, sub)
        elif ch == "color":
            block = cloud.colors[idx].astype(np.float64) / COLOR_SCALE
        elif ch == "normal":
            block = cloud.normals[idx]
        else:
            block = cloud.intensity[idx][:, None]
        values[:, cols] = block
    return FeatureMatrix(values, schema)


def augment_rotate_z(matrix: FeatureMatrix, angle: float) -> FeatureMatrix:
    """Rotate positions and normals about the vertical axis."""
    cols = matrix.schema.offsets()
    if "position" not in cols:
        raise ValueError("rotation needs a position channel")
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    out = matrix.values.astype(np.float64, copy=True)
    out[:, cols["position"]] = out[:, cols["position"]] @ rot.T
    if "normal" in cols:
        out[:, cols["normal"]] = out[:, cols["normal"]] @ rot.T
    if "normalized_position" in cols:
        out[:, cols["normalized_position"]] = minmax_normalize(out[:, cols["position"]])
    return FeatureMatrix(out, matrix.schema)


@dataclass(frozen=True, eq=False)
class ClassWeights:
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


def class_weights(labels, num_classes: int) -> ClassWeights:
    """Inverse-frequency weights normalised to sum to one; absent classes get 0."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValueError("class_weights needs at least one label")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label id outside [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    inv = np.zeros(num_classes, dtype=np.float64)
    present = counts > 0
    inv[present] = 1.0 / counts[present]
    return ClassWeights(inv / math.fsum(inv))


SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class SplitAssignment:
    tags: dict  # unit id -> tag
    seed: int

    def units(self, tag: str) -> list:
        return [u for u, t in self.tags.items() if t == tag]

    def counts(self) -> dict[str, int]:
        return {t: len(self.units(t)) for t in SPLIT_TAGS}


def _split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder apportionment, every requested part gets at least one unit
    wanted = [round(f * n, 9) for f in fractions]
    counts = [math.floor(w) for w in wanted]
    order = sorted(range(len(wanted)), key=lambda i: (-(wanted[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i, f in enumerate(fractions):
        if f > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split(units: Sequence[Hashable], fractions: Mapping[str, float], seed: int) -> SplitAssignment:
    """Seeded shuffle of ``units`` followed by contiguous train/val/test cuts."""
    train = float(fractions.get("train", 0.0))
    val = float(fractions.get("val", 0.0))
    if train <= 0 or val < 0:
        raise ValueError("fractions must be positive")
    if set(fractions) - {"train", "val"}:
        raise ValueError(f"unknown split names {sorted(set(fractions) - {'train', 'val'})}")
    test = 1.0 - train - val
    if test < -1e-9:
        raise ValueError("train + val fractions exceed 1")
    if test < 1e-9:
        test = 0.0
    units = list(units)
    if len(set(units)) != len(units):
        raise ValueError("unit ids must be unique")
    parts = [f for f in (train, val, test)]
    needed = sum(f > 0 for f in parts)
    if len(units) < needed:
        raise ValueError(f"{len(units)} units cannot fill {needed} non-empty partitions")
    counts = _split_counts(len(units), parts)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(units))
    tags = {}
    pos = 0
    for tag, c in zip(SPLIT_TAGS, counts):
        for j in perm[pos:pos + c]:
            tags[units[j]] = tag
        pos += c
    ordered = {u: tags[u] for u in units}
    return SplitAssignment(ordered, seed)
