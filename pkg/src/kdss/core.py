"""Domain types shared across the package.

Point clouds are stored column-wise: one numpy array per channel, all indexed
by the same point id. Constructors only coerce dtypes; structural checks live in
:func:`validate_cloud` so that broken inputs can be described rather than
rejected outright.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

CHANNEL_ARITY = {
    "position": 3,
    "color": 3,
    "normal": 3,
    "intensity": 1,
    "normalized_position": 3,
}

NORMAL_TOLERANCE = 1e-3


def _frozen(a: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is not None:
        a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ClassMap:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if not names:
            raise ValueError("class map needs at least one class")
        if any(not n for n in names):
            raise ValueError("class names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names in {names}")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar point cloud. Optional channels are ``None`` when absent.

    ``positions`` keeps its floating dtype (float32 or float64) so that files
    can be written back byte-for-byte.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    intensity: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    predicted: Optional[np.ndarray] = None
    class_map: Optional[ClassMap] = None
    normals_unnormalized: bool = False

    def __post_init__(self):
        pos = np.asarray(self.positions)
        if pos.dtype not in (np.float32, np.float64):
            pos = pos.astype(np.float64)
        pos = pos.reshape(-1, 3) if pos.size else pos.reshape(0, 3)
        object.__setattr__(self, "positions", _frozen(np.array(pos)))
        for name, dtype in (("colors", None), ("normals", None), ("intensity", None),
                            ("labels", np.int64), ("predicted", np.int64)):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.array(value, dtype=dtype)
            if name in ("colors", "normals") and arr.ndim == 1 and arr.size % 3 == 0:
                arr = arr.reshape(-1, 3)
            # out-of-range colors keep their dtype so validate_cloud can report them
            if name == "colors" and arr.dtype.kind in "iu" and arr.dtype != np.uint8:
                if not arr.size or (arr.min() >= 0 and arr.max() <= 255):
                    arr = arr.astype(np.uint8)
            if name in ("normals", "intensity") and arr.dtype.kind != "f":
                arr = arr.astype(np.float64)
            object.__setattr__(self, name, _frozen(arr))

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def num_points(self) -> int:
        return len(self)

    def has(self, channel: str) -> bool:
        """Whether a feature channel (schema name) can be served by this cloud."""
        if channel in ("position", "normalized_position"):
            return True
        attr = {"color": "colors", "normal": "normals", "intensity": "intensity"}[channel]
        return getattr(self, attr) is not None

    def take(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return PointCloud(
            positions=self.positions[idx],
            colors=pick(self.colors),
            normals=pick(self.normals),
            intensity=pick(self.intensity),
            labels=pick(self.labels),
            predicted=pick(self.predicted),
            class_map=self.class_map,
            normals_unnormalized=self.normals_unnormalized,
        )

    def with_predictions(self, predicted) -> "PointCloud":
        return replace(self, predicted=np.asarray(predicted, dtype=np.int64))

    def channel_names(self) -> tuple[str, ...]:
        """Channels present: feature channels by schema name, then labels/predicted."""
        out = ["position"] + [c for c in ("color", "normal", "intensity") if self.has(c)]
        return tuple(out + [n for n in ("labels", "predicted") if getattr(self, n) is not None])


@dataclass(frozen=True)
class Violation:
    channel: str
    message: str
    index: Optional[int] = None

    def __str__(self):
        where = "" if self.index is None else f" (point {self.index})"
        return f"{self.channel}: {self.message}{where}"


def validate_cloud(cloud: PointCloud) -> list[Violation]:
    """Return every structural problem with ``cloud``; an empty list means valid."""
    out: list[Violation] = []
    pos = cloud.positions
    n = pos.shape[0]
    if pos.ndim != 2 or pos.shape[1] != 3:
        out.append(Violation("positions", f"expected shape (n, 3), got {pos.shape}"))
        return out
    for i in np.flatnonzero(~np.isfinite(pos).all(axis=1)):
        out.append(Violation("positions", "non-finite coordinate", int(i)))

    def rows_ok(name, arr, width):
        if len(arr) != n:
            out.append(Violation(name, f"{name} length mismatch: {len(arr)} != {n}"))
            return False
        if width and (arr.ndim != 2 or arr.shape[1] != width):
            out.append(Violation(name, f"expected {width} values per point, got shape {arr.shape}"))
            return False
        if width is None and arr.ndim != 1:
            out.append(Violation(name, f"expected one value per point, got shape {arr.shape}"))
            return False
        return True

    if cloud.colors is not None and rows_ok("colors", cloud.colors, 3):
        bad = (cloud.colors < 0) | (cloud.colors > 255)
        for i in np.flatnonzero(bad.any(axis=1)):
            out.append(Violation("colors", "color outside [0, 255]", int(i)))
    if cloud.normals is not None and rows_ok("normals", cloud.normals, 3):
        if not cloud.normals_unnormalized:
            norm = np.linalg.norm(cloud.normals.astype(np.float64), axis=1)
            for i in np.flatnonzero(~(np.abs(norm - 1.0) <= NORMAL_TOLERANCE)):
                out.append(Violation("normals", f"normal has length {norm[i]:.6g}", int(i)))
    if cloud.intensity is not None:
        rows_ok("intensity", cloud.intensity, None)
    n_classes = len(cloud.class_map) if cloud.class_map is not None else None
    for name in ("labels", "predicted"):
        arr = getattr(cloud, name)
        if arr is None or not rows_ok(name, arr, None):
            continue
        for i in np.flatnonzero(arr < 0):
            out.append(Violation(name, f"negative class id {arr[i]}", int(i)))
        if n_classes is not None:
            for i in np.flatnonzero(arr >= n_classes):
                out.append(Violation(name, f"class id {arr[i]} out of range for {n_classes} classes", int(i)))
    return out


@dataclass(frozen=True)
class FeatureSchema:
    channels: tuple[str, ...]

    def __post_init__(self):
        chans = tuple(self.channels)
        for c in chans:
            if c not in CHANNEL_ARITY:
                raise ValueError(f"unknown channel {c!r}; expected one of {sorted(CHANNEL_ARITY)}")
        if len(set(chans)) != len(chans):
            raise ValueError(f"channel listed twice in {chans}")
        object.__setattr__(self, "channels", chans)

    @classmethod
    def parse(cls, text: str) -> "FeatureSchema":
        return cls(tuple(c.strip() for c in text.split(",") if c.strip()))

    @property
    def total_width(self) -> int:
        return sum(CHANNEL_ARITY[c] for c in self.channels)

    def offsets(self) -> dict[str, slice]:
        """Column slice of every channel inside a feature row."""
        out, start = {}, 0
        for c in self.channels:
            out[c] = slice(start, start + CHANNEL_ARITY[c])
            start += CHANNEL_ARITY[c]
        return out

    def __str__(self):
        return ",".join(self.channels)


@dataclass(frozen=True, eq=False)
class SubSample:
    parent_size: int
    indices: np.ndarray
    center_index: int
    ordinal: int

    def __post_init__(self):
        object.__setattr__(self, "indices", _frozen(np.array(self.indices, dtype=np.int64)))

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def check(self) -> list[str]:
        problems = []
        idx = self.indices
        if len(np.unique(idx)) != len(idx):
            problems.append(f"sub-sample {self.ordinal}: duplicate indices")
        if len(idx) and (idx.min() < 0 or idx.max() >= self.parent_size):
            problems.append(f"sub-sample {self.ordinal}: index out of range")
        if self.center_index not in idx:
            problems.append(f"sub-sample {self.ordinal}: center {self.center_index} not a member")
        return problems


@dataclass(frozen=True, eq=False)
class SubSampleSet:
    subsamples: tuple[SubSample, ...]
    n_per_sample: int
    seed: int
    schema: Optional[FeatureSchema] = None
    rebuild_policy: str = "on_first_overlap"
    center_strategy: str = "uniform_random"

    def __post_init__(self):
        object.__setattr__(self, "subsamples", tuple(self.subsamples))

    def __len__(self) -> int:
        return len(self.subsamples)

    def __iter__(self):
        return iter(self.subsamples)

    def __getitem__(self, i) -> SubSample:
        return self.subsamples[i]

    @property
    def parent_size(self) -> int:
        return self.subsamples[0].parent_size if self.subsamples else 0

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.subsamples]

    def with_schema(self, schema: FeatureSchema) -> "SubSampleSet":
        return replace(self, schema=schema)


def check_partition(sset: SubSampleSet) -> list[str]:
    """Check the partition and size invariants in O(parent_size)."""
    problems: list[str] = []
    if not sset.subsamples:
        return ["no sub-samples"]
    n = sset.parent_size
    N = sset.n_per_sample
    seen = np.zeros(n, dtype=bool)
    for k, sub in enumerate(sset.subsamples):
        if sub.parent_size != n:
            problems.append(f"sub-sample {k}: parent_size {sub.parent_size} != {n}")
            continue
        if sub.ordinal != k:
            problems.append(f"sub-sample {k}: ordinal {sub.ordinal}")
        problems.extend(sub.check())
        idx = sub.indices[(sub.indices >= 0) & (sub.indices < n)]
        if seen[idx].any():
            problems.append(f"sub-sample {k}: overlaps an earlier sub-sample")
        seen[idx] = True
        last = k == len(sset.subsamples) - 1
        if not last and len(sub) != N:
            problems.append(f"sub-sample {k}: size {len(sub)} != {N}")
        if last and not 1 <= len(sub) <= N:
            problems.append(f"last sub-sample: size {len(sub)} outside [1, {N}]")
    if not seen.all():
        problems.append(f"{int((~seen).sum())} points not covered")
    if len(sset.subsamples) != math.ceil(n / N):
        problems.append(f"count {len(sset.subsamples)} != ceil({n}/{N})")
    return problems
