"""Sub-sampling manifests: bind a parent cloud, KD-SS parameters and batch files.

The manifest is indented JSON with sorted keys so that equal runs give equal
bytes. Point indices of every sub-sample live in a sidecar ``indices.bin``
(int64 little-endian, sub-samples concatenated in ordinal order).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..core import FeatureSchema, PointCloud, SubSample, SubSampleSet
from ..features import COLOR_SCALE, NORMALIZATION, FeatureMatrix, assemble
from ..sampling import RNG_ALGORITHM, expected_sizes
from .batch import BatchFile, read_batch, write_batch
from .digest import file_digest

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
INDEX_NAME = "indices.bin"


class ManifestError(ValueError):
    pass


class StaleManifestError(ManifestError):
    pass


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class SubSampleEntry:
    ordinal: int
    size: int
    center_index: int
    batch: str


@dataclass(frozen=True)
class Manifest:
    parent_file: str  # relative to the manifest's directory
    parent_digest: str
    parent_size: int
    n_per_sample: int
    seed: int
    rebuild_policy: str
    center_strategy: str
    schema: tuple[str, ...]
    subsamples: tuple[SubSampleEntry, ...]
    class_names: Optional[tuple[str, ...]] = None
    index_file: str = INDEX_NAME
    index_digest: str = ""
    format_version: int = FORMAT_VERSION
    digest_algorithm: str = "fnv1a-64"
    rng: str = RNG_ALGORITHM
    normalization: str = NORMALIZATION
    color_scale: float = COLOR_SCALE
    path: Optional[Path] = field(default=None, compare=False)

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.subsamples]

    @property
    def feature_schema(self) -> FeatureSchema:
        return FeatureSchema(self.schema)

    @property
    def directory(self) -> Path:
        return self.path.parent if self.path is not None else Path(".")

    @property
    def parent_path(self) -> Path:
        return self.directory / self.parent_file

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("path")
        d["schema"] = list(self.schema)
        d["class_names"] = None if self.class_names is None else list(self.class_names)
        d["subsamples"] = [asdict(s) for s in self.subsamples]
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, path=None) -> "Manifest":
        try:
            d = json.loads(text)
            if d.get("format_version") != FORMAT_VERSION:
                raise ManifestError(f"unsupported manifest version {d.get('format_version')}")
            d["schema"] = tuple(d["schema"])
            if d.get("class_names") is not None:
                d["class_names"] = tuple(d["class_names"])
            d["subsamples"] = tuple(SubSampleEntry(**s) for s in d["subsamples"])
            m = cls(**d, path=Path(path) if path is not None else None)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        if m.sizes != expected_sizes(m.parent_size, m.n_per_sample):
            raise ManifestError("sub-sample sizes break the size law")
        return m


def read_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return Manifest.from_json(path.read_text(), path)


def batch_name(ordinal: int) -> str:
    return f"batch_{ordinal:05d}.bin"


def write_batches(cloud: PointCloud, sset: SubSampleSet, out_dir, parent_path,
                  schema: Optional[FeatureSchema] = None) -> Manifest:
    """Write one batch per sub-sample, the index sidecar, then the manifest."""
    schema = schema or sset.schema
    if schema is None:
        raise ValueError("no feature schema given")
    if sset.parent_size != len(cloud):
        raise ValueError(f"sub-samples cover {sset.parent_size} points, cloud has {len(cloud)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for sub in sset:
        fm = assemble(cloud, sub, schema)
        labels = None if cloud.labels is None else cloud.labels[sub.indices]
        write_batch(out / batch_name(sub.ordinal), BatchFile(sub.ordinal, fm.values, labels))
        entries.append(SubSampleEntry(sub.ordinal, len(sub), sub.center_index, batch_name(sub.ordinal)))
    index_bytes = np.concatenate([s.indices for s in sset]).astype("<i8").tobytes()
    (out / INDEX_NAME).write_bytes(index_bytes)
    manifest = Manifest(
        parent_file=Path(os.path.relpath(Path(parent_path).resolve(), out.resolve())).as_posix(),
        parent_digest=file_digest(parent_path),
        parent_size=len(cloud),
        n_per_sample=sset.n_per_sample,
        seed=sset.seed,
        rebuild_policy=sset.rebuild_policy,
        center_strategy=sset.center_strategy,
        schema=schema.channels,
        subsamples=tuple(entries),
        class_names=None if cloud.class_map is None else cloud.class_map.names,
        index_digest=file_digest(out / INDEX_NAME),
        path=out / MANIFEST_NAME,
    )
    (out / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def verify_parent(manifest: Manifest) -> None:
    if not manifest.parent_path.exists():
        raise StaleManifestError(f"parent cloud {manifest.parent_path} is missing")
    if file_digest(manifest.parent_path) != manifest.parent_digest:
        raise StaleManifestError(f"stale manifest: {manifest.parent_path} changed since sub-sampling")


def load_subsample_set(manifest: Manifest) -> SubSampleSet:
    path = manifest.directory / manifest.index_file
    if not path.exists():
        raise ManifestError(f"index file {path} missing")
    if manifest.index_digest and file_digest(path) != manifest.index_digest:
        raise ManifestError(f"index file {path} does not match the manifest")
    flat = np.frombuffer(path.read_bytes(), "<i8").astype(np.int64)
    if len(flat) != manifest.parent_size:
        raise ManifestError(f"index file holds {len(flat)} indices, expected {manifest.parent_size}")
    subs, pos = [], 0
    for e in manifest.subsamples:
        subs.append(SubSample(manifest.parent_size, flat[pos:pos + e.size], e.center_index, e.ordinal))
        pos += e.size
    return SubSampleSet(tuple(subs), manifest.n_per_sample, manifest.seed,
                        schema=manifest.feature_schema,
                        rebuild_policy=manifest.rebuild_policy,
                        center_strategy=manifest.center_strategy)


def read_batches(manifest_path, verify_digest: bool = True):
    """Return ``(SubSampleSet, feature matrices, labels or None)`` exactly as written."""
    manifest = read_manifest(manifest_path)
    if verify_digest:
        verify_parent(manifest)
    sset = load_subsample_set(manifest)
    schema = manifest.feature_schema
    matrices, labels = [], []
    for e in manifest.subsamples:
        path = manifest.directory / e.batch
        if not path.exists():
            raise ManifestError(f"batch file for ordinal {e.ordinal} missing: {path}")
        b = read_batch(path)
        if b.ordinal != e.ordinal or b.rows != e.size or b.width != schema.total_width:
            raise ManifestError(f"batch file for ordinal {e.ordinal} does not match the manifest")
        matrices.append(FeatureMatrix(b.features, schema))
        labels.append(b.labels)
    if any(l is None for l in labels):
        labels = None
    return sset, matrices, labels


def read_predictions(pred_dir, manifest: Manifest) -> list[np.ndarray]:
    """Collect backend predictions, one int array per sub-sample, ready for merge."""
    pred_dir = Path(pred_dir)
    n_classes = None if manifest.class_names is None else len(manifest.class_names)
    out = []
    for e in manifest.subsamples:
        path = pred_dir / e.batch
        if not path.exists():
            raise PredictionError(f"missing predictions for ordinal {e.ordinal}")
        b = read_batch(path)
        if b.predictions is None:
            raise PredictionError(f"missing predictions for ordinal {e.ordinal}: batch has none")
        if b.ordinal != e.ordinal:
            raise PredictionError(f"{path.name}: holds ordinal {b.ordinal}, expected {e.ordinal}")
        if b.rows != e.size:
            raise PredictionError(f"ordinal {e.ordinal}: {b.rows} predictions for {e.size} points")
        p = b.predictions.astype(np.int64)
        if p.size and (p.min() < 0 or (n_classes is not None and p.max() >= n_classes)):
            raise PredictionError(
                f"ordinal {e.ordinal}: prediction id outside [0, {n_classes}) for classes {manifest.class_names}"
            )
        out.append(p)
    return out


def write_predictions(pred_dir, manifest: Manifest, predictions: Sequence) -> None:
    """Write prediction-bearing copies of the manifest's batches into ``pred_dir``."""
    pred_dir = Path(pred_dir)
    pred_dir.mkdir(parents=True, exist_ok=True)
    for e, p in zip(manifest.subsamples, predictions, strict=True):
        b = read_batch(manifest.directory / e.batch)
        write_batch(pred_dir / e.batch, b.with_predictions(p))
