"""k-NN label voting in feature space: a small stand-in segmentation backend.

Neighbours are ranked by squared Euclidean distance over the full feature row;
equal distances are ordered by class id, which makes the vote independent of
training-row order. Feature widths up to 16 are searched with a KD-tree over
the whole row, wider ones by linear scan. Both are exact.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit, prange

from . import kdtree
from .core import FeatureSchema
from .features import FeatureMatrix
from .kdtree import _knn_one, _sift_down, _worse

TREE_MAX_WIDTH = 16
MODEL_MAGIC = b"KDSM"
MODEL_VERSION = 1
MODEL_HEADER = struct.Struct("<4sHIIHH")  # magic, version, k_vote, rows, width, schema bytes


class SchemaMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KnnModel:
    rows: np.ndarray  # float64 (m, width)
    labels: np.ndarray  # int64 (m,)
    k_vote: int
    schema: FeatureSchema
    tree: kdtree.KdTree | None = None

    def __len__(self):
        return int(self.rows.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


def fit(matrices: Sequence[FeatureMatrix], labels: Sequence, k_vote: int = 5) -> KnnModel:
    if k_vote < 1:
        raise ValueError("k_vote must be >= 1")
    if len(matrices) == 0 or len(matrices) != len(labels):
        raise ValueError("need one label array per feature matrix")
    schema = matrices[0].schema
    for m in matrices[1:]:
        if m.schema != schema:
            raise SchemaMismatchError(
                f"schema mismatch: {schema} (width {schema.total_width}) vs {m.schema} (width {m.width})"
            )
    rows = np.ascontiguousarray(np.concatenate([m.values for m in matrices]), dtype=np.float64)
    labs = np.concatenate([np.asarray(l, dtype=np.int64).ravel() for l in labels])
    if len(labs) != len(rows):
        raise ValueError(f"{len(labs)} labels for {len(rows)} rows")
    if len(rows) < k_vote:
        raise ValueError(f"need at least k_vote={k_vote} training rows, got {len(rows)}")
    if labs.min() < 0:
        raise ValueError("negative class id in training labels")
    return _with_tree(KnnModel(rows, labs, int(k_vote), schema))


def _with_tree(model: KnnModel) -> KnnModel:
    if model.schema.total_width > TREE_MAX_WIDTH:
        return model
    tree = kdtree.build(model.rows, dim=model.schema.total_width)
    return KnnModel(model.rows, model.labels, model.k_vote, model.schema, tree)


@njit(cache=True)
def _push(hd, hl, size, k, d, lab):
    # bounded max-heap on (distance, label); returns new size
    if size < k:
        pos = size
        hd[pos] = d
        hl[pos] = lab
        size += 1
        while pos > 0:
            par = (pos - 1) // 2
            if _worse(hd[pos], hl[pos], hd[par], hl[par]):
                hd[pos], hd[par] = hd[par], hd[pos]
                hl[pos], hl[par] = hl[par], hl[pos]
                pos = par
            else:
                break
    elif _worse(hd[0], hl[0], d, lab):
        hd[0] = d
        hl[0] = lab
        _sift_down(hd, hl, size, 0)
    return size


@njit(cache=True, inline="always")
def _full_dist(rows, j, q):
    d = 0.0
    for c in range(rows.shape[1]):
        g = rows[j, c] - q[c]
        d += g * g
    return d


@njit(cache=True)
def _vote(hl, size, n_classes):
    counts = np.zeros(n_classes, np.int64)
    for i in range(size):
        counts[hl[i]] += 1
    best = 0
    for c in range(1, n_classes):
        if counts[c] > counts[best]:
            best = c
    return best


@njit(cache=True, parallel=True)
def _predict_scan(rows, labels, queries, k, n_classes, out):
    for r in prange(queries.shape[0]):
        hd = np.empty(k, np.float64)
        hl = np.empty(k, np.int64)
        size = 0
        for j in range(rows.shape[0]):
            size = _push(hd, hl, size, k, _full_dist(rows, j, queries[r]), labels[j])
        out[r] = _vote(hl, size, n_classes)


@njit(cache=True, parallel=True)
def _predict_tree(pts, order, start, end, left, right, lo, hi,
                  labels, queries, k, n_classes, out):
    m = pts.shape[0]
    for r in prange(queries.shape[0]):
        q = queries[r]
        kk = min(m, k + 1)
        hd = np.empty(k, np.float64)
        hl = np.empty(k, np.int64)
        while True:
            ci = np.empty(kk, np.int64)
            cd = np.empty(kk, np.float64)
            _knn_one(pts, order, start, end, left, right, lo, hi, q, kk, ci, cd)
            # every row tied with the k-th distance must be in hand before voting
            if kk == m or cd[kk - 1] > cd[k - 1]:
                break
            kk = min(m, 2 * kk)
        size = 0
        for t in range(kk):
            size = _push(hd, hl, size, k, cd[t], labels[ci[t]])
        out[r] = _vote(hl, size, n_classes)


def predict(model: KnnModel, matrix: FeatureMatrix) -> np.ndarray:
    """Majority label among the ``k_vote`` nearest training rows; ties go to the smaller id."""
    if matrix.schema != model.schema:
        raise SchemaMismatchError(f"schema mismatch: model {model.schema}, input {matrix.schema}")
    q = np.ascontiguousarray(matrix.values, dtype=np.float64)
    out = np.empty(len(q), np.int64)
    if len(q) == 0:
        return out
    k = min(model.k_vote, len(model))
    if model.tree is not None:
        t = model.tree
        _predict_tree(t.points, t.order, t.start, t.end, t.left, t.right, t.lo, t.hi,
                      model.labels, q, k, model.num_classes, out)
    else:
        _predict_scan(model.rows, model.labels, q, k, model.num_classes, out)
    return out


def save_model(model: KnnModel, path) -> None:
    """Flat file: header, schema text, float64 rows, int32 labels (little-endian)."""
    schema = str(model.schema).encode("ascii")
    header = MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.k_vote, len(model),
                               model.schema.total_width, len(schema))
    Path(path).write_bytes(header + schema + model.rows.astype("<f8").tobytes()
                           + model.labels.astype("<i4").tobytes())


def load_model(path) -> KnnModel:
    data = Path(path).read_bytes()
    if len(data) < MODEL_HEADER.size:
        raise ValueError("model file too short")
    magic, version, k_vote, n, width, slen = MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise ValueError(f"not a kdss model file (magic {magic!r}, version {version})")
    off = MODEL_HEADER.size
    schema = FeatureSchema.parse(data[off:off + slen].decode("ascii"))
    off += slen
    if schema.total_width != width:
        raise ValueError("model schema does not match its width")
    if len(data) != off + n * width * 8 + n * 4:
        raise ValueError("model file length does not match its header")
    rows = np.frombuffer(data, "<f8", n * width, off).reshape(n, width).astype(np.float64)
    off += n * width * 8
    labels = np.frombuffer(data, "<i4", n, off).astype(np.int64)
    return _with_tree(KnnModel(rows, labels, int(k_vote), schema))
