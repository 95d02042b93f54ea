"""Flat binary batch files: the hand-off format to segmentation backends.

Layout, all little-endian::

    magic      4 bytes  b"KDSS"
    version    u16
    ordinal    u32
    rows       u32
    width      u16
    has_labels u8
    has_preds  u8
    features   rows * width float32, row-major
    labels     rows int32            (if has_labels)
    preds      rows int32            (if has_preds)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"KDSS"
VERSION = 1
HEADER = struct.Struct("<4sHIIHBB")


class BatchFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BatchFile:
    ordinal: int
    features: np.ndarray  # float32 (rows, width)
    labels: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype="<f4")
        if f.ndim != 2:
            raise ValueError("features must be 2-D")
        object.__setattr__(self, "features", f)
        for name in ("labels", "predictions"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype="<i4").ravel()
                if len(v) != len(f):
                    raise ValueError(f"{name}: {len(v)} values for {len(f)} rows")
                object.__setattr__(self, name, v)

    @property
    def rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    def with_predictions(self, predictions) -> "BatchFile":
        return replace(self, predictions=predictions)

    def to_bytes(self) -> bytes:
        parts = [
            HEADER.pack(MAGIC, VERSION, self.ordinal, self.rows, self.width,
                        self.labels is not None, self.predictions is not None),
            self.features.tobytes(),
        ]
        if self.labels is not None:
            parts.append(self.labels.tobytes())
        if self.predictions is not None:
            parts.append(self.predictions.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BatchFile":
        if len(data) < HEADER.size:
            raise BatchFormatError(f"batch shorter than its {HEADER.size}-byte header")
        magic, version, ordinal, rows, width, has_labels, has_preds = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BatchFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BatchFormatError(f"unsupported batch version {version}")
        if has_labels > 1 or has_preds > 1:
            raise BatchFormatError("flag bytes must be 0 or 1")
        expected = HEADER.size + 4 * rows * (width + has_labels + has_preds)
        if len(data) != expected:
            raise BatchFormatError(f"batch {ordinal}: {len(data)} bytes, header implies {expected}")
        off = HEADER.size
        feats = np.frombuffer(data, "<f4", rows * width, off).reshape(rows, width)
        off += 4 * rows * width
        labels = preds = None
        if has_labels:
            labels = np.frombuffer(data, "<i4", rows, off)
            off += 4 * rows
        if has_preds:
            preds = np.frombuffer(data, "<i4", rows, off)
        return cls(int(ordinal), feats, labels, preds)


def write_batch(path, batch: BatchFile) -> None:
    Path(path).write_bytes(batch.to_bytes())


def read_batch(path) -> BatchFile:
    return BatchFile.from_bytes(Path(path).read_bytes())
