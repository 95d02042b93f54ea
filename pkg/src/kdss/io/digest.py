"""64-bit FNV-1a over raw file bytes."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from numba import njit

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@njit(cache=True)
def _fnv1a(data, h):
    prime = np.uint64(FNV_PRIME)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def fnv1a_64(data: bytes) -> int:
    buf = np.frombuffer(data, dtype=np.uint8)
    return int(_fnv1a(buf, np.uint64(FNV_OFFSET)))


def file_digest(path) -> str:
    """Hex digest of a file, read in chunks."""
    h = np.uint64(FNV_OFFSET)
    with open(Path(path), "rb") as fh:
        while chunk := fh.read(1 << 22):
            h = _fnv1a(np.frombuffer(chunk, dtype=np.uint8), h)
    return f"{int(h):016x}"
