"""KD-SS partitioning and the inverse merge of per-sub-sample predictions.

A cloud of size |D| is cut into ceil(|D| / N) sub-samples. Every full
sub-sample is the N nearest un-sampled points around a random center; the
points left once at most N remain form the last sub-sample. Nothing is dropped
or duplicated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from . import kdtree
from .core import PointCloud, SubSample, SubSampleSet, check_partition

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy-pcg64"
CENTER_STRATEGIES = ("uniform_random",)
REBUILD_POLICIES = ("on_first_overlap", "always_rebuild")


@dataclass(frozen=True)
class KdssConfig:
    n_per_sample: int
    seed: int = 0
    center_strategy: str = "uniform_random"
    rebuild_policy: str = "on_first_overlap"
    leaf_size: int = kdtree.DEFAULT_LEAF_SIZE

    def __post_init__(self):
        if int(self.n_per_sample) < 1:
            raise ValueError("n_per_sample must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.center_strategy not in CENTER_STRATEGIES:
            raise ValueError(f"unknown center strategy {self.center_strategy!r}")
        if self.rebuild_policy not in REBUILD_POLICIES:
            raise ValueError(f"unknown rebuild policy {self.rebuild_policy!r}")


@dataclass(frozen=True, eq=False)
class MergeResult:
    predicted: np.ndarray
    coverage_count: np.ndarray


class MergeError(ValueError):
    pass


def subsample(cloud: PointCloud, config: KdssConfig) -> SubSampleSet:
    """Partition ``cloud`` into KD-SS sub-samples.

    Under ``on_first_overlap`` one tree serves many draws: a draw whose
    neighbours touch a point taken since the last build is thrown away and
    the tree is rebuilt over whatever is left. ``always_rebuild`` rebuilds
    before every draw.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("empty cloud")
    N = int(config.n_per_sample)
    rng = np.random.Generator(np.random.PCG64(int(config.seed)))
    positions = np.asarray(cloud.positions, dtype=np.float64)
    taken = np.zeros(n, dtype=bool)
    free = _fenwick_ones(n)
    remaining = n
    subs: list[SubSample] = []
    rebuilds = 0

    while remaining > N:
        tree = kdtree.build(positions, np.flatnonzero(~taken), leaf_size=config.leaf_size)
        rebuilds += 1
        while remaining > N:
            # the k-th un-sampled point in index order, k uniform
            center = int(_fenwick_kth(free, rng.integers(remaining)))
            members, _ = kdtree.knn(tree, positions[center], N)
            members = _keep_center(members, center)
            if taken[members].any():
                break
            taken[members] = True
            _fenwick_remove(free, members)
            remaining -= N
            subs.append(SubSample(n, members, center, len(subs)))
            if config.rebuild_policy == "always_rebuild":
                break

    last = np.flatnonzero(~taken)
    center = int(last[rng.integers(len(last))])
    subs.append(SubSample(n, last, center, len(subs)))
    log.debug("kdss: %d points -> %d sub-samples, %d tree builds", n, len(subs), rebuilds)
    return SubSampleSet(
        tuple(subs),
        n_per_sample=N,
        seed=int(config.seed),
        rebuild_policy=config.rebuild_policy,
        center_strategy=config.center_strategy,
    )


@njit(cache=True)
def _fenwick_ones(n):
    # Fenwick tree over an all-ones mask: node i covers i & -i slots ending at i
    t = np.empty(n + 1, np.int64)
    t[0] = 0
    for i in range(1, n + 1):
        t[i] = i & -i
    return t


@njit(cache=True)
def _fenwick_remove(t, indices):
    n = t.shape[0] - 1
    for idx in indices:
        i = idx + 1
        while i <= n:
            t[i] -= 1
            i += i & -i


@njit(cache=True)
def _fenwick_kth(t, k):
    # 0-based position of the (k+1)-th remaining slot
    n = t.shape[0] - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and t[nxt] <= k:
            pos = nxt
            k -= t[nxt]
        step //= 2
    return pos


def _keep_center(members: np.ndarray, center: int) -> np.ndarray:
    # Only duplicates of the center can push it out of its own neighbour list
    # (they win the index tie-break at distance 0); swap it in for the last one.
    if center in members:
        return members
    return np.concatenate(([center], members[:-1]))


def merge(sset: SubSampleSet, predictions: Sequence[Sequence[int]]) -> MergeResult:
    """Scatter per-sub-sample predictions back to parent point order."""
    if len(predictions) != len(sset):
        raise MergeError(
            f"got predictions for {len(predictions)} sub-samples, expected {len(sset)}"
            + (f"; missing ordinal {len(predictions)}" if len(predictions) < len(sset) else "")
        )
    n = sset.parent_size
    predicted = np.full(n, -1, dtype=np.int64)
    coverage = np.zeros(n, dtype=np.int64)
    preds = []
    for sub, p in zip(sset, predictions):
        p = np.asarray(p, dtype=np.int64).ravel()
        if len(p) != len(sub):
            raise MergeError(
                f"sub-sample {sub.ordinal}: {len(p)} predictions for {len(sub)} points"
            )
        preds.append(p)
    for sub, p in zip(sset, preds):
        predicted[sub.indices] = p
        np.add.at(coverage, sub.indices, 1)
    if not (coverage == 1).all():
        raise MergeError("not a partition")
    return MergeResult(predicted, coverage)


def roundtrip_check(cloud: PointCloud, config: KdssConfig) -> bool:
    """Sub-sample, feed each sub-sample its own true labels, merge, compare."""
    if cloud.labels is None:
        raise ValueError("roundtrip_check needs a labeled cloud")
    sset = subsample(cloud, config)
    merged = merge(sset, [cloud.labels[s.indices] for s in sset])
    return bool(np.array_equal(merged.predicted, cloud.labels))


def expected_sizes(n_points: int, n_per_sample: int) -> list[int]:
    count = math.ceil(n_points / n_per_sample)
    return [n_per_sample] * (count - 1) + [n_points - (count - 1) * n_per_sample]


__all__ = [
    "KdssConfig", "MergeResult", "MergeError", "subsample", "merge",
    "roundtrip_check", "expected_sizes", "check_partition", "RNG_ALGORITHM",
]
