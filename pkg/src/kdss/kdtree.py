"""Exact k-nearest-neighbour search over 3D points.

Coordinates are 3D for point clouds; the compiled core works for any width.
The tree splits each node at the median of its widest axis and keeps a tight
bounding box per node for pruning. All distances are squared Euclidean, summed
as ``dx*dx + dy*dy + dz*dz`` in float64 both here and in
:func:`brute_force_knn`, so the two agree bit for bit. Equal distances are
ordered by the smaller point index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from numba import njit, prange

DEFAULT_LEAF_SIZE = 32


@dataclass(frozen=True, eq=False)
class KdTree:
    order: np.ndarray  # point ids in tree order
    points: np.ndarray  # coordinates in tree order, float64 (m, 3)
    start: np.ndarray
    end: np.ndarray
    left: np.ndarray  # -1 for leaves
    right: np.ndarray
    axis: np.ndarray
    split: np.ndarray
    lo: np.ndarray  # per-node bounding box
    hi: np.ndarray
    leaf_size: int

    def __len__(self) -> int:
        return int(self.order.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.start.shape[0])

    def leaves(self) -> Iterator[np.ndarray]:
        for node in range(self.n_nodes):
            if self.left[node] < 0:
                yield self.order[self.start[node]:self.end[node]]

    def indexed(self) -> np.ndarray:
        return np.sort(self.order)


@njit(cache=True)
def _select(pts, order, s, e, kth, ax):
    # three-way quickselect: afterwards pts[s:kth] <= pts[kth] <= pts[kth+1:e] on ax
    lo, hi = s, e
    while hi - lo > 1:
        a, b, c = pts[lo, ax], pts[(lo + hi - 1) // 2, ax], pts[hi - 1, ax]
        pivot = max(min(a, b), min(max(a, b), c))
        lt, i, gt = lo, lo, hi
        while i < gt:
            v = pts[i, ax]
            if v < pivot:
                for d in range(pts.shape[1]):
                    pts[lt, d], pts[i, d] = pts[i, d], pts[lt, d]
                order[lt], order[i] = order[i], order[lt]
                lt += 1
                i += 1
            elif v > pivot:
                gt -= 1
                for d in range(pts.shape[1]):
                    pts[gt, d], pts[i, d] = pts[i, d], pts[gt, d]
                order[gt], order[i] = order[i], order[gt]
            else:
                i += 1
        if kth < lt:
            hi = lt
        elif kth >= gt:
            lo = gt
        else:
            return


@njit(cache=True)
def _build(pts, order, leaf_size):
    m, dim = pts.shape
    # children hold >= (leaf_size + 1) // 2 points, which bounds the leaf count
    cap = 2 * (m // max(1, (leaf_size + 1) // 2)) + 8
    start = np.empty(cap, np.int64)
    end = np.empty(cap, np.int64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    axis = np.full(cap, -1, np.int64)
    split = np.zeros(cap, np.float64)
    lo = np.empty((cap, dim), np.float64)
    hi = np.empty((cap, dim), np.float64)

    n_nodes = 1
    start[0] = 0
    end[0] = m
    stack = np.empty(cap, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s, e = start[node], end[node]
        for d in range(dim):
            lo[node, d] = pts[s, d]
            hi[node, d] = pts[s, d]
        for j in range(s + 1, e):
            for d in range(dim):
                v = pts[j, d]
                if v < lo[node, d]:
                    lo[node, d] = v
                elif v > hi[node, d]:
                    hi[node, d] = v
        if e - s <= leaf_size:
            continue
        ax = 0
        spread = hi[node, 0] - lo[node, 0]
        for d in range(1, dim):
            if hi[node, d] - lo[node, d] > spread:
                spread = hi[node, d] - lo[node, d]
                ax = d
        mid = (s + e) // 2
        _select(pts, order, s, e, mid, ax)
        axis[node] = ax
        split[node] = pts[mid, ax]
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        start[l], end[l] = s, mid
        start[r], end[r] = mid, e
        left[node], right[node] = l, r
        stack[top] = l
        stack[top + 1] = r
        top += 2
    return (start[:n_nodes].copy(), end[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), axis[:n_nodes].copy(), split[:n_nodes].copy(),
            lo[:n_nodes].copy(), hi[:n_nodes].copy())


@njit(cache=True, inline="always")
def _box_dist(lo, hi, node, q):
    d = 0.0
    for ax in range(q.shape[0]):
        qv = q[ax]
        if qv < lo[node, ax]:
            g = lo[node, ax] - qv
            d += g * g
        elif qv > hi[node, ax]:
            g = qv - hi[node, ax]
            d += g * g
    return d


@njit(cache=True, inline="always")
def _worse(d1, i1, d2, i2):
    return d1 > d2 or (d1 == d2 and i1 > i2)


@njit(cache=True)
def _sift_down(hd, hi_, size, pos):
    while True:
        l = 2 * pos + 1
        if l >= size:
            return
        big = l
        r = l + 1
        if r < size and _worse(hd[r], hi_[r], hd[l], hi_[l]):
            big = r
        if _worse(hd[big], hi_[big], hd[pos], hi_[pos]):
            hd[pos], hd[big] = hd[big], hd[pos]
            hi_[pos], hi_[big] = hi_[big], hi_[pos]
            pos = big
        else:
            return


@njit(cache=True)
def _knn_one(pts, order, start, end, left, right, lo, hi, q, k, out_i, out_d):
    hd = np.empty(k, np.float64)
    hidx = np.empty(k, np.int64)
    size = 0
    st_node = np.empty(512, np.int64)
    st_dist = np.empty(512, np.float64)
    st_node[0] = 0
    st_dist[0] = _box_dist(lo, hi, 0, q)
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        # equal distance is still explored: it may hold a smaller index
        if size == k and st_dist[top] > hd[0]:
            continue
        if left[node] < 0:
            for j in range(start[node], end[node]):
                d = 0.0
                for c in range(q.shape[0]):
                    g = pts[j, c] - q[c]
                    d += g * g
                idx = order[j]
                if size < k:
                    # sift up
                    pos = size
                    hd[pos] = d
                    hidx[pos] = idx
                    size += 1
                    while pos > 0:
                        par = (pos - 1) // 2
                        if _worse(hd[pos], hidx[pos], hd[par], hidx[par]):
                            hd[pos], hd[par] = hd[par], hd[pos]
                            hidx[pos], hidx[par] = hidx[par], hidx[pos]
                            pos = par
                        else:
                            break
                elif _worse(hd[0], hidx[0], d, idx):
                    hd[0] = d
                    hidx[0] = idx
                    _sift_down(hd, hidx, size, 0)
            continue
        a, b = left[node], right[node]
        da = _box_dist(lo, hi, a, q)
        db = _box_dist(lo, hi, b, q)
        if da <= db:
            st_node[top], st_dist[top] = b, db
            st_node[top + 1], st_dist[top + 1] = a, da
        else:
            st_node[top], st_dist[top] = a, da
            st_node[top + 1], st_dist[top + 1] = b, db
        top += 2
    # heap sort into ascending (distance, index)
    for last in range(size - 1, -1, -1):
        out_d[last] = hd[0]
        out_i[last] = hidx[0]
        hd[0] = hd[last]
        hidx[0] = hidx[last]
        _sift_down(hd, hidx, last, 0)


@njit(cache=True, parallel=True)
def _knn_many(pts, order, start, end, left, right, lo, hi, queries, k, out_i, out_d):
    for r in prange(queries.shape[0]):
        _knn_one(pts, order, start, end, left, right, lo, hi, queries[r], k, out_i[r], out_d[r])


def _as_points(positions, dim: int = 3) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != dim:
        raise ValueError(f"positions must have shape (n, {dim}), got {pos.shape}")
    return pos


def _subset(n: int, subset) -> np.ndarray:
    if subset is None:
        return np.arange(n, dtype=np.int64)
    idx = np.asarray(subset, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("subset index out of range")
    return idx


def build(positions, subset=None, leaf_size: int = DEFAULT_LEAF_SIZE, dim: int = 3) -> KdTree:
    """Index ``positions[subset]`` (all points when ``subset`` is None).

    ``dim`` other than 3 serves feature-space search in the baseline backend.
    """
    pos = _as_points(positions, dim)
    if leaf_size < 1:
        raise ValueError("leaf_size must be positive")
    order = _subset(len(pos), subset).copy()
    if order.size == 0:
        raise ValueError("empty index set")
    pts = np.ascontiguousarray(pos[order])
    arrays = _build(pts, order, leaf_size)
    tree = KdTree(order, pts, *arrays, leaf_size=leaf_size)
    for a in (tree.order, tree.points, *arrays):
        a.setflags(write=False)
    return tree


def _check_k(k: int, population: int):
    if k < 1:
        raise ValueError("k must be positive")
    if k > population:
        raise ValueError(f"k exceeds population ({k} > {population})")


def knn(tree: KdTree, query, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(indices, squared_distances)`` of the k nearest indexed points.

    Results are sorted by distance, then by point index.
    """
    _check_k(k, len(tree))
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape != (tree.points.shape[1],):
        raise ValueError(f"query must have {tree.points.shape[1]} coordinates")
    out_i = np.empty(k, np.int64)
    out_d = np.empty(k, np.float64)
    _knn_one(tree.points, tree.order, tree.start, tree.end, tree.left, tree.right,
             tree.lo, tree.hi, q, k, out_i, out_d)
    return out_i, out_d


def knn_many(tree: KdTree, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`knn`; returns arrays of shape (len(queries), k)."""
    _check_k(k, len(tree))
    qs = np.ascontiguousarray(_as_points(queries, tree.points.shape[1]))
    out_i = np.empty((len(qs), k), np.int64)
    out_d = np.empty((len(qs), k), np.float64)
    _knn_many(tree.points, tree.order, tree.start, tree.end, tree.left, tree.right,
              tree.lo, tree.hi, qs, k, out_i, out_d)
    return out_i, out_d


def brute_force_knn(positions, subset, query, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear-scan reference for :func:`knn` with the same tie rule."""
    pos = _as_points(positions)
    idx = _subset(len(pos), subset)
    if idx.size == 0:
        raise ValueError("empty index set")
    _check_k(k, idx.size)
    q = np.asarray(query, dtype=np.float64).ravel()
    p = pos[idx]
    dx = p[:, 0] - q[0]
    dy = p[:, 1] - q[1]
    dz = p[:, 2] - q[2]
    d = dx * dx + dy * dy + dz * dz
    pick = np.lexsort((idx, d))[:k]
    return idx[pick], d[pick]
