import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from kdss.core import FeatureSchema, PointCloud, SubSample
from kdss.features import (
    FeatureMatrix, MissingChannelError, assemble, augment_rotate_z, class_weights,
    normalize_coordinates, split,
)


def whole(cloud):
    return SubSample(len(cloud), np.arange(len(cloud)), 0, 0)


def test_two_point_normalization():
    c = PointCloud(np.array([[2.0, 0, 0], [4.0, 0, 0]]))
    assert normalize_coordinates(c, whole(c)).tolist() == [[0, 0, 0], [1, 0, 0]]


def test_single_point_normalization():
    c = PointCloud(np.array([[5.0, -1.0, 3.0]]))
    assert normalize_coordinates(c, whole(c)).tolist() == [[0, 0, 0]]


def test_random_normalization_against_direct_minmax(rng):
    pts = rng.normal(size=(200, 3)) * [1, 10, 100]
    c = PointCloud(pts)
    sub = SubSample(200, rng.choice(200, 50, replace=False), 0, 0)
    sub = SubSample(200, sub.indices, int(sub.indices[0]), 0)
    got = normalize_coordinates(c, sub)
    own = pts[sub.indices]
    for ax in range(3):
        lo, hi = min(own[:, ax]), max(own[:, ax])
        expected = [(v - lo) / (hi - lo) for v in own[:, ax]]
        assert np.allclose(got[:, ax], expected, atol=1e-12)
        assert got[:, ax].min() == 0.0
    assert ((got >= 0) & (got <= 1)).all()


@given(shift=st.floats(-1e3, 1e3), scale=st.floats(1e-2, 1e3), seed=st.integers(0, 2**32 - 1))
def test_normalization_shift_scale_invariant(shift, scale, seed):
    pts = np.random.default_rng(seed).random((30, 3))
    a = normalize_coordinates(PointCloud(pts), SubSample(30, np.arange(30), 0, 0))
    b = normalize_coordinates(PointCloud(pts * scale + shift), SubSample(30, np.arange(30), 0, 0))
    assert np.abs(a - b).max() <= 1e-9


def wheat_like(n, rng):
    return PointCloud(rng.random((n, 3)), intensity=rng.random(n))


def cherry_like(n, rng):
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(rng.random((n, 3)), colors=rng.integers(0, 256, (n, 3)), normals=normals)


def test_wheat_width_7(rng):
    c = wheat_like(20, rng)
    fm = assemble(c, whole(c), FeatureSchema(("position", "intensity", "normalized_position")))
    assert fm.width == 7 and fm.values.shape == (20, 7)


def test_cherry_width_9(rng):
    c = cherry_like(20, rng)
    fm = assemble(c, whole(c), FeatureSchema(("position", "color", "normal")))
    assert fm.width == 9 and fm.values.shape == (20, 9)


def test_missing_channel(rng):
    c = wheat_like(5, rng)
    with pytest.raises(MissingChannelError, match="missing channel: color"):
        assemble(c, whole(c), FeatureSchema(("position", "color")))


def test_assemble_row_order_and_channels(rng):
    c = cherry_like(50, rng)
    sub = SubSample(50, [7, 3, 41, 0], 7, 0)
    fm = assemble(c, sub, FeatureSchema(("color", "position", "normal")))
    for j, i in enumerate(sub.indices):
        assert fm.values[j, 0:3].tolist() == (c.colors[i] / 255.0).tolist()
        assert fm.values[j, 3:6].tolist() == c.positions[i].tolist()
        assert fm.values[j, 6:9].tolist() == c.normals[i].tolist()


def test_rotation_identity_and_half_turn(rng):
    schema = FeatureSchema(("position", "intensity"))
    fm = FeatureMatrix(np.array([[1.0, 0, 0, 0.5]]), schema)
    assert np.array_equal(augment_rotate_z(fm, 0.0).values, fm.values)
    r = augment_rotate_z(fm, math.pi).values
    assert np.allclose(r[0, :3], [-1, 0, 0], atol=1e-9) and r[0, 3] == 0.5


def test_rotation_isometry_and_normal_rotation(rng):
    c = cherry_like(40, rng)
    schema = FeatureSchema(("position", "normal", "normalized_position"))
    fm = assemble(c, whole(c), schema)
    for angle in rng.uniform(-10, 10, 5):
        r = augment_rotate_z(fm, angle)
        p0, p1 = fm.channel("position"), r.channel("position")
        d0 = np.linalg.norm(p0[:, None] - p0[None], axis=-1)
        d1 = np.linalg.norm(p1[:, None] - p1[None], axis=-1)
        assert np.abs(d0 - d1).max() <= 1e-9
        assert np.allclose(np.linalg.norm(r.channel("normal"), axis=1), 1.0)
        assert np.allclose(r.channel("position")[:, 2], p0[:, 2])
        n = r.channel("normalized_position")
        assert n.min() >= 0 and n.max() <= 1 and np.allclose(n.min(axis=0), 0)


def exact_weights(counts):
    inv = [Fraction(1, c) if c else Fraction(0) for c in counts]
    return [float(w / sum(inv)) for w in inv]


@pytest.mark.parametrize("counts,expected", [
    ([50, 50], [0.5, 0.5]),
    ([90, 10], [0.1, 0.9]),
    ([10, 0, 10], [0.5, 0.0, 0.5]),
])
def test_class_weights_examples(counts, expected):
    labels = np.repeat(np.arange(len(counts)), counts)
    w = class_weights(labels, len(counts)).weights
    assert exact_weights(counts) == pytest.approx(expected, abs=1e-15)
    assert np.allclose(w, expected, atol=1e-12)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=8).filter(any), st.integers(1, 20))
def test_class_weights_sum_and_scale(counts, factor):
    labels = np.repeat(np.arange(len(counts)), counts)
    w = class_weights(labels, len(counts)).weights
    assert abs(w.sum() - 1) <= 1e-9
    w2 = class_weights(np.repeat(np.arange(len(counts)), [c * factor for c in counts]), len(counts)).weights
    assert np.allclose(w, w2, atol=1e-12)
    assert np.allclose(w, exact_weights(counts), atol=1e-12)


def test_class_weights_errors():
    with pytest.raises(ValueError):
        class_weights([], 2)
    with pytest.raises(ValueError):
        class_weights([0, 2], 2)


def test_split_ninety_ten():
    s = split([f"plot{i}" for i in range(10)], {"train": 0.9, "val": 0.1}, seed=4)
    assert s.counts() == {"train": 9, "val": 1, "test": 0}


def test_split_single_unit():
    assert split(["a"], {"train": 1.0}, seed=0).tags == {"a": "train"}


def test_split_deterministic():
    units = list(range(100))
    a = split(units, {"train": 0.7, "val": 0.2}, seed=8)
    b = split(units, {"train": 0.7, "val": 0.2}, seed=8)
    assert a.tags == b.tags
    assert a.counts() == {"train": 70, "val": 20, "test": 10}


def test_split_too_few_units():
    with pytest.raises(ValueError):
        split(["a"], {"train": 0.9, "val": 0.1}, seed=0)


@given(n=st.integers(3, 200), train=st.floats(0.05, 0.9), val=st.floats(0.01, 0.09),
       seed=st.integers(0, 2**32 - 1))
def test_split_size_law(n, train, val, seed):
    test = 1 - train - val
    assume(val * n >= 1 and (test * n >= 1 or test < 1e-9))
    s = split(list(range(n)), {"train": train, "val": val}, seed)
    c = s.counts()
    assert sum(c.values()) == n
    assert abs(c["train"] - train * n) <= 1 + 1e-9
    assert abs(c["val"] - val * n) <= 1 + 1e-9


def test_split_small_share_still_gets_a_unit():
    c = split(["a", "b", "c"], {"train": 0.75, "val": 0.0625}, seed=1).counts()
    assert c == {"train": 1, "val": 1, "test": 1}
