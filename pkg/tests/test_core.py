import numpy as np
import pytest
from hypothesis import given, strategies as st

from kdss.core import (
    ClassMap, FeatureSchema, PointCloud, SubSample, SubSampleSet, check_partition, validate_cloud,
)


def test_consistent_cloud_is_valid():
    c = PointCloud(np.zeros((3, 3)), colors=[[1, 2, 3]] * 3)
    assert validate_cloud(c) == []


def test_color_length_mismatch():
    c = PointCloud(np.zeros((3, 3)), colors=[[1, 2, 3]] * 2)
    report = validate_cloud(c)
    assert len(report) == 1
    assert report[0].channel == "colors"
    assert "colors length mismatch" in report[0].message


def test_label_out_of_class_map_names_point():
    c = PointCloud(np.zeros((4, 3)), labels=[0, 1, 5, 2], class_map=ClassMap(("a", "b", "c")))
    report = validate_cloud(c)
    assert [(v.channel, v.index) for v in report] == [("labels", 2)]
    assert "5" in report[0].message


def test_unnormalized_normals_flag():
    normals = np.array([[0, 0, 2.0], [1, 0, 0]])
    bad = PointCloud(np.zeros((2, 3)), normals=normals)
    assert [v.index for v in validate_cloud(bad)] == [0]
    flagged = PointCloud(np.zeros((2, 3)), normals=normals, normals_unnormalized=True)
    assert validate_cloud(flagged) == []


def test_cloud_arrays_are_read_only():
    c = PointCloud(np.zeros((2, 3)), labels=[0, 1])
    with pytest.raises(ValueError):
        c.positions[0, 0] = 1.0
    with pytest.raises(ValueError):
        c.labels[0] = 3


def test_class_map_invariants():
    with pytest.raises(ValueError):
        ClassMap(())
    with pytest.raises(ValueError):
        ClassMap(("a", "a"))
    with pytest.raises(ValueError):
        ClassMap(("a", ""))
    assert ClassMap(("stem", "leaf", "panicle")).id_of("leaf") == 1


def test_schema_widths():
    assert FeatureSchema(("position", "intensity", "normalized_position")).total_width == 7
    assert FeatureSchema(("position", "color", "normal")).total_width == 9
    assert FeatureSchema.parse("position, color").channels == ("position", "color")
    with pytest.raises(ValueError):
        FeatureSchema(("position", "position"))
    with pytest.raises(ValueError):
        FeatureSchema(("rgb",))


CORRUPTIONS = ["colors_short", "normals_long", "label_high", "label_negative",
               "color_range", "normal_length", "nan_position", "pred_high"]


@given(
    n=st.integers(2, 40),
    corruptions=st.sets(st.sampled_from(CORRUPTIONS)),
    seed=st.integers(0, 2**32 - 1),
)
def test_validate_empty_iff_no_corruption(n, corruptions, seed):
    rng = np.random.default_rng(seed)
    pos = rng.random((n, 3))
    colors = rng.integers(0, 256, (n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    labels = rng.integers(0, 3, n)
    pred = rng.integers(0, 3, n)
    i = int(rng.integers(n))
    if "colors_short" in corruptions:
        colors = colors[:-1]
    if "normals_long" in corruptions:
        normals = np.vstack([normals, normals[:1]])
    if "label_high" in corruptions:
        labels[i] = 3
    if "label_negative" in corruptions:
        labels[(i + 1) % n] = -1
    if "color_range" in corruptions and "colors_short" not in corruptions:
        colors[i, 0] = 300
    if "normal_length" in corruptions and "normals_long" not in corruptions:
        normals[i] *= 1.1
    if "nan_position" in corruptions:
        pos[i, 1] = np.nan
    if "pred_high" in corruptions:
        pred[i] = 7
    c = PointCloud(pos, colors=colors, normals=normals, labels=labels, predicted=pred,
                   class_map=ClassMap(("a", "b", "c")))
    effective = set(corruptions)
    if "colors_short" in corruptions:
        effective.discard("color_range")
    if "normals_long" in corruptions:
        effective.discard("normal_length")
    assert (validate_cloud(c) == []) == (not effective)


def test_subsample_invariants():
    assert SubSample(5, [0, 1], 1, 0).check() == []
    assert SubSample(5, [0, 0], 0, 0).check()
    assert SubSample(5, [0, 7], 0, 0).check()
    assert SubSample(5, [0, 1], 3, 0).check()


def test_check_partition_catches_overlap_and_gaps():
    good = SubSampleSet((SubSample(5, [0, 1, 2], 0, 0), SubSample(5, [3, 4], 3, 1)), 3, 0)
    assert check_partition(good) == []
    overlap = SubSampleSet((SubSample(5, [0, 1, 2], 0, 0), SubSample(5, [2, 4], 2, 1)), 3, 0)
    assert any("overlap" in p for p in check_partition(overlap))
    assert any("not covered" in p for p in check_partition(overlap))
    short = SubSampleSet((SubSample(5, [0, 1], 0, 0), SubSample(5, [2, 3, 4], 2, 1)), 3, 0)
    assert check_partition(short)
