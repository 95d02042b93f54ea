import struct
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import labeled_cloud
from kdss.core import ClassMap, FeatureSchema, PointCloud, SubSample, SubSampleSet
from kdss.io import (
    BatchFile, BatchFormatError, ManifestError, PlyEndianError, PlyHeaderError,
    PlyTruncatedError, PredictionError, StaleManifestError, file_digest, fnv1a_64,
    read_batch, read_batches, read_manifest, read_ply, read_predictions, write_batch,
    write_batches, write_ply, write_predictions,
)
from kdss.sampling import KdssConfig, merge, subsample

FIXTURES = Path(__file__).parent / "fixtures"


def fnv_reference(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@pytest.mark.parametrize("text,expected", [
    (b"", 0xCBF29CE484222325), (b"a", 0xAF63DC4C8601EC8C), (b"foobar", 0x85944171F73967E8),
])
def test_fnv_known_vectors(text, expected):
    assert fnv1a_64(text) == expected


@given(st.binary(max_size=300))
def test_fnv_matches_reference(data):
    assert fnv1a_64(data) == fnv_reference(data)


def test_digest_catches_every_single_byte_change(tmp_path, rng):
    p = tmp_path / "parent.ply"
    write_ply(labeled_cloud(20, rng), p)
    base = p.read_bytes()
    ref = file_digest(p)
    assert ref == f"{fnv_reference(base):016x}"
    for pos in range(len(base)):
        mutated = bytearray(base)
        mutated[pos] ^= 1 + (pos % 255)
        p.write_bytes(bytes(mutated))
        assert file_digest(p) != ref


def test_minimal_ascii_ply(tmp_path):
    p = tmp_path / "tri.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                 "property float z\nend_header\n0 0 0\n1 0 0\n0 1 0.5\n")
    c = read_ply(p)
    assert c.positions.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0.5]]
    assert c.channel_names() == ("position",)


@pytest.mark.parametrize("name,channels,classes", [
    ("color_only.ply", ("position", "color"), None),
    ("color_normals.ply", ("position", "color", "normal"), ("stem", "leaf", "panicle")),
    ("intensity_only.ply", ("position", "intensity"), None),
])
def test_golden_fixtures(tmp_path, name, channels, classes):
    src = FIXTURES / name
    c = read_ply(src)
    features = tuple(ch for ch in c.channel_names() if ch not in ("labels", "predicted"))
    assert features == channels
    assert (c.class_map.names if c.class_map else None) == classes
    out = tmp_path / name
    write_ply(c, out)
    assert out.read_bytes() == src.read_bytes()


def test_golden_color_values():
    c = read_ply(FIXTURES / "color_only.ply")
    assert c.colors.tolist() == [[255, 0, 0], [0, 128, 7], [12, 34, 56]]
    assert c.positions.dtype == np.float32
    assert c.positions[1].tolist() == [1.5, -2.25, 0.125]


def header10(fmt="binary_little_endian"):
    return (f"ply\nformat {fmt} 1.0\nelement vertex 10\nproperty float x\nproperty float y\n"
            "property float z\nend_header\n").encode()


def test_truncated_binary_offset(tmp_path):
    head = header10()
    p = tmp_path / "t.ply"
    p.write_bytes(head + np.zeros(9 * 3, "<f4").tobytes() + b"\x00\x00")
    with pytest.raises(PlyTruncatedError) as err:
        read_ply(p)
    assert err.value.offset == len(head) + 9 * 12


def test_truncated_ascii(tmp_path):
    p = tmp_path / "t.ply"
    p.write_bytes(header10("ascii") + b"0 0 0\n" * 9)
    with pytest.raises(PlyTruncatedError):
        read_ply(p)


def test_big_endian_rejected(tmp_path):
    p = tmp_path / "be.ply"
    p.write_bytes(header10("binary_big_endian") + b"\x00" * 120)
    with pytest.raises(PlyEndianError) as err:
        read_ply(p)
    assert err.value.offset > 0


@pytest.mark.parametrize("text", [
    b"plx\nformat ascii 1.0\nend_header\n",
    b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n",
    b"ply\nformat ascii 1.0\nelement vertex x\nend_header\n",
    b"ply\nformat ascii 1.0\nelement vertex 1\nproperty blob x\nend_header\n",
])
def test_malformed_headers(tmp_path, text):
    p = tmp_path / "m.ply"
    p.write_bytes(text)
    with pytest.raises(PlyHeaderError):
        read_ply(p)


def test_unknown_property_warns(tmp_path):
    p = tmp_path / "u.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                 "property float z\nproperty float curvature\nend_header\n1 2 3 0.5\n")
    with pytest.warns(UserWarning, match="curvature"):
        c = read_ply(p)
    assert c.positions.tolist() == [[1, 2, 3]]


def test_face_elements_skipped(tmp_path):
    p = tmp_path / "f.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                 "property float z\nelement face 1\nproperty list uchar int vertex_indices\n"
                 "end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert len(read_ply(p)) == 3


def full_cloud(n, rng, dtype=np.float64):
    normals = rng.normal(size=(n, 3)).astype(np.float32)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(
        positions=rng.normal(size=(n, 3)).astype(dtype) * 100,
        colors=rng.integers(0, 256, (n, 3)),
        normals=normals,
        intensity=rng.random(n).astype(np.float32),
        labels=rng.integers(0, 4, n),
        predicted=rng.integers(0, 4, n),
        class_map=ClassMap(("a", "b", "c", "d")),
    )


def assert_same_cloud(a, b, tol=0.0):
    for name in ("positions", "colors", "normals", "intensity", "labels", "predicted"):
        x, y = getattr(a, name), getattr(b, name)
        assert (x is None) == (y is None), name
        if x is None:
            continue
        assert x.shape == y.shape, name
        if tol == 0.0:
            assert x.dtype == y.dtype and x.tobytes() == y.tobytes(), name
        else:
            assert np.abs(x.astype(np.float64) - y.astype(np.float64)).max() <= tol * max(1, np.abs(x).max()), name
    assert (a.class_map.names if a.class_map else None) == (b.class_map.names if b.class_map else None)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_binary_roundtrip_bit_exact(tmp_path, rng, dtype):
    c = full_cloud(1000, rng, dtype)
    write_ply(c, tmp_path / "c.ply")
    assert_same_cloud(c, read_ply(tmp_path / "c.ply"))


def test_ascii_roundtrip_within_tolerance(tmp_path, rng):
    c = full_cloud(1000, rng)
    write_ply(c, tmp_path / "c.ply", encoding="ascii")
    back = read_ply(tmp_path / "c.ply")
    assert np.abs(back.positions - c.positions).max() <= 1e-6 * np.abs(c.positions).max()
    assert np.array_equal(back.labels, c.labels) and np.array_equal(back.colors, c.colors)


def test_positions_only_and_pred_property(tmp_path, rng):
    c = PointCloud(rng.random((5, 3)))
    write_ply(c, tmp_path / "p.ply")
    head = (tmp_path / "p.ply").read_bytes().split(b"end_header")[0].decode()
    assert [l for l in head.splitlines() if l.startswith("property")] == \
        ["property double x", "property double y", "property double z"]
    write_ply(c.with_predictions(np.zeros(5, int)), tmp_path / "q.ply")
    assert b"property int pred" in (tmp_path / "q.ply").read_bytes()


@given(n=st.integers(0, 60), seed=st.integers(0, 2**32 - 1), labels=st.booleans(), preds=st.booleans())
def test_batch_bytes_roundtrip(n, seed, labels, preds):
    r = np.random.default_rng(seed)
    b = BatchFile(int(r.integers(0, 2**32)), r.normal(size=(n, 7)).astype(np.float32),
                  r.integers(-5, 5, n) if labels else None, r.integers(0, 9, n) if preds else None)
    data = b.to_bytes()
    assert len(data) == 18 + n * 7 * 4 + n * 4 * (labels + preds)
    back = BatchFile.from_bytes(data)
    assert back.ordinal == b.ordinal and back.features.tobytes() == b.features.tobytes()
    assert back.to_bytes() == data


def test_batch_header_layout(rng):
    b = BatchFile(3, np.ones((2, 9), np.float32), np.array([1, 2]))
    data = b.to_bytes()
    assert struct.unpack_from("<4sHIIHBB", data) == (b"KDSS", 1, 3, 2, 9, 1, 0)


@pytest.mark.parametrize("mutate", [
    lambda d: b"KDSX" + d[4:],                       # magic
    lambda d: d[:4] + b"\x09" + d[5:],               # version
    lambda d: d[:10] + bytes([d[10] + 1]) + d[11:],  # row count
    lambda d: d[:16] + b"\x05" + d[17:],             # flag byte
    lambda d: d[:-1],                                # truncated
    lambda d: d + b"\x00",                           # trailing junk
])
def test_tampered_batch_rejected(tmp_path, mutate):
    p = tmp_path / "b.bin"
    write_batch(p, BatchFile(0, np.ones((4, 3), np.float32), np.arange(4)))
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(BatchFormatError):
        read_batch(p)


SCHEMA = FeatureSchema(("position", "color", "normal"))


def make_run(tmp_path, rng, n=10, N=4, seed=1):
    c = full_cloud(n, rng)
    c = PointCloud(c.positions, c.colors, c.normals, labels=rng.integers(0, 3, n),
                   class_map=ClassMap(("x", "y", "z")))
    parent = tmp_path / "parent.ply"
    write_ply(c, parent)
    sset = subsample(c, KdssConfig(N, seed))
    out = tmp_path / "run"
    m = write_batches(c, sset, out, parent, SCHEMA)
    return c, sset, m, out


def test_write_read_batches(tmp_path, rng):
    c, sset, m, out = make_run(tmp_path, rng)
    assert m.sizes == [4, 4, 2]
    assert [e.batch for e in m.subsamples] == ["batch_00000.bin", "batch_00001.bin", "batch_00002.bin"]
    back, matrices, labels = read_batches(out / "manifest.json")
    from kdss.features import assemble
    for s, b, fm, lab in zip(sset, back, matrices, labels):
        assert np.array_equal(s.indices, b.indices) and s.center_index == b.center_index
        ref = assemble(c, s, SCHEMA).values.astype(np.float32)
        assert fm.values.tobytes() == ref.tobytes()
        assert np.array_equal(lab, c.labels[s.indices])
    assert read_manifest(out).to_json() == (out / "manifest.json").read_text()


def test_stale_parent_detected(tmp_path, rng):
    c, sset, m, out = make_run(tmp_path, rng)
    parent = tmp_path / "parent.ply"
    data = bytearray(parent.read_bytes())
    data[-1] ^= 0xFF
    parent.write_bytes(bytes(data))
    with pytest.raises(StaleManifestError, match="stale manifest"):
        read_batches(out)


def test_missing_batch_names_ordinal(tmp_path, rng):
    _, _, _, out = make_run(tmp_path, rng)
    (out / "batch_00001.bin").unlink()
    with pytest.raises(ManifestError, match="ordinal 1"):
        read_batches(out)


def test_manifest_size_law_checked(tmp_path, rng):
    _, _, _, out = make_run(tmp_path, rng)
    text = (out / "manifest.json").read_text().replace('"size": 2', '"size": 3')
    (out / "manifest.json").write_text(text)
    with pytest.raises(ManifestError, match="size law"):
        read_manifest(out)


def test_predictions_roundtrip_and_merge(tmp_path, rng):
    c, sset, m, out = make_run(tmp_path, rng)
    consts = [np.full(len(s), k, np.int64) for k, s in enumerate(sset)]
    write_predictions(tmp_path / "pred", m, consts)
    preds = read_predictions(tmp_path / "pred", m)
    assert [len(p) for p in preds] == [4, 4, 2]
    merged = merge(sset, preds).predicted
    for k, s in enumerate(sset):
        assert (merged[s.indices] == k).all()


def test_missing_prediction_ordinal(tmp_path, rng):
    _, sset, m, _ = make_run(tmp_path, rng)
    write_predictions(tmp_path / "pred", m, [np.zeros(len(s), int) for s in sset])
    (tmp_path / "pred" / "batch_00001.bin").unlink()
    with pytest.raises(PredictionError, match="missing predictions for ordinal 1"):
        read_predictions(tmp_path / "pred", m)


def test_prediction_out_of_class_range(tmp_path, rng):
    _, sset, m, _ = make_run(tmp_path, rng)
    write_predictions(tmp_path / "pred", m, [np.full(len(s), 3) for s in sset])
    with pytest.raises(PredictionError, match="outside"):
        read_predictions(tmp_path / "pred", m)


def test_unlabeled_predictions_rejected(tmp_path, rng):
    _, _, m, out = make_run(tmp_path, rng)
    with pytest.raises(PredictionError, match="ordinal 0"):
        read_predictions(out, m)
