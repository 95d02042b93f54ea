"""PLY point clouds (ASCII and binary little-endian).

Only the ``vertex`` element is read. Recognised vertex properties map onto
:class:`~kdss.core.PointCloud` channels; anything else is skipped with a
warning. Class names travel in a ``comment classes a,b,c`` header line.
"""
from __future__ import annotations

import io
import warnings
from pathlib import Path

import numpy as np

from ..core import NORMAL_TOLERANCE, ClassMap, PointCloud

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_TYPE_NAMES = {"u1": "uchar", "i4": "int", "f4": "float", "f8": "double"}

CHANNEL_PROPS = {
    "positions": ("x", "y", "z"),
    "colors": ("red", "green", "blue"),
    "normals": ("nx", "ny", "nz"),
}
INTENSITY_PROPS = ("intensity", "scalar_intensity", "scalar_Intensity")
LABEL_PROPS = ("label", "class", "scalar_label", "scalar_class")
PRED_PROPS = ("pred",)


class PlyError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PlyHeaderError(PlyError):
    """Malformed or unsupported header."""


class PlyTruncatedError(PlyError):
    """Body ends before the declared vertex count."""


class PlyBodyError(PlyError):
    """Malformed vertex data."""


class PlyEndianError(PlyError):
    """Big-endian binary bodies are not supported."""


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.props = []  # (name, dtype) or (name, (count_dtype, item_dtype))

    @property
    def has_lists(self):
        return any(isinstance(t, tuple) for _, t in self.props)

    def dtype(self):
        return np.dtype([(n, "<" + t) for n, t in self.props])


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyHeaderError("missing 'ply' magic", 0)
    fmt = None
    comments = []
    elements: list[_Element] = []
    offset = 0
    while True:
        nl = data.find(b"\n", offset)
        if nl < 0:
            raise PlyHeaderError("header not terminated by end_header", len(data))
        line = data[offset:nl].decode("ascii", errors="replace").strip()
        here = offset
        offset = nl + 1
        if here == 0:
            if line != "ply":
                raise PlyHeaderError("missing 'ply' magic", 0)
            continue
        words = line.split()
        if not words:
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) != 3:
                raise PlyHeaderError(f"bad format line {line!r}", here)
            if words[1] == "binary_big_endian":
                raise PlyEndianError("big-endian PLY is not supported", here)
            if words[1] not in ("ascii", "binary_little_endian"):
                raise PlyHeaderError(f"unknown format {words[1]!r}", here)
            fmt = words[1]
        elif key in ("comment", "obj_info"):
            comments.append(line[len(key):].strip())
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyHeaderError(f"bad element line {line!r}", here)
            elements.append(_Element(words[1], int(words[2])))
        elif key == "property":
            if not elements:
                raise PlyHeaderError("property before any element", here)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in PLY_TYPES or words[3] not in PLY_TYPES:
                    raise PlyHeaderError(f"bad list property {line!r}", here)
                elements[-1].props.append((words[4], (PLY_TYPES[words[2]], PLY_TYPES[words[3]])))
            elif len(words) == 3 and words[1] in PLY_TYPES:
                elements[-1].props.append((words[2], PLY_TYPES[words[1]]))
            else:
                raise PlyHeaderError(f"bad property line {line!r}", here)
        else:
            raise PlyHeaderError(f"unexpected header keyword {key!r}", here)
    if fmt is None:
        raise PlyHeaderError("no format line", offset)
    if not any(e.name == "vertex" for e in elements):
        raise PlyHeaderError("no vertex element", offset)
    return fmt, comments, elements, offset


def _skip_list_element(data, offset, el):
    for _ in range(el.count):
        for _, t in el.props:
            if isinstance(t, tuple):
                ct, it = np.dtype("<" + t[0]), np.dtype("<" + t[1])
                if offset + ct.itemsize > len(data):
                    raise PlyTruncatedError(f"element {el.name!r} truncated", offset)
                n = int(np.frombuffer(data, ct, 1, offset)[0])
                offset += ct.itemsize + n * it.itemsize
            else:
                offset += np.dtype(t).itemsize
    if offset > len(data):
        raise PlyTruncatedError(f"element {el.name!r} truncated", len(data))
    return offset


def _read_binary(data, offset, elements):
    for el in elements:
        if el.name != "vertex":
            if el.has_lists:
                offset = _skip_list_element(data, offset, el)
            else:
                offset += el.count * el.dtype().itemsize
            continue
        if el.has_lists:
            raise PlyHeaderError("list properties on vertex are not supported", offset)
        dt = el.dtype()
        need = el.count * dt.itemsize
        have = len(data) - offset
        if have < need:
            whole = max(have, 0) // dt.itemsize
            raise PlyTruncatedError(
                f"vertex {whole} of {el.count} missing", offset + whole * dt.itemsize
            )
        return np.frombuffer(data, dt, el.count, offset)
    raise AssertionError("unreachable")


def _read_ascii(data, offset, elements):
    pos = offset
    for el in elements:
        block = []
        while len(block) < el.count:
            if pos >= len(data):
                kind = "vertex" if el.name == "vertex" else f"element {el.name!r}"
                raise PlyTruncatedError(f"{kind} {len(block)} of {el.count} missing", pos)
            nl = data.find(b"\n", pos)
            end = len(data) if nl < 0 else nl
            line = data[pos:end]
            line_start = pos
            pos = end + 1
            if line.strip():
                block.append((line_start, line))
        if el.name != "vertex":
            continue
        if el.has_lists:
            raise PlyHeaderError("list properties on vertex are not supported", offset)
        dt = el.dtype()
        nprop = len(el.props)
        toks = []
        for r, (start, line) in enumerate(block):
            words = line.split()
            if len(words) != nprop:
                raise PlyBodyError(f"vertex {r}: expected {nprop} values, got {len(words)}", start)
            toks.extend(words)
        table = np.array(toks, dtype=object).reshape(el.count, nprop)
        out = np.empty(el.count, dtype=dt)
        for j, (name, t) in enumerate(el.props):
            cast = float if t[0] == "f" else int
            out[name] = np.array([cast(v) for v in table[:, j]], dtype=t)
        return out
    raise AssertionError("unreachable")


def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    fmt, comments, elements, body = _parse_header(data)
    vertex = next(e for e in elements if e.name == "vertex")
    rows = _read_binary(data, body, elements) if fmt == "binary_little_endian" \
        else _read_ascii(data, body, elements)
    names = [n for n, _ in vertex.props]
    used = set()

    def grab(props):
        if all(p in names for p in props):
            used.update(props)
            cols = [rows[p] for p in props]
            dt = np.result_type(*[c.dtype for c in cols])
            return np.stack([c.astype(dt) for c in cols], axis=1)
        return None

    def grab_one(options):
        for p in options:
            if p in names:
                used.add(p)
                return np.array(rows[p])
        return None

    positions = grab(CHANNEL_PROPS["positions"])
    if positions is None:
        raise PlyHeaderError("vertex element lacks x, y, z", 0)
    if positions.dtype.kind != "f":
        positions = positions.astype(np.float64)
    colors = grab(CHANNEL_PROPS["colors"])
    normals = grab(CHANNEL_PROPS["normals"])
    intensity = grab_one(INTENSITY_PROPS)
    labels = grab_one(LABEL_PROPS)
    predicted = grab_one(PRED_PROPS)
    skipped = [n for n in names if n not in used]
    if skipped:
        warnings.warn(f"{Path(path).name}: skipping unknown vertex properties {skipped}",
                      stacklevel=2)

    class_map = None
    for c in comments:
        if c.startswith("classes "):
            class_map = ClassMap(tuple(c[len("classes "):].split(",")))
    unnormalized = False
    if normals is not None and len(normals):
        norm = np.linalg.norm(normals.astype(np.float64), axis=1)
        unnormalized = bool((np.abs(norm - 1.0) > NORMAL_TOLERANCE).any())
    return PointCloud(
        positions=positions,
        colors=colors,
        normals=normals,
        intensity=intensity,
        labels=labels,
        predicted=predicted,
        class_map=class_map,
        normals_unnormalized=unnormalized,
    )


def _vertex_columns(cloud: PointCloud):
    cols = []  # (property name, numpy dtype code, column values)
    pos_t = "f4" if cloud.positions.dtype == np.float32 else "f8"
    for i, p in enumerate(CHANNEL_PROPS["positions"]):
        cols.append((p, pos_t, cloud.positions[:, i]))
    if cloud.colors is not None:
        for i, p in enumerate(CHANNEL_PROPS["colors"]):
            cols.append((p, "u1", cloud.colors[:, i]))
    if cloud.normals is not None:
        t = "f4" if cloud.normals.dtype == np.float32 else "f8"
        for i, p in enumerate(CHANNEL_PROPS["normals"]):
            cols.append((p, t, cloud.normals[:, i]))
    if cloud.intensity is not None:
        cols.append(("intensity", "f4" if cloud.intensity.dtype == np.float32 else "f8",
                     cloud.intensity))
    if cloud.labels is not None:
        cols.append(("label", "i4", cloud.labels))
    if cloud.predicted is not None:
        cols.append(("pred", "i4", cloud.predicted))
    return cols


def ply_header(cloud: PointCloud, encoding: str) -> bytes:
    lines = ["ply", f"format {encoding} 1.0", "comment written by kdss"]
    if cloud.class_map is not None:
        lines.append("comment classes " + ",".join(cloud.class_map.names))
    lines.append(f"element vertex {len(cloud)}")
    for name, t, _ in _vertex_columns(cloud):
        lines.append(f"property {_TYPE_NAMES[t]} {name}")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(cloud: PointCloud, path, encoding: str = "binary_le") -> None:
    """Write ``cloud``; ``encoding`` is ``"binary_le"`` or ``"ascii"``."""
    enc = {"binary_le": "binary_little_endian", "ascii": "ascii"}.get(encoding)
    if enc is None:
        raise ValueError(f"unknown encoding {encoding!r}")
    cols = _vertex_columns(cloud)
    buf = io.BytesIO()
    buf.write(ply_header(cloud, enc))
    if enc == "binary_little_endian":
        rows = np.empty(len(cloud), dtype=[(n, "<" + t) for n, t, _ in cols])
        for n, _, v in cols:
            rows[n] = v
        buf.write(rows.tobytes())
    else:
        fmts = ["%.9g" if t[0] == "f" else "%d" for _, t, _ in cols]
        table = np.empty((len(cloud), len(cols)), dtype=object)
        for j, (_, t, v) in enumerate(cols):
            table[:, j] = v.astype(np.float64) if t[0] == "f" else v.astype(np.int64)
        np.savetxt(buf, table, fmt=fmts, delimiter=" ", newline="\n")
    Path(path).write_bytes(buf.getvalue())
