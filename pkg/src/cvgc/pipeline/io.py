"""Point-cloud file formats: whitespace XYZ[+label] text and PLY (ASCII / binary LE)."""

from __future__ import annotations

import enum
import logging
import os
import sys

import numpy as np

from ..core import LabelMap, PointCloud
from ..errors import FormatError, InvalidArgumentError, ParseError

log = logging.getLogger(__name__)

LABEL_PROPERTIES = ("label", "class", "scalar_label")

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class CloudFileFormat(enum.Enum):
    XYZL_ASCII = "xyzl"
    PLY_ASCII = "ply-ascii"
    PLY_BINARY_LE = "ply-binary"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for f in cls:
            if name in (f.value, f.name):
                return f
        raise InvalidArgumentError(f"unknown format {name!r}; use one of {[f.value for f in cls]}")


def detect_format(path, for_writing=False) -> CloudFileFormat:
    """Format from the file extension; PLY variants are told apart by the header when reading."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext != ".ply":
        return CloudFileFormat.XYZL_ASCII
    if for_writing or not os.path.exists(path):
        return CloudFileFormat.PLY_BINARY_LE
    with open(path, "rb") as fh:
        head = fh.read(512)
    if b"format ascii" in head:
        return CloudFileFormat.PLY_ASCII
    return CloudFileFormat.PLY_BINARY_LE


def read_cloud(path, fmt=None) -> PointCloud:
    fmt = detect_format(path) if fmt is None else CloudFileFormat.parse(fmt)
    if fmt is CloudFileFormat.XYZL_ASCII:
        with open(path) as fh:
            return parse_xyzl(fh.read())
    with open(path, "rb") as fh:
        return parse_ply(fh.read())


def write_cloud(cloud: PointCloud, path, fmt=None) -> None:
    fmt = detect_format(path, for_writing=True) if fmt is None else CloudFileFormat.parse(fmt)
    if cloud.features is not None:
        log.warning("dropping %d-dimensional point features: %s stores xyz and labels only",
                    cloud.features.shape[1], fmt.value)
    data = format_xyzl(cloud).encode() if fmt is CloudFileFormat.XYZL_ASCII else format_ply(
        cloud, binary=fmt is CloudFileFormat.PLY_BINARY_LE)
    with open(path, "wb") as fh:
        fh.write(data)


# -- XYZ + label text -------------------------------------------------------

def _to_labels(col, lines=None):
    lab = np.asarray(col, dtype=np.float64)
    bad = (lab != np.round(lab)) | (lab < 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"label {lab[i]!r} is not a non-negative integer",
                         None if lines is None else lines[i])
    return lab.astype(np.int64)


def parse_xyzl(text: str) -> PointCloud:
    """Parse ``x y z [label]`` rows; blank lines and ``#`` comments are skipped."""
    rows, lines = [], []
    arity = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) not in (3, 4):
            raise ParseError(f"expected 3 or 4 columns, got {len(parts)}", no)
        if arity is None:
            arity = len(parts)
        elif len(parts) != arity:
            raise FormatError(f"line {no}: mixed labelled and unlabelled rows")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"non-numeric value in {s!r}", no) from None
        lines.append(no)
    if not rows:
        return PointCloud(np.empty((0, 3)))
    arr = np.array(rows, dtype=np.float64)
    if not np.isfinite(arr[:, :3]).all():
        i = int(np.flatnonzero(~np.isfinite(arr[:, :3]).all(axis=1))[0])
        raise ParseError("non-finite coordinate", lines[i])
    labels = _to_labels(arr[:, 3], lines) if arity == 4 else None
    return PointCloud(arr[:, :3], labels)


def format_xyzl(cloud: PointCloud) -> str:
    """Shortest round-trip float text, one point per line, label last if present."""
    pts = cloud.points.tolist()
    if cloud.labels is None:
        rows = [f"{x!r} {y!r} {z!r}" for x, y, z in pts]
    else:
        rows = [f"{x!r} {y!r} {z!r} {l}" for (x, y, z), l in zip(pts, cloud.labels.tolist())]
    return "".join(r + "\n" for r in rows)


# -- PLY --------------------------------------------------------------------

def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", 1)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # [name, count, [(name, dtype or None for list)]]
    for no, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if parts[0] == "format":
                fmt = parts[1]
                if fmt not in ("ascii", "binary_little_endian"):
                    raise FormatError(f"unsupported PLY format {fmt!r}")
            elif parts[0] == "element":
                elements.append([parts[1], int(parts[2]), []])
            elif parts[0] == "property":
                if not elements:
                    raise ParseError("property before any element", no)
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], None))
                else:
                    if parts[1] not in PLY_TYPES:
                        raise ParseError(f"unknown property type {parts[1]!r}", no)
                    elements[-1][2].append((parts[2], PLY_TYPES[parts[1]]))
            else:
                raise ParseError(f"unexpected header line {line!r}", no)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, (ParseError, FormatError)):
                raise
            raise ParseError(f"malformed header line {line!r}", no) from None
    if fmt is None:
        raise ParseError("PLY header lacks a format line")
    return fmt, elements, body_start, len(header) + 1


def _vertex_cloud(names, columns):
    for axis in "xyz":
        if axis not in names:
            raise FormatError(f"PLY vertex element lacks property {axis!r}")
    pts = np.stack([np.asarray(columns[a], dtype=np.float64) for a in "xyz"], axis=1)
    if not np.isfinite(pts).all():
        raise ParseError("non-finite vertex coordinate")
    labels = None
    for name in LABEL_PROPERTIES:
        if name in names:
            labels = _to_labels(columns[name])
            break
    return PointCloud(pts, labels)


def parse_ply(data: bytes) -> PointCloud:
    fmt, elements, pos, header_lines = _parse_ply_header(data)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise FormatError("PLY file has no vertex element")
    vi = names.index("vertex")
    _, count, props = elements[vi]
    if any(dt is None for _, dt in props):
        raise FormatError("list properties on vertices are not supported")
    prop_names = [n for n, _ in props]

    if fmt == "ascii":
        lines = data[pos:].decode("ascii", errors="replace").splitlines()
        skip = sum(e[1] for e in elements[:vi])
        body = lines[skip:skip + count]
        if len(body) < count:
            raise ParseError(f"expected {count} vertex lines, found {len(body)}")
        rows = []
        for i, line in enumerate(body):
            parts = line.split()
            no = header_lines + skip + i + 1
            if len(parts) != len(props):
                raise ParseError(f"expected {len(props)} values, got {len(parts)}", no)
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"non-numeric value in {line!r}", no) from None
        arr = np.array(rows, dtype=np.float64).reshape(count, len(props))
        columns = {n: arr[:, j] for j, n in enumerate(prop_names)}
        return _vertex_cloud(prop_names, columns)

    for name, n, eprops in elements[:vi]:
        if any(dt is None for _, dt in eprops):
            raise FormatError(f"cannot skip list-valued element {name!r} before vertices")
        pos += n * np.dtype([(p, "<" + dt) for p, dt in eprops]).itemsize
    dtype = np.dtype([(p, "<" + dt) for p, dt in props])
    if len(data) < pos + count * dtype.itemsize:
        raise ParseError("PLY body shorter than declared vertex count")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return _vertex_cloud(prop_names, {n: arr[n] for n in prop_names})


def format_ply(cloud: PointCloud, binary: bool = True) -> bytes:
    n = len(cloud)
    header = ["ply", "format {} 1.0".format("binary_little_endian" if binary else "ascii"),
              f"element vertex {n}", "property float x", "property float y", "property float z"]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.labels is not None:
        header.append("property int label")
        fields.append(("label", "<i4"))
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    arr = np.empty(n, dtype=fields)
    for j, axis in enumerate("xyz"):
        arr[axis] = cloud.points[:, j]
    if cloud.labels is not None:
        if n and cloud.labels.max() > np.iinfo(np.int32).max:
            raise InvalidArgumentError("label does not fit a PLY int")
        arr["label"] = cloud.labels
    if binary:
        if sys.byteorder != "little":
            arr = arr.astype(np.dtype(fields).newbyteorder("<"))
        return head + arr.tobytes()

    xyz = arr[["x", "y", "z"]]
    if cloud.labels is None:
        rows = ("%.9g %.9g %.9g" % tuple(map(float, r)) for r in xyz.tolist())
    else:
        rows = ("%.9g %.9g %.9g %d" % (float(x), float(y), float(z), l)
                for (x, y, z), l in zip(xyz.tolist(), arr["label"].tolist()))
    return head + "".join(r + "\n" for r in rows).encode("ascii")


def read_labels(path) -> np.ndarray:
    """Labels from a point file, or from a plain file of one integer per line."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".labels", ".label"):
        vals = []
        with open(path) as fh:
            for no, line in enumerate(fh, start=1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                try:
                    vals.append(int(s))
                except ValueError:
                    raise ParseError(f"expected an integer label, got {s!r}", no) from None
        return np.array(vals, dtype=np.int64)
    cloud = read_cloud(path)
    if cloud.labels is None:
        raise FormatError(f"{path} carries no labels")
    return cloud.labels


def read_label_map(path, ignore_id):
    """Label map file: one ``src dst`` pair per line, ``#`` comments allowed."""
    mapping = {}
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.split()
            try:
                if len(parts) != 2:
                    raise ValueError
                src, dst = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"expected 'src dst', got {s!r}", no) from None
            if src in mapping and mapping[src] != dst:
                raise ParseError(f"source label {src} mapped twice", no)
            mapping[src] = dst
    return LabelMap(mapping, ignore_id)
