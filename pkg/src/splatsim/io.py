"""File I/O: PLY point clouds, KITTI velodyne .bin/.label pairs, splat files.

PLY support covers ascii and binary_little_endian, vertex element only.
Unknown scalar vertex properties are preserved in ``PointCloud.extras`` and
written back on save; anything else is dropped with a warning.
"""
from __future__ import annotations

import os
import warnings
from pathlib import Path

import numpy as np

from .cloud import NO_FRAME, NO_LABEL, PointCloud, SplatSet
from .errors import FormatError, StructuralError

SPLAT_FORMAT_VERSION = 1

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_DTYPE_TO_PLY = {
    "int8": "char", "uint8": "uchar",
    "int16": "short", "uint16": "ushort",
    "int32": "int", "uint32": "uint",
    "float32": "float", "float64": "double",
    "int64": "int",  # narrowed on write
}

# vertex property names the cloud model owns; everything else is an extra
_CLOUD_PROPS = {
    "x", "y", "z", "nx", "ny", "nz",
    "label", "group", "frame_id",
    "sensor_x", "sensor_y", "sensor_z",
}


class _PlyHeader:
    def __init__(self):
        self.fmt = None              # "ascii" | "binary_little_endian"
        self.elements = []           # list of (name, count, [(prop_name, dtype_str)])
        self.comments = []
        self.header_end = 0          # byte offset of first payload byte


def _parse_ply_header(data: bytes, path) -> _PlyHeader:
    if not data.startswith(b"ply"):
        raise FormatError(f"{path}: not a PLY file (missing magic at byte 0)")
    h = _PlyHeader()
    offset = 0
    lines = []
    while True:
        nl = data.find(b"\n", offset)
        if nl < 0:
            raise FormatError(f"{path}: header not terminated (end_header missing, byte {len(data)})")
        line = data[offset:nl].strip().decode("ascii", errors="replace")
        lines.append((offset, line))
        offset = nl + 1
        if line == "end_header":
            break
    h.header_end = offset

    props = None
    for at, line in lines[1:]:
        if not line or line == "end_header":
            continue
        parts = line.split()
        kw = parts[0]
        if kw == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}: unsupported PLY format {line!r} (byte {at})")
            h.fmt = parts[1]
        elif kw == "comment":
            h.comments.append(line[len("comment "):] if len(line) > 8 else "")
        elif kw == "element":
            if len(parts) != 3:
                raise FormatError(f"{path}: malformed element line (byte {at})")
            try:
                count = int(parts[2])
            except ValueError:
                raise FormatError(f"{path}: bad element count (byte {at})") from None
            props = []
            h.elements.append((parts[1], count, props))
        elif kw == "property":
            if props is None:
                raise FormatError(f"{path}: property before any element (byte {at})")
            if parts[1] == "list":
                props.append((parts[-1], "list"))
            else:
                if parts[1] not in _PLY_DTYPES:
                    raise FormatError(f"{path}: unknown property type {parts[1]!r} (byte {at})")
                props.append((parts[2], _PLY_DTYPES[parts[1]]))
        elif kw in ("ply", "obj_info"):
            continue
        else:
            raise FormatError(f"{path}: unexpected header keyword {kw!r} (byte {at})")
    if h.fmt is None:
        raise FormatError(f"{path}: PLY header has no format line")
    return h


def _read_ply_tables(path) -> tuple[dict[str, np.ndarray], list[str]]:
    """Read the vertex element of a PLY file into named 1-D arrays."""
    data = Path(path).read_bytes()
    h = _parse_ply_header(data, path)

    vertex = None
    offset = h.header_end
    payload_elems = []
    for name, count, props in h.elements:
        payload_elems.append((name, count, props))

    if h.fmt == "ascii":
        text = data[h.header_end:].decode("ascii", errors="replace").split()
        cursor = 0
        columns = {}
        for name, count, props in payload_elems:
            if any(dt == "list" for _, dt in props):
                if name == "vertex":
                    raise FormatError(f"{path}: list properties on vertex element are unsupported")
                warnings.warn(f"{path}: skipping element {name!r} with list properties")
                break
            width = len(props)
            need = count * width
            if len(text) - cursor < need:
                raise FormatError(
                    f"{path}: truncated ascii payload in element {name!r} "
                    f"(have {len(text) - cursor} values, need {need})"
                )
            if name == "vertex":
                block = np.array(text[cursor:cursor + need], dtype=np.float64).reshape(count, width)
                for j, (pname, dt) in enumerate(props):
                    columns[pname] = block[:, j].astype(np.dtype(dt))
                vertex = columns
            cursor += need
    else:
        for name, count, props in payload_elems:
            if any(dt == "list" for _, dt in props):
                if name == "vertex":
                    raise FormatError(f"{path}: list properties on vertex element are unsupported")
                warnings.warn(f"{path}: skipping trailing element {name!r} with list properties")
                break
            rec = np.dtype([(pname, "<" + dt) for pname, dt in props])
            need = rec.itemsize * count
            if len(data) - offset < need:
                raise FormatError(
                    f"{path}: truncated payload in element {name!r} at byte {offset} "
                    f"(have {len(data) - offset} bytes, need {need})"
                )
            if name == "vertex":
                block = np.frombuffer(data, dtype=rec, count=count, offset=offset)
                vertex = {pname: np.ascontiguousarray(block[pname]) for pname, _ in props}
            offset += need

    if vertex is None:
        raise FormatError(f"{path}: PLY file has no vertex element")
    for c in ("x", "y", "z"):
        if c not in vertex:
            raise FormatError(f"{path}: vertex element lacks {c!r} property")
    return vertex, h.comments


def _cloud_from_columns(cols: dict[str, np.ndarray]) -> PointCloud:
    positions = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    normals = None
    if all(k in cols for k in ("nx", "ny", "nz")):
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1).astype(np.float64)
    sensor = None
    if all(k in cols for k in ("sensor_x", "sensor_y", "sensor_z")):
        sensor = np.stack(
            [cols["sensor_x"], cols["sensor_y"], cols["sensor_z"]], axis=1
        ).astype(np.float64)
    labels = cols["label"].astype(np.int64) if "label" in cols else None
    groups = cols["group"].astype(np.uint8) if "group" in cols else None
    frames = cols["frame_id"].astype(np.int64) if "frame_id" in cols else None
    extras = {k: v for k, v in cols.items() if k not in _CLOUD_PROPS}
    return PointCloud(
        positions=positions,
        normals=normals,
        labels=labels,
        groups=groups,
        sensor_positions=sensor,
        frame_ids=frames,
        extras=extras,
    )


def load_cloud(path, format: str | None = None, labels_path=None) -> PointCloud:
    """Load a point cloud from PLY or a KITTI velodyne .bin file.

    ``format`` is inferred from the extension when omitted ('.ply' or '.bin').
    For kitti_bin an optional .label file supplies one uint32 record per
    point (semantic class in the low 16 bits).
    """
    path = Path(path)
    if format is None:
        format = {".ply": "ply", ".bin": "kitti_bin"}.get(path.suffix.lower())
        if format is None:
            raise FormatError(f"{path}: cannot infer format from extension")
    if format == "ply":
        cols, _ = _read_ply_tables(path)
        cloud = _cloud_from_columns(cols)
        if labels_path is not None:
            labels = _read_kitti_labels(labels_path)
            if len(labels) != len(cloud):
                raise StructuralError(
                    f"{labels_path}: {len(labels)} labels for {len(cloud)} points"
                )
            cloud = cloud.replace(labels=labels)
        return cloud
    if format == "kitti_bin":
        return _load_kitti_bin(path, labels_path)
    raise FormatError(f"unknown cloud format {format!r}")


def _read_kitti_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise FormatError(f"{path}: label payload truncated at byte {len(raw) - len(raw) % 4}")
    rec = np.frombuffer(raw, dtype="<u4")
    return (rec & 0xFFFF).astype(np.int64)


def _load_kitti_bin(path, labels_path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise FormatError(
            f"{path}: payload is not a whole number of 16-byte records "
            f"(truncated at byte {len(raw) - len(raw) % 16})"
        )
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    positions = rec[:, :3].astype(np.float64)
    extras = {"intensity": np.ascontiguousarray(rec[:, 3])}
    labels = None
    if labels_path is not None:
        labels = _read_kitti_labels(labels_path)
        if len(labels) != len(positions):
            raise StructuralError(f"{labels_path}: {len(labels)} labels for {len(positions)} points")
    return PointCloud(positions=positions, labels=labels, extras=extras)


def _write_ply(path, columns: list[tuple[str, np.ndarray]], count: int,
               binary: bool, comments: list[str]):
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    for c in comments:
        header.append(f"comment {c}")
    header.append(f"element vertex {count}")
    out_cols = []
    for name, arr in columns:
        arr = np.asarray(arr)
        if arr.dtype == np.int64:
            arr = arr.astype(np.int32)
        ply_type = _DTYPE_TO_PLY.get(arr.dtype.name)
        if ply_type is None:
            warnings.warn(f"dropping property {name!r} with unsupported dtype {arr.dtype}")
            continue
        header.append(f"property {ply_type} {name}")
        out_cols.append((name, arr))
    header.append("end_header")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.dtype([(name, arr.dtype.newbyteorder("<")) for name, arr in out_cols])
            block = np.empty(count, dtype=rec)
            for name, arr in out_cols:
                block[name] = arr
            f.write(block.tobytes())
        else:
            for i in range(count):
                f.write(
                    (" ".join(repr(arr[i].item()) for _, arr in out_cols) + "\n").encode("ascii")
                )


def save_cloud(cloud: PointCloud, path, format: str = "ply", binary: bool = True):
    """Write a cloud as PLY. Binary round-trips positions bit-identically."""
    if format != "ply":
        raise FormatError(f"unsupported save format {format!r}")
    cols: list[tuple[str, np.ndarray]] = [
        ("x", cloud.positions[:, 0]),
        ("y", cloud.positions[:, 1]),
        ("z", cloud.positions[:, 2]),
    ]
    if cloud.normals is not None:
        cols += [("nx", cloud.normals[:, 0]), ("ny", cloud.normals[:, 1]),
                 ("nz", cloud.normals[:, 2])]
    if cloud.labels is not None:
        cols.append(("label", cloud.labels.astype(np.uint32)))
    if cloud.groups is not None:
        cols.append(("group", cloud.groups))
    if cloud.sensor_positions is not None:
        cols += [
            ("sensor_x", cloud.sensor_positions[:, 0]),
            ("sensor_y", cloud.sensor_positions[:, 1]),
            ("sensor_z", cloud.sensor_positions[:, 2]),
        ]
    if cloud.frame_ids is not None:
        cols.append(("frame_id", cloud.frame_ids.astype(np.int32)))
    for name, arr in sorted(cloud.extras.items()):
        cols.append((name, arr))
    _write_ply(path, cols, len(cloud), binary, comments=[])


def save_splats(splats: SplatSet, path, binary: bool = True):
    """Write a splat set as binary PLY with a format-version comment."""
    cols = [
        ("x", splats.centers[:, 0]),
        ("y", splats.centers[:, 1]),
        ("z", splats.centers[:, 2]),
        ("nx", splats.normals[:, 0]),
        ("ny", splats.normals[:, 1]),
        ("nz", splats.normals[:, 2]),
        ("radius", splats.radii),
        ("group", splats.groups),
    ]
    if (splats.labels != NO_LABEL).any():
        cols.append(("label", splats.labels.astype(np.int32)))
    if (splats.frame_ids != NO_FRAME).any():
        cols.append(("frame_id", splats.frame_ids.astype(np.int32)))
    _write_ply(path, cols, len(splats), binary,
               comments=[f"splat_format {SPLAT_FORMAT_VERSION}"])


def load_splats(path) -> SplatSet:
    """Load a splat file written by :func:`save_splats`."""
    cols, comments = _read_ply_tables(path)
    version = None
    for c in comments:
        parts = c.split()
        if len(parts) == 2 and parts[0] == "splat_format":
            version = parts[1]
    if version is None:
        raise FormatError(f"{path}: not a splat file (missing splat_format comment)")
    if version != str(SPLAT_FORMAT_VERSION):
        raise FormatError(
            f"{path}: splat_format version {version} unsupported (expected {SPLAT_FORMAT_VERSION})"
        )
    for c in ("nx", "ny", "nz", "radius"):
        if c not in cols:
            raise FormatError(f"{path}: splat file lacks {c!r} property")
    radii = cols["radius"].astype(np.float64)
    if len(radii) and radii.min() <= 0:
        bad = int(np.argmin(radii))
        raise FormatError(f"{path}: record {bad} has non-positive radius {radii[bad]}")
    m = len(radii)
    return SplatSet.build(
        centers=np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64),
        normals=np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1).astype(np.float64),
        radii=radii,
        groups=cols["group"].astype(np.uint8) if "group" in cols else None,
        labels=cols["label"].astype(np.int64) if "label" in cols else None,
        frame_ids=cols["frame_id"].astype(np.int64) if "frame_id" in cols else None,
        meta={"source": os.fspath(path)},
    )
