"""Core data model: point clouds, splats, and semantic group mapping.

All containers are immutable after construction (arrays are frozen), so they
can be shared freely between threads. Per-point attributes are either absent
or have exactly one entry per point.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError, StructuralError

UNIT_NORM_TOL = 1e-6
SPLAT_NORM_TOL = 1e-9

# sentinel for "attribute absent on this record" in integer columns
NO_LABEL = -1
NO_FRAME = -1


class SurfaceGroup(IntEnum):
    """Coarse class of local geometry controlling splat-growth parameters.

    GROUND_SURFACE is the merged planar group used by the descriptor-driven
    variant, which cannot tell road from facade.
    """

    GROUND = 0
    SURFACE = 1
    LINEAR = 2
    NON_SURFACE = 3
    GROUND_SURFACE = 4


_GROUP_ALIASES = {
    "ground": SurfaceGroup.GROUND,
    "surface": SurfaceGroup.SURFACE,
    "linear": SurfaceGroup.LINEAR,
    "nonsurface": SurfaceGroup.NON_SURFACE,
    "groundsurface": SurfaceGroup.GROUND_SURFACE,
}


def parse_group_name(name: str) -> SurfaceGroup:
    key = name.strip().lower().replace("-", "").replace("_", "")
    try:
        return _GROUP_ALIASES[key]
    except KeyError:
        raise ConfigError(f"unknown surface group name: {name!r}") from None


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _as_points(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be an (n, 3) array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class PointCloud:
    """Positions plus optional per-point attributes, all length-aligned.

    normals may contain NaN rows: those points are flagged as having no
    usable normal (degenerate neighborhoods). All finite normal rows are
    unit length.
    """

    positions: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None
    groups: np.ndarray | None = None
    sensor_positions: np.ndarray | None = None
    frame_ids: np.ndarray | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain NaN/Inf")
        n = len(pos)
        object.__setattr__(self, "positions", _freeze(pos))

        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if len(nrm) != n:
                raise StructuralError(f"normals length {len(nrm)} != {n} points")
            finite = ~np.isnan(nrm).any(axis=1)
            norms = np.linalg.norm(nrm[finite], axis=1)
            if norms.size and np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
                raise ValueError("normals are not unit length")
            object.__setattr__(self, "normals", _freeze(nrm))

        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (n,):
                raise StructuralError(f"labels length {lab.shape} != {n} points")
            if lab.size and lab.min() < 0:
                raise ValueError("labels must be non-negative")
            object.__setattr__(self, "labels", _freeze(lab))

        if self.groups is not None:
            grp = np.asarray(self.groups, dtype=np.uint8)
            if grp.shape != (n,):
                raise StructuralError(f"groups length {grp.shape} != {n} points")
            object.__setattr__(self, "groups", _freeze(grp))

        if self.sensor_positions is not None:
            sp = _as_points(self.sensor_positions, "sensor_positions")
            if len(sp) != n:
                raise StructuralError(f"sensor_positions length {len(sp)} != {n} points")
            object.__setattr__(self, "sensor_positions", _freeze(sp))

        if self.frame_ids is not None:
            fr = np.asarray(self.frame_ids, dtype=np.int64)
            if fr.shape != (n,):
                raise StructuralError(f"frame_ids length {fr.shape} != {n} points")
            object.__setattr__(self, "frame_ids", _freeze(fr))

        object.__setattr__(
            self, "extras", {k: _freeze(np.asarray(v)) for k, v in self.extras.items()}
        )
        for k, v in self.extras.items():
            if len(v) != n:
                raise StructuralError(f"extra property {k!r} length {len(v)} != {n} points")

    def __len__(self) -> int:
        return len(self.positions)

    def replace(self, **kw) -> "PointCloud":
        return dataclasses.replace(self, **kw)

    def take(self, indices) -> "PointCloud":
        """Subset cloud keeping all attributes aligned. Accepts index or bool arrays."""
        idx = np.asarray(indices)
        pick = lambda a: None if a is None else a[idx]
        return PointCloud(
            positions=self.positions[idx],
            normals=pick(self.normals),
            labels=pick(self.labels),
            groups=pick(self.groups),
            sensor_positions=pick(self.sensor_positions),
            frame_ids=pick(self.frame_ids),
            extras={k: v[idx] for k, v in self.extras.items()},
        )

    def valid_normal_mask(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return ~np.isnan(self.normals).any(axis=1)


@dataclass(frozen=True)
class Splat:
    """Oriented disk: center, unit normal, radius, plus provenance."""

    center: np.ndarray
    normal: np.ndarray
    radius: float
    group: SurfaceGroup = SurfaceGroup.SURFACE
    label: int | None = None
    frame_id: int | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if not self.radius > 0:
            raise ValueError(f"splat radius must be > 0, got {self.radius}")
        if abs(np.linalg.norm(n) - 1.0) > SPLAT_NORM_TOL:
            raise ValueError("splat normal is not unit length")
        object.__setattr__(self, "center", _freeze(c))
        object.__setattr__(self, "normal", _freeze(n))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class SplatSet:
    """Indexed collection of splats stored column-wise.

    labels/frame_ids use -1 for "absent"; seed_indices records which input
    point seeded each splat (-1 when unknown, e.g. after loading from file).
    """

    centers: np.ndarray
    normals: np.ndarray
    radii: np.ndarray
    groups: np.ndarray
    labels: np.ndarray
    frame_ids: np.ndarray
    seed_indices: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = _as_points(self.centers, "centers")
        m = len(c)
        nrm = _as_points(self.normals, "normals")
        rad = np.asarray(self.radii, dtype=np.float64).reshape(m)
        if m and rad.min() <= 0:
            raise ValueError("all splat radii must be > 0")
        if m:
            err = np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max()
            if err > SPLAT_NORM_TOL:
                raise ValueError("splat normals are not unit length")
        for name, arr, dt in (
            ("groups", self.groups, np.uint8),
            ("labels", self.labels, np.int64),
            ("frame_ids", self.frame_ids, np.int64),
            ("seed_indices", self.seed_indices, np.int64),
        ):
            a = np.asarray(arr, dtype=dt)
            if a.shape != (m,):
                raise StructuralError(f"{name} length {a.shape} != {m} splats")
            object.__setattr__(self, name, _freeze(a))
        object.__setattr__(self, "centers", _freeze(c))
        object.__setattr__(self, "normals", _freeze(nrm))
        object.__setattr__(self, "radii", _freeze(rad))

    @classmethod
    def build(
        cls,
        centers,
        normals,
        radii,
        groups=None,
        labels=None,
        frame_ids=None,
        seed_indices=None,
        meta=None,
    ) -> "SplatSet":
        m = len(np.asarray(centers))
        fill = lambda a, v, dt: np.full(m, v, dtype=dt) if a is None else a
        return cls(
            centers=centers,
            normals=normals,
            radii=radii,
            groups=fill(groups, SurfaceGroup.SURFACE, np.uint8),
            labels=fill(labels, NO_LABEL, np.int64),
            frame_ids=fill(frame_ids, NO_FRAME, np.int64),
            seed_indices=fill(seed_indices, -1, np.int64),
            meta=meta or {},
        )

    @classmethod
    def from_splats(cls, splats, meta=None) -> "SplatSet":
        splats = list(splats)
        return cls.build(
            centers=np.array([s.center for s in splats], dtype=np.float64).reshape(-1, 3),
            normals=np.array([s.normal for s in splats], dtype=np.float64).reshape(-1, 3),
            radii=np.array([s.radius for s in splats], dtype=np.float64),
            groups=np.array([int(s.group) for s in splats], dtype=np.uint8),
            labels=np.array(
                [NO_LABEL if s.label is None else s.label for s in splats], dtype=np.int64
            ),
            frame_ids=np.array(
                [NO_FRAME if s.frame_id is None else s.frame_id for s in splats], dtype=np.int64
            ),
            meta=meta,
        )

    def __len__(self) -> int:
        return len(self.radii)

    def __getitem__(self, i: int) -> Splat:
        return Splat(
            center=self.centers[i],
            normal=self.normals[i],
            radius=float(self.radii[i]),
            group=SurfaceGroup(int(self.groups[i])),
            label=None if self.labels[i] == NO_LABEL else int(self.labels[i]),
            frame_id=None if self.frame_ids[i] == NO_FRAME else int(self.frame_ids[i]),
        )

    def concat(self, other: "SplatSet") -> "SplatSet":
        return SplatSet(
            centers=np.vstack([self.centers, other.centers]),
            normals=np.vstack([self.normals, other.normals]),
            radii=np.concatenate([self.radii, other.radii]),
            groups=np.concatenate([self.groups, other.groups]),
            labels=np.concatenate([self.labels, other.labels]),
            frame_ids=np.concatenate([self.frame_ids, other.frame_ids]),
            seed_indices=np.concatenate([self.seed_indices, other.seed_indices]),
            meta={**self.meta, **other.meta},
        )


@dataclass(frozen=True)
class GroupMapping:
    """Total map from semantic class id to surface group, with dynamic flags."""

    table: dict[int, SurfaceGroup]
    dynamic: frozenset[int] = frozenset()

    @classmethod
    def from_text(cls, text: str) -> "GroupMapping":
        """Parse one `class_id group [dynamic]` entry per line; '#' comments."""
        table: dict[int, SurfaceGroup] = {}
        dynamic = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ConfigError(f"mapping line {lineno}: expected 'class_id group [dynamic]'")
            try:
                cid = int(parts[0])
            except ValueError:
                raise ConfigError(f"mapping line {lineno}: bad class id {parts[0]!r}") from None
            if cid < 0:
                raise ConfigError(f"mapping line {lineno}: class id must be non-negative")
            group = parse_group_name(parts[1])
            if len(parts) == 3:
                if parts[2].lower() != "dynamic":
                    raise ConfigError(f"mapping line {lineno}: unexpected token {parts[2]!r}")
                dynamic.add(cid)
            if cid in table:
                raise ConfigError(f"mapping line {lineno}: duplicate class id {cid}")
            table[cid] = group
        return cls(table=table, dynamic=frozenset(dynamic))

    @classmethod
    def from_file(cls, path) -> "GroupMapping":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read())

    def group_of(self, class_id: int) -> SurfaceGroup:
        return self.table[class_id]


def map_semantic_groups(
    cloud: PointCloud, mapping: GroupMapping
) -> tuple[PointCloud, dict[int, PointCloud]]:
    """Assign a surface group to every labeled point and split out dynamics.

    Returns the static cloud (groups set) and per-frame clouds of the points
    whose class is flagged dynamic. Clouds without frame ids put all dynamic
    points under frame 0.
    """
    if cloud.labels is None:
        raise ConfigError("cloud has no semantic labels; cannot map groups")
    observed = np.unique(cloud.labels)
    missing = [int(c) for c in observed if int(c) not in mapping.table]
    if missing:
        raise ConfigError(f"group mapping lacks class ids: {missing}")

    lut_size = int(observed.max()) + 1 if observed.size else 1
    lut = np.zeros(lut_size, dtype=np.uint8)
    dyn_lut = np.zeros(lut_size, dtype=bool)
    for cid, grp in mapping.table.items():
        if cid < lut_size:
            lut[cid] = int(grp)
            dyn_lut[cid] = cid in mapping.dynamic

    groups = lut[cloud.labels]
    is_dynamic = dyn_lut[cloud.labels]

    full = cloud.replace(groups=groups)
    static = full.take(~is_dynamic)

    dynamic_clouds: dict[int, PointCloud] = {}
    if is_dynamic.any():
        dyn = full.take(is_dynamic)
        frames = dyn.frame_ids if dyn.frame_ids is not None else np.zeros(len(dyn), dtype=np.int64)
        for f in np.unique(frames):
            dynamic_clouds[int(f)] = dyn.take(frames == f)
    return static, dynamic_clouds
