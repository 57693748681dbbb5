"""Spinning-LiDAR simulation: firing sequences, multi-depth weighted
returns, range noise, dynamic-object frame gating, trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cloud import NO_FRAME, NO_LABEL, PointCloud, SplatSet
from .errors import ConfigError, FormatError
from .spatial import (Bvh, Ray, bvh_all_hits, cast_first_hits,
                      cast_weighted_returns)

DYNAMIC_SPLAT_RADIUS = 0.14      # meters, one splat per dynamic point


@dataclass(frozen=True)
class SensorModel:
    """Spinning scanner geometry: one elevation ladder swept in azimuth."""

    name: str
    beams: int
    azimuth_step_deg: float
    elevation_min_deg: float
    elevation_max_deg: float
    elevation_step_deg: float
    pulses_per_rev: int
    range_max: float
    noise_sigma: float = 0.005

    @property
    def rays_per_revolution(self) -> int:
        return self.beams * self.pulses_per_rev

    @property
    def vertical_fov_deg(self) -> float:
        return self.elevation_max_deg - self.elevation_min_deg

    def beam_elevations_deg(self) -> np.ndarray:
        """Beam j points at elevation_min + j * step, ascending."""
        return self.elevation_min_deg + np.arange(self.beams) * self.elevation_step_deg

    def azimuths_deg(self) -> np.ndarray:
        return np.arange(self.pulses_per_rev) * self.azimuth_step_deg


_PRESETS = {
    "hdl32": SensorModel(
        name="hdl32", beams=32, azimuth_step_deg=0.2,
        elevation_min_deg=-30.67, elevation_max_deg=10.67, elevation_step_deg=1.33,
        pulses_per_rev=1800, range_max=100.0,
    ),
    "hdl64": SensorModel(
        name="hdl64", beams=64, azimuth_step_deg=0.16,
        elevation_min_deg=-24.8, elevation_max_deg=2.0, elevation_step_deg=0.419,
        pulses_per_rev=2250, range_max=120.0,
    ),
}


def sensor_preset(name: str) -> SensorModel:
    try:
        return _PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown sensor preset {name!r} "
                          f"(available: {', '.join(sorted(_PRESETS))})") from None


def load_sensor_config(path) -> SensorModel:
    """`key value` per line; unknown keys rejected. 'preset' seeds defaults."""
    fields = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = line.split()
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: expected 'key value'") from None
        fields[key] = value
    base = sensor_preset(fields.pop("preset")) if "preset" in fields else None
    casts = {"beams": int, "pulses_per_rev": int, "name": str}
    kwargs = {}
    for key, value in fields.items():
        if key not in SensorModel.__dataclass_fields__:
            raise ConfigError(f"{path}: unknown sensor field {key!r}")
        kwargs[key] = casts.get(key, float)(value)
    if base is not None:
        return replace(base, **kwargs)
    kwargs.setdefault("name", "custom")
    try:
        return SensorModel(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path}: incomplete sensor model ({e})") from None


@dataclass(frozen=True)
class Pose:
    """Sensor placement for one revolution; default AV mount (no tilt)."""

    position: np.ndarray
    pitch_deg: float = 0.0
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=np.float64).reshape(3)
        )


@dataclass(frozen=True)
class RevolutionRays:
    """All rays of one revolution, ordered by (azimuth index, beam index)."""

    origin: np.ndarray
    directions: np.ndarray
    beam_index: np.ndarray
    azimuth_index: np.ndarray
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray

    def __len__(self):
        return len(self.directions)


def _rotation_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def generate_revolution_rays(model: SensorModel, pose: Pose) -> RevolutionRays:
    """Firing sequence of one revolution from a fixed origin.

    Direction = Rz(azimuth) . Ry(elevation) . Ry(initial pitch) . x_hat,
    with positive elevation/pitch tilting the ray upward and the azimuth
    sweeping counterclockwise about +z from the x axis.
    """
    base = _rotation_y(-pose.pitch_deg) @ np.array([1.0, 0.0, 0.0])
    elev = model.beam_elevations_deg()
    erad = np.radians(elev)
    # Ry(-e) applied to base: rotate in the xz plane
    ce, se = np.cos(erad), np.sin(erad)
    bx, bz = base[0], base[2]
    ex = ce * bx - se * bz
    ez = se * bx + ce * bz
    per_beam = np.stack([ex, np.zeros_like(ex), ez], axis=1)      # (beams, 3)

    azim = model.azimuths_deg()
    arad = np.radians(azim)
    ca, sa = np.cos(arad), np.sin(arad)
    # Rz(a) applied to each beam vector, azimuth-major ordering
    dx = ca[:, None] * per_beam[None, :, 0] - sa[:, None] * per_beam[None, :, 1]
    dy = sa[:, None] * per_beam[None, :, 0] + ca[:, None] * per_beam[None, :, 1]
    dz = np.broadcast_to(per_beam[None, :, 2], dx.shape)
    dirs = np.stack([dx, dy, dz], axis=2).reshape(-1, 3)
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / norms

    n_az, n_beam = model.pulses_per_rev, model.beams
    beam_idx = np.tile(np.arange(n_beam), n_az)
    az_idx = np.repeat(np.arange(n_az), n_beam)
    return RevolutionRays(
        origin=pose.position,
        directions=np.ascontiguousarray(dirs),
        beam_index=beam_idx,
        azimuth_index=az_idx,
        azimuth_deg=azim[az_idx],
        elevation_deg=elev[beam_idx],
    )


@dataclass(frozen=True)
class WeightedReturn:
    point: np.ndarray
    t: float
    splat_index: int
    label: int | None
    group: int
    n_hits: int


def weighted_return(ray: Ray, bvh: Bvh, splats: SplatSet, depth: int = 5,
                    max_gap: float = 0.1, frame_filter=None) -> WeightedReturn | None:
    """Single-ray multi-depth return; reference for the batched kernel.

    Walks the ascending hit list from the first hit, accumulating while the
    count stays below `depth`, the hit's class matches the first hit's, and
    consecutive hits are within `max_gap`. If fewer than `depth` hits
    accumulate, the kernel depth resets to that count. The result is the
    weighted mean of the accumulated hit points under
    beta_i = exp(-|d_i - D/2| / (D/2)), d_i = 1..D.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    hits = bvh_all_hits(bvh, splats, ray, frame_filter=frame_filter)
    if not hits:
        return None
    first = hits[0]
    acc = [first]
    for h in hits[1:]:
        if len(acc) >= depth:
            break
        if splats.labels[h.splat_index] != splats.labels[first.splat_index]:
            break
        if h.t - acc[-1].t > max_gap:
            break
        acc.append(h)
    d_eff = len(acc)
    half = d_eff / 2.0
    betas = np.array([math.exp(-abs(q + 1 - half) / half) for q in range(d_eff)])
    pts = np.array([h.point for h in acc])
    ts = np.array([h.t for h in acc])
    point = (betas[:, None] * pts).sum(axis=0) / betas.sum()
    t = float((betas * ts).sum() / betas.sum())
    label = splats.labels[first.splat_index]
    return WeightedReturn(
        point=point, t=t, splat_index=first.splat_index,
        label=None if label == NO_LABEL else int(label),
        group=int(splats.groups[first.splat_index]),
        n_hits=d_eff,
    )


@dataclass(frozen=True)
class SimOptions:
    """Per-scan simulation knobs.

    noise_sigma > 0 adds Gaussian range noise; multi_depth switches from
    first-hit returns to depth-weighted returns.
    """

    noise_sigma: float = 0.0
    multi_depth: bool = False
    depth: int = 5
    max_gap: float = 0.1
    frame_filter: int | None = None


@dataclass(frozen=True)
class Scan:
    """Returns of one revolution (misses dropped)."""

    points: np.ndarray
    ranges: np.ndarray
    beam_index: np.ndarray
    azimuth_index: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    splat_index: np.ndarray
    pose: Pose

    def __len__(self):
        return len(self.ranges)

    def to_cloud(self) -> PointCloud:
        labels = self.labels if (self.labels >= 0).all() else None
        return PointCloud(
            positions=self.points,
            labels=labels,
            groups=self.groups,
            sensor_positions=np.tile(self.pose.position, (len(self), 1)),
            frame_ids=np.full(len(self), self.pose.frame, dtype=np.int64),
            extras={
                "beam": self.beam_index.astype(np.uint16),
                "azimuth": self.azimuth_index.astype(np.uint16),
                "range": self.ranges,
            },
        )


def _range_noise(sigma: float, seed: int, frame: int, n: int) -> np.ndarray:
    """One draw per ray, reproducible from (seed, frame, ray index)."""
    key = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(frame & 0xFFFFFFFFFFFFFFFF))
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal(n) * sigma


def simulate_scan(bvh: Bvh, splats: SplatSet, model: SensorModel, pose: Pose,
                  options: SimOptions = SimOptions(), seed: int = 0) -> Scan:
    """One revolution of returns; deterministic for fixed inputs and seed."""
    rays = generate_revolution_rays(model, pose)
    if options.multi_depth:
        points, ts, first, _ = cast_weighted_returns(
            bvh, splats, rays.origin, rays.directions, model.range_max,
            options.depth, options.max_gap, frame_filter=options.frame_filter)
        hit = first >= 0
        idx = first
    else:
        ts, idx = cast_first_hits(bvh, splats, rays.origin, rays.directions,
                                  model.range_max, frame_filter=options.frame_filter)
        hit = idx >= 0
        points = rays.origin[None, :] + rays.directions * np.where(hit, ts, 0.0)[:, None]

    ranges = ts.copy()
    if options.noise_sigma > 0.0:
        noise = _range_noise(options.noise_sigma, seed, pose.frame, len(rays))
        ranges = ranges + noise
        points = points + rays.directions * noise[:, None]
        hit = hit & (ranges > 0.0) & (ranges <= model.range_max)

    keep = np.flatnonzero(hit)
    sel = idx[keep]
    return Scan(
        points=points[keep],
        ranges=ranges[keep],
        beam_index=rays.beam_index[keep],
        azimuth_index=rays.azimuth_index[keep],
        labels=splats.labels[sel],
        groups=splats.groups[sel],
        splat_index=sel,
        pose=pose,
    )


def accumulate_scans(scans: list[Scan]) -> PointCloud:
    """Concatenate scan returns into one labeled cloud."""
    if not scans:
        raise ValueError("no scans to accumulate")
    clouds = [s.to_cloud() for s in scans]
    labels = None
    if all(c.labels is not None for c in clouds):
        labels = np.concatenate([c.labels for c in clouds])
    return PointCloud(
        positions=np.vstack([c.positions for c in clouds]),
        labels=labels,
        groups=np.concatenate([c.groups for c in clouds]),
        sensor_positions=np.vstack([c.sensor_positions for c in clouds]),
        frame_ids=np.concatenate([c.frame_ids for c in clouds]),
        extras={k: np.concatenate([c.extras[k] for c in clouds])
                for k in clouds[0].extras},
    )


def simulate_trajectory(bvh: Bvh, splats: SplatSet, model: SensorModel,
                        trajectory: list[Pose], options: SimOptions = SimOptions(),
                        seed: int = 0):
    """One scan per pose plus the accumulated cloud.

    When the scene contains per-frame dynamic splats, each scan only sees
    the dynamic splats of its own frame.
    """
    if not trajectory:
        raise ValueError("trajectory is empty")
    has_dynamics = bool((splats.frame_ids != NO_FRAME).any())
    scans = []
    for pose in trajectory:
        opts = options
        if has_dynamics and options.frame_filter is None:
            opts = replace(options, frame_filter=pose.frame)
        scans.append(simulate_scan(bvh, splats, model, pose, opts, seed=seed))
    return scans, accumulate_scans(scans)


def splat_dynamic_frames(frames: dict[int, PointCloud],
                         radius: float = DYNAMIC_SPLAT_RADIUS) -> SplatSet:
    """One fixed-radius splat per dynamic point, tagged with its frame.

    Normals come from the points; points without normals face their sensor.
    """
    centers, normals, labels, frame_ids = [], [], [], []
    for frame in sorted(frames):
        cloud = frames[frame]
        if len(cloud) == 0:
            continue
        if cloud.normals is not None:
            nrm = np.array(cloud.normals, copy=True)
        else:
            nrm = np.full((len(cloud), 3), np.nan)
        missing = np.isnan(nrm).any(axis=1)
        if missing.any():
            if cloud.sensor_positions is None:
                raise ConfigError(
                    f"frame {frame}: dynamic points need normals or sensor positions")
            toward = cloud.sensor_positions[missing] - cloud.positions[missing]
            norms = np.linalg.norm(toward, axis=1, keepdims=True)
            if (norms == 0).any():
                raise ConfigError(f"frame {frame}: point coincides with its sensor")
            nrm[missing] = toward / norms
        centers.append(cloud.positions)
        normals.append(nrm)
        labels.append(cloud.labels if cloud.labels is not None
                      else np.full(len(cloud), NO_LABEL, dtype=np.int64))
        frame_ids.append(np.full(len(cloud), frame, dtype=np.int64))
    if not centers:
        return SplatSet.build(centers=np.empty((0, 3)), normals=np.empty((0, 3)),
                              radii=np.empty(0))
    centers = np.vstack(centers)
    return SplatSet.build(
        centers=centers,
        normals=np.vstack(normals),
        radii=np.full(len(centers), radius),
        labels=np.concatenate(labels),
        frame_ids=np.concatenate(frame_ids),
        meta={"dynamic_radius": radius},
    )


def offset_trajectory(poses: list[Pose], delta) -> list[Pose]:
    d = np.asarray(delta, dtype=np.float64).reshape(3)
    return [replace(p, position=p.position + d) for p in poses]


def linear_trajectory(start, end, n: int, pitch_deg: float = 0.0,
                      first_frame: int = 0) -> list[Pose]:
    """n poses evenly spaced on the segment from start to end."""
    if n < 1:
        raise ValueError("n must be >= 1")
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.0])
    return [Pose(position=start + t * (end - start), pitch_deg=pitch_deg,
                 frame=first_frame + i) for i, t in enumerate(ts)]


def load_trajectory(path) -> list[Pose]:
    """Plain text, one pose per line: `frame x y z [pitch_deg]`."""
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise FormatError(f"{path}:{lineno}: expected 'frame x y z [pitch_deg]'")
        try:
            frame = int(parts[0])
            x, y, z = (float(v) for v in parts[1:4])
            pitch = float(parts[4]) if len(parts) == 5 else 0.0
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed pose line") from None
        poses.append(Pose(position=(x, y, z), pitch_deg=pitch, frame=frame))
    if not poses:
        raise FormatError(f"{path}: trajectory file has no poses")
    return poses


def save_trajectory(poses: list[Pose], path):
    with open(path, "w", encoding="utf-8") as f:
        for p in poses:
            x, y, z = (repr(float(v)) for v in p.position)
            f.write(f"{p.frame} {x} {y} {z} {float(p.pitch_deg)!r}\n")
