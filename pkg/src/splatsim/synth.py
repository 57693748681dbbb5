"""Built-in synthetic scenes for tests and the `synth` CLI subcommand.

Every scene carries per-point sensor positions so normals orient without
extra configuration.
"""
from __future__ import annotations

import numpy as np

from .cloud import PointCloud

PLANE_LABEL = 1
POLE_LABEL = 2
FACE_A_LABEL = 1
FACE_B_LABEL = 2


def _with_sensor(positions, sensor, labels=None, frame_ids=None):
    positions = np.asarray(positions, dtype=np.float64)
    sensor = np.asarray(sensor, dtype=np.float64).reshape(3)
    return PointCloud(
        positions=positions,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        frame_ids=None if frame_ids is None else np.asarray(frame_ids, dtype=np.int64),
        sensor_positions=np.tile(sensor, (len(positions), 1)),
    )


def plane_cloud(n: int = 20000, size: float = 20.0, noise: float = 0.0,
                seed: int = 0, grid: bool = False, label: int = PLANE_LABEL,
                sensor=(0.0, 0.0, 10.0)) -> PointCloud:
    """Points on the z=0 square [-size/2, size/2]^2, optional Gaussian z-noise."""
    rng = np.random.default_rng(seed)
    if grid:
        side = int(np.sqrt(n))
        ax = np.linspace(-size / 2, size / 2, side)
        xx, yy = np.meshgrid(ax, ax)
        pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(side * side)], axis=1)
    else:
        xy = rng.uniform(-size / 2, size / 2, size=(n, 2))
        pts = np.hstack([xy, np.zeros((n, 1))])
    if noise > 0:
        pts[:, 2] += rng.normal(0.0, noise, size=len(pts))
    return _with_sensor(pts, sensor, labels=np.full(len(pts), label))


def dihedral_cloud(n_per_face: int = 8000, size: float = 4.0, noise: float = 0.0,
                   seed: int = 0) -> PointCloud:
    """Two faces meeting at 90 degrees along the y axis, one class per face.

    Face A is the z=0 ground strip (x in [0, size]); face B is the x=0 wall
    (z in [0, size]).
    """
    rng = np.random.default_rng(seed)
    a = np.zeros((n_per_face, 3))
    a[:, 0] = rng.uniform(0.0, size, n_per_face)
    a[:, 1] = rng.uniform(-size / 2, size / 2, n_per_face)
    b = np.zeros((n_per_face, 3))
    b[:, 1] = rng.uniform(-size / 2, size / 2, n_per_face)
    b[:, 2] = rng.uniform(0.0, size, n_per_face)
    if noise > 0:
        a[:, 2] += rng.normal(0.0, noise, n_per_face)
        b[:, 0] += rng.normal(0.0, noise, n_per_face)
    pts = np.vstack([a, b])
    labels = np.concatenate([
        np.full(n_per_face, FACE_A_LABEL), np.full(n_per_face, FACE_B_LABEL)])
    return _with_sensor(pts, (size, size, size), labels=labels)


def pole_scene(ground_n: int = 40000, ground_size: float = 10.0,
               pole_radius: float = 0.03, pole_height: float = 3.0,
               pole_step: float = 0.006, ground_noise: float = 0.004,
               seed: int = 0, sensor=(4.0, 0.0, 1.5)) -> PointCloud:
    """Ground plane plus a thin vertical pole at the origin.

    Ground points carry PLANE_LABEL, pole points POLE_LABEL. The pole is a
    cylinder shell sampled on a regular height x angle lattice.
    """
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-ground_size / 2, ground_size / 2, size=(ground_n, 2))
    gz = rng.normal(0.0, ground_noise, ground_n) if ground_noise > 0 else np.zeros(ground_n)
    ground = np.column_stack([xy, gz])
    # keep the pole footprint clear so ground points do not pierce it
    ground = ground[np.linalg.norm(ground[:, :2], axis=1) > 2.5 * pole_radius]

    heights = np.arange(pole_step, pole_height, pole_step)
    n_angles = max(8, int(round(2 * np.pi * pole_radius / pole_step)))
    angles = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    hh, aa = np.meshgrid(heights, angles, indexing="ij")
    pole = np.column_stack([
        pole_radius * np.cos(aa.ravel()),
        pole_radius * np.sin(aa.ravel()),
        hh.ravel(),
    ])
    pts = np.vstack([ground, pole])
    labels = np.concatenate([
        np.full(len(ground), PLANE_LABEL), np.full(len(pole), POLE_LABEL)])
    return _with_sensor(pts, sensor, labels=labels)


def scanline_cloud(gap_lo: float = 0.06, gap_hi: float = 0.30,
                   point_step: float = 0.05, size: float = 8.0,
                   noise: float = 0.002, seed: int = 0,
                   label: int = PLANE_LABEL) -> PointCloud:
    """Anisotropic scan-line pattern: dense along x, line spacing widening
    across y (the range-dependent sweep-line footprint of a spinning scanner).

    gap_hi = gap_lo gives uniformly spaced lines.
    """
    rng = np.random.default_rng(seed)
    ys = []
    y = -size / 2
    while y <= size / 2:
        ys.append(y)
        frac = (y + size / 2) / size
        y += gap_lo + frac * (gap_hi - gap_lo)
    xs = np.arange(-size / 2, size / 2, point_step)
    pts = np.array([[x, yy, 0.0] for yy in ys for x in xs])
    if noise > 0:
        pts[:, 2] += rng.normal(0.0, noise, len(pts))
    return _with_sensor(pts, (0.0, 0.0, 8.0), labels=np.full(len(pts), label))


SCENES = {
    "plane": plane_cloud,
    "dihedral": dihedral_cloud,
    "pole": pole_scene,
    "scanlines": scanline_cloud,
}
