"""Splat growth over a point cloud: basic, semantic-adaptive, and
descriptor-adaptive variants.

Growth walks a seed's restricted neighborhood in ascending distance and
stops at the first neighbor that breaks the error bound, changes class or
group, or fails the normal-smoothness check. Included neighbors shift the
splat center along the seed normal and set its radius; points near the new
center are discarded from the seed queue.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numba import njit

from .cloud import NO_LABEL, PointCloud, Splat, SplatSet, SurfaceGroup
from .errors import ConfigError
from .features import ScaleStats, compute_scale_stats
from .spatial import PointIndex, knn_excluding_self

DEFAULT_ALPHA = 0.2
DEFAULT_BETA = 0.6


class Variant(Enum):
    BASIC = "basic"
    ADA_SEMANTIC = "semantic"
    ADA_DESCRIPTOR = "descriptor"


@dataclass(frozen=True)
class GroupParams:
    """Multipliers applied to (K, r_bar, e_bar) for one surface group."""

    k_scale: float
    r_scale: float
    e_scale: float

    def __post_init__(self):
        if min(self.k_scale, self.r_scale, self.e_scale) <= 0:
            raise ConfigError("group parameter scales must be positive")


_SEMANTIC_PARAMS = {
    SurfaceGroup.GROUND: GroupParams(3.0, 3.0, 3.0),
    SurfaceGroup.SURFACE: GroupParams(1.0, 1.0, 1.0),
    SurfaceGroup.LINEAR: GroupParams(0.33, 0.33, 0.33),
    SurfaceGroup.NON_SURFACE: GroupParams(0.25, 0.25, 0.25),
}
_DESCRIPTOR_PARAMS = {
    SurfaceGroup.GROUND_SURFACE: GroupParams(2.0, 2.0, 2.0),
    SurfaceGroup.LINEAR: GroupParams(0.33, 0.33, 0.33),
    SurfaceGroup.NON_SURFACE: GroupParams(0.25, 0.25, 0.25),
}
_BASIC_PARAMS = GroupParams(1.0, 1.0, 1.0)


def group_params(group: SurfaceGroup, variant: Variant) -> GroupParams:
    """Per-group neighborhood scaling for a generation variant."""
    if variant == Variant.BASIC:
        return _BASIC_PARAMS
    table = _SEMANTIC_PARAMS if variant == Variant.ADA_SEMANTIC else _DESCRIPTOR_PARAMS
    try:
        return table[group]
    except KeyError:
        raise ConfigError(f"group {group.name} is not valid under variant {variant.value}") from None


def scaled_k(base_k: int, scale: float) -> int:
    # round half up, never below 1
    return max(1, int(base_k * scale + 0.5))


@dataclass(frozen=True)
class GenConfig:
    """Everything the generator needs besides the cloud itself."""

    variant: Variant = Variant.BASIC
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    k: int = 40
    stats: ScaleStats | None = None
    group_overrides: dict[SurfaceGroup, GroupParams] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")

    def params_for(self, group: SurfaceGroup) -> GroupParams:
        if self.variant != Variant.BASIC and group in self.group_overrides:
            return self.group_overrides[group]
        return group_params(group, self.variant)

    def with_stats(self, stats: ScaleStats) -> "GenConfig":
        return replace(self, stats=stats)


def _point_group(cloud: PointCloud, i: int) -> SurfaceGroup:
    if cloud.groups is None:
        return SurfaceGroup.SURFACE
    return SurfaceGroup(int(cloud.groups[i]))


def _stop_values(cloud: PointCloud, config: GenConfig) -> np.ndarray | None:
    """Per-point value compared for the class/group stopping rule."""
    if config.variant == Variant.BASIC:
        return None
    if config.variant == Variant.ADA_SEMANTIC:
        if cloud.labels is None:
            raise ConfigError("semantic variant requires per-point labels")
        return cloud.labels
    if cloud.groups is None:
        raise ConfigError("descriptor variant requires per-point groups")
    return cloud.groups.astype(np.int64)


def grow_splat(seed_index: int, cloud: PointCloud, index: PointIndex,
               config: GenConfig):
    """Grow one splat from a seed point.

    Returns (Splat, consumed_point_indices) or None when no neighbor can be
    included (the radius would be zero). Reference implementation; the batch
    generator reproduces it exactly.
    """
    if config.stats is None:
        raise ConfigError("config.stats must be set (see compute_scale_stats)")
    if cloud.normals is None or np.isnan(cloud.normals[seed_index]).any():
        raise ConfigError(f"seed {seed_index} has no oriented normal")

    stats = config.stats
    group = _point_group(cloud, seed_index)
    params = config.params_for(group)
    k_g = scaled_k(stats.k, params.k_scale)
    r_g = stats.r_bar * params.r_scale
    e_g = stats.e_bar * params.e_scale
    stop_vals = _stop_values(cloud, config)

    p = cloud.positions[seed_index]
    n = cloud.normals[seed_index]
    d, i = index.knn(p, k_g + 1)
    if d.size and i[0] == seed_index:
        d, i = d[1:], i[1:]
    d, i = d[:k_g], i[:k_g]
    within = d <= r_g
    d, i = d[within], i[within]

    eps_sum = 0.0
    included = []
    last = -1
    for dist, j in zip(d, i):
        pj = cloud.positions[j]
        eps = float(n @ (pj - p))
        if abs(eps) > e_g:
            break
        if stop_vals is not None and stop_vals[j] != stop_vals[seed_index]:
            break
        nj = cloud.normals[j]
        if np.isnan(nj).any():
            break
        if float(n @ nj) <= config.beta:
            break
        eps_sum += eps
        included.append(int(j))
        last = int(j)

    if not included:
        return None
    eps_bar = eps_sum / (len(included) + 1)        # seed contributes 0
    center = p + eps_bar * n
    v = cloud.positions[last] - center
    radius = float(np.linalg.norm(v - (n @ v) * n))
    if radius <= 0.0:
        return None
    splat = Splat(
        center=center, normal=n, radius=radius, group=group,
        label=int(cloud.labels[seed_index]) if cloud.labels is not None else None,
    )
    members = np.array([seed_index] + included, dtype=np.int64)
    close = np.linalg.norm(cloud.positions[members] - center, axis=1) <= config.alpha * radius
    return splat, members[close]


@njit(cache=True)
def _generate_kernel(positions, normals, has_normal, stop_vals, has_stop,
                     nbr_idx, nbr_dist, k_pt, r_pt, e_pt,
                     alpha, beta,
                     out_center, out_normal, out_radius, out_seed, consumed):
    """Sequential seed sweep; bit-identical to grow_splat on every seed."""
    n_points = len(positions)
    m = 0
    for s in range(n_points):
        if consumed[s] or not has_normal[s]:
            continue
        consumed[s] = True
        px = positions[s, 0]
        py = positions[s, 1]
        pz = positions[s, 2]
        nx = normals[s, 0]
        ny = normals[s, 1]
        nz = normals[s, 2]
        e_g = e_pt[s]
        r_g = r_pt[s]
        k_g = k_pt[s]

        eps_sum = 0.0
        count = 0
        last = -1
        for col in range(k_g):
            j = nbr_idx[s, col]
            if j < 0 or nbr_dist[s, col] > r_g:
                break
            eps = (nx * (positions[j, 0] - px)
                   + ny * (positions[j, 1] - py)
                   + nz * (positions[j, 2] - pz))
            if abs(eps) > e_g:
                break
            if has_stop and stop_vals[j] != stop_vals[s]:
                break
            if not has_normal[j]:
                break
            if nx * normals[j, 0] + ny * normals[j, 1] + nz * normals[j, 2] <= beta:
                break
            eps_sum += eps
            count += 1
            last = j
        if count == 0:
            continue
        eps_bar = eps_sum / (count + 1)
        cx = px + eps_bar * nx
        cy = py + eps_bar * ny
        cz = pz + eps_bar * nz
        vx = positions[last, 0] - cx
        vy = positions[last, 1] - cy
        vz = positions[last, 2] - cz
        vn = vx * nx + vy * ny + vz * nz
        rx = vx - vn * nx
        ry = vy - vn * ny
        rz = vz - vn * nz
        radius = np.sqrt(rx * rx + ry * ry + rz * rz)
        if radius <= 0.0:
            continue

        # alpha-discard: included points close to the new center leave the
        # seed queue (the seed itself is already retired above)
        limit = alpha * radius
        for col in range(count):
            j = nbr_idx[s, col]
            dx = positions[j, 0] - cx
            dy = positions[j, 1] - cy
            dz = positions[j, 2] - cz
            if np.sqrt(dx * dx + dy * dy + dz * dz) <= limit:
                consumed[j] = True
        out_center[m, 0] = cx
        out_center[m, 1] = cy
        out_center[m, 2] = cz
        out_normal[m, 0] = nx
        out_normal[m, 1] = ny
        out_normal[m, 2] = nz
        out_radius[m] = radius
        out_seed[m] = s
        m += 1
    return m


def generate_splats(cloud: PointCloud, index: PointIndex, config: GenConfig) -> SplatSet:
    """Grow splats over the whole cloud, seeds visited in index order.

    Points consumed by an earlier splat's alpha-sphere never seed. Splats
    inherit their seed's group and label.
    """
    if cloud.normals is None or not cloud.valid_normal_mask().any():
        raise ConfigError("cloud has no oriented normals; estimate normals first")
    stats = config.stats
    if stats is None:
        stats = compute_scale_stats(cloud, index, config.k)
        config = config.with_stats(stats)
    if config.variant != Variant.BASIC and cloud.groups is None:
        raise ConfigError(f"variant {config.variant.value} requires per-point groups")

    n = len(cloud)
    if cloud.groups is not None:
        group_ids = np.unique(cloud.groups)
        k_lut = np.zeros(int(group_ids.max()) + 1, dtype=np.int64)
        r_lut = np.zeros(int(group_ids.max()) + 1, dtype=np.float64)
        e_lut = np.zeros(int(group_ids.max()) + 1, dtype=np.float64)
        for g in group_ids:
            params = config.params_for(SurfaceGroup(int(g)))
            k_lut[g] = scaled_k(stats.k, params.k_scale)
            r_lut[g] = stats.r_bar * params.r_scale
            e_lut[g] = stats.e_bar * params.e_scale
        k_pt = k_lut[cloud.groups]
        r_pt = r_lut[cloud.groups]
        e_pt = e_lut[cloud.groups]
        out_groups = cloud.groups
    else:
        params = config.params_for(SurfaceGroup.SURFACE)
        k_pt = np.full(n, scaled_k(stats.k, params.k_scale), dtype=np.int64)
        r_pt = np.full(n, stats.r_bar * params.r_scale)
        e_pt = np.full(n, stats.e_bar * params.e_scale)
        out_groups = np.full(n, int(SurfaceGroup.SURFACE), dtype=np.uint8)

    k_max = int(k_pt.max())
    nbr_dist, nbr_idx = knn_excluding_self(index, k_max)

    stop_vals = _stop_values(cloud, config)
    has_stop = stop_vals is not None
    if stop_vals is None:
        stop_vals = np.zeros(n, dtype=np.int64)

    out_center = np.empty((n, 3))
    out_normal = np.empty((n, 3))
    out_radius = np.empty(n)
    out_seed = np.empty(n, dtype=np.int64)
    consumed = np.zeros(n, dtype=np.bool_)
    m = _generate_kernel(
        cloud.positions, np.nan_to_num(cloud.normals, nan=0.0),
        cloud.valid_normal_mask(), np.ascontiguousarray(stop_vals, dtype=np.int64), has_stop,
        nbr_idx, nbr_dist, k_pt, r_pt, e_pt,
        config.alpha, config.beta,
        out_center, out_normal, out_radius, out_seed, consumed,
    )
    seeds = out_seed[:m]
    labels = cloud.labels[seeds] if cloud.labels is not None else np.full(m, NO_LABEL, np.int64)
    return SplatSet.build(
        centers=out_center[:m].copy(),
        normals=out_normal[:m].copy(),
        radii=out_radius[:m].copy(),
        groups=out_groups[seeds],
        labels=labels,
        seed_indices=seeds.copy(),
        meta={
            "variant": config.variant.value,
            "alpha": config.alpha,
            "beta": config.beta,
            "k": stats.k,
            "r_bar": stats.r_bar,
            "e_bar": stats.e_bar,
        },
    )
