"""Point-to-plane denoising, splat-density resampling, and the full
adaptive pipeline (denoise, generate, resample, regenerate).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, SplatSet, SurfaceGroup
from .errors import ConfigError
from .features import ScaleStats, classify_by_descriptors, prepare_cloud, restricted_neighbor_table
from .spatial import PointIndex
from .splatgen import GenConfig, Variant, generate_splats

RESAMPLE_ITER_CAP = 8       # per-splat midpoint cap, guarantees termination
DEDUP_TOL = 1e-9            # meters
SIGMA_FLOOR = 1e-12         # meters; spreads below this are exact geometry


def denoise(cloud: PointCloud, index: PointIndex, stats: ScaleStats) -> PointCloud:
    """Remove points whose point-to-plane distance is a 3-sigma outlier.

    For every point with a usable normal, neighbors of its restricted
    neighborhood whose |eps| exceeds 3x the standard deviation of the
    neighborhood's unsigned distances are marked; all marks are collected in
    one pass and marked points removed once. Zero-spread neighborhoods
    (sigma = 0, exact geometry) mark nothing.
    """
    valid = cloud.valid_normal_mask()
    if not valid.any():
        raise ConfigError("denoise requires estimated normals")
    nbr_idx, _, mask = restricted_neighbor_table(cloud, index, stats.k, stats.r_bar)
    pos = cloud.positions
    nrm = np.where(valid[:, None], cloud.normals, 0.0)
    safe_idx = np.where(nbr_idx >= 0, nbr_idx, 0)
    eps = np.abs(np.einsum("nj,nkj->nk", nrm, pos[safe_idx] - pos[:, None, :]))

    pair = mask & valid[:, None]
    counts = pair.sum(axis=1)
    w = pair.astype(np.float64)
    safe = np.maximum(counts, 1)
    mean = (eps * w).sum(axis=1) / safe
    var = (((eps - mean[:, None]) ** 2) * w).sum(axis=1) / safe
    sigma = np.sqrt(np.maximum(var, 0.0))

    rows = (sigma > SIGMA_FLOOR) & (counts > 0)
    over = pair & (eps > 3.0 * sigma[:, None]) & rows[:, None]
    marked = np.zeros(len(cloud), dtype=bool)
    if over.any():
        np.logical_or.at(marked, nbr_idx[over], True)
    return cloud.take(~marked)


@dataclass(frozen=True)
class DensityStats:
    """Per-splat neighbor counts within r_bar over eligible splat centers.

    Non-surface splats are excluded from both the counting and the mean;
    they never get resampled.
    """

    counts: np.ndarray
    mean: float
    eligible: np.ndarray
    radius: float


def compute_density(splats: SplatSet, stats: ScaleStats) -> DensityStats:
    if len(splats) == 0:
        raise ValueError("empty splat set")
    eligible = splats.groups != int(SurfaceGroup.NON_SURFACE)
    counts = np.zeros(len(splats), dtype=np.int64)
    if eligible.any():
        tree = cKDTree(splats.centers[eligible])
        lists = tree.query_ball_point(splats.centers, stats.r_bar)
        counts = np.array([len(lst) for lst in lists], dtype=np.int64)
        counts[eligible] -= 1      # a center is not its own neighbor
    mean = float(counts[eligible].mean()) if eligible.any() else 0.0
    return DensityStats(counts=counts, mean=mean, eligible=eligible, radius=stats.r_bar)


def _class_values(splats: SplatSet, variant: Variant) -> np.ndarray | None:
    """Values compared by the resampling class-equality check."""
    if variant == Variant.ADA_SEMANTIC:
        return splats.labels
    if variant == Variant.ADA_DESCRIPTOR:
        return splats.groups.astype(np.int64)
    return None


def resample_cloud(cloud: PointCloud, splats: SplatSet, density: DensityStats,
                   config: GenConfig) -> PointCloud:
    """Add midpoints between under-dense splats and compatible partners.

    A splat below the mean density scans its neighbors within the density
    radius in descending distance; the midpoint of the two centers is added
    for every partner of equal class (group for the descriptor variant)
    passing the smoothness check, until the deficit is covered, the partner
    list runs out, or the per-splat cap hits. New points inherit the seed
    point's attributes. Exact duplicates (within 1e-9 m) are dropped.
    """
    class_vals = _class_values(splats, config.variant)
    eligible_idx = np.flatnonzero(density.eligible)
    if eligible_idx.size == 0:
        return cloud
    tree = cKDTree(splats.centers[eligible_idx])

    new_points: list[np.ndarray] = []
    new_sources: list[int] = []
    centers = splats.centers
    normals = splats.normals
    beta = config.beta

    deficient = np.flatnonzero(density.eligible & (density.counts < density.mean))
    for si in deficient:
        neighbors = eligible_idx[tree.query_ball_point(centers[si], density.radius)]
        neighbors = neighbors[neighbors != si]
        if neighbors.size == 0:
            continue
        dist = np.linalg.norm(centers[neighbors] - centers[si], axis=1)
        order = np.lexsort((neighbors, -dist))
        pending = 0
        have = density.counts[si]
        for sj in neighbors[order]:
            if have + pending >= density.mean or pending >= RESAMPLE_ITER_CAP:
                break
            if class_vals is not None and class_vals[si] != class_vals[sj]:
                continue
            if float(normals[si] @ normals[sj]) <= beta:
                continue
            new_points.append((centers[si] + centers[sj]) / 2.0)
            new_sources.append(int(si))
            pending += 1

    if not new_points:
        return cloud
    pts = np.array(new_points)
    src = np.array(new_sources, dtype=np.int64)

    # drop points coinciding with originals, then dedup among themselves
    d, _ = cKDTree(cloud.positions).query(pts, k=1)
    keep = d > DEDUP_TOL
    pts, src = pts[keep], src[keep]
    if len(pts):
        drop = np.zeros(len(pts), dtype=bool)
        for a, b in sorted(cKDTree(pts).query_pairs(DEDUP_TOL)):
            drop[max(a, b)] = True
        pts, src = pts[~drop], src[~drop]
    if not len(pts):
        return cloud

    seeds = splats.seed_indices[src]
    if (seeds < 0).any():
        raise ConfigError("splat set lacks seed indices; regenerate from the cloud")

    def extend(attr, new_rows):
        return None if attr is None else np.concatenate([attr, new_rows])

    nan_rows = np.full((len(pts), 3), np.nan)
    return PointCloud(
        positions=np.vstack([cloud.positions, pts]),
        normals=extend(cloud.normals, nan_rows),
        labels=extend(cloud.labels, cloud.labels[seeds]) if cloud.labels is not None else None,
        groups=extend(cloud.groups, cloud.groups[seeds]) if cloud.groups is not None else None,
        sensor_positions=extend(cloud.sensor_positions, cloud.sensor_positions[seeds])
        if cloud.sensor_positions is not None else None,
        frame_ids=extend(cloud.frame_ids, cloud.frame_ids[seeds])
        if cloud.frame_ids is not None else None,
        extras={k: np.concatenate([v, v[seeds]]) for k, v in cloud.extras.items()},
    )


def run_adaptive_pipeline(cloud: PointCloud, config: GenConfig, *,
                          resample: bool = True, viewpoint=None):
    """Full generation pipeline, with one optional resampling round.

    With resampling on: denoise, estimate normals/stats, classify when the
    descriptor variant runs, generate, resample against splat density, then
    re-estimate and regenerate on the augmented cloud. With resampling off
    the whole block is skipped and a single generation runs (the
    no-resampling baseline).

    Returns (SplatSet, final PointCloud).
    """
    if config.variant == Variant.ADA_SEMANTIC and cloud.groups is None:
        raise ConfigError("semantic variant requires mapped groups (see map_semantic_groups)")
    if len(cloud) == 0:
        raise ConfigError("pipeline input cloud is empty")

    if resample:
        prepped, index, stats = prepare_cloud(cloud, config.k, viewpoint=viewpoint)
        cloud = denoise(prepped, index, stats)
        if len(cloud) == 0:
            raise ConfigError("denoising removed every point")

    cloud, index, stats = prepare_cloud(cloud, config.k, viewpoint=viewpoint)
    if config.variant == Variant.ADA_DESCRIPTOR:
        cloud = classify_by_descriptors(cloud, index, stats)
    stage_config = config.with_stats(stats)
    splats = generate_splats(cloud, index, stage_config)

    if not resample:
        return splats, cloud

    density = compute_density(splats, stats)
    resampled = resample_cloud(cloud, splats, density, stage_config)

    final_cloud, final_index, final_stats = prepare_cloud(resampled, config.k,
                                                          viewpoint=viewpoint)
    final_splats = generate_splats(final_cloud, final_index, config.with_stats(final_stats))
    return final_splats, final_cloud
