"""Neighborhood PCA: normals, eigenvalue descriptors, and scale statistics.

The working neighborhood everywhere is the "restricted" one: the k nearest
neighbors intersected with the ball of radius r_bar, query point excluded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud, SurfaceGroup
from .errors import DegenerateNeighborhoodError
from .spatial import PointIndex, knn_excluding_self

DEFAULT_K = 40

# below this leading eigenvalue a neighborhood has no usable spread
_RANK_EPS = 1e-24


@dataclass(frozen=True)
class PcaFrame:
    """Eigen-decomposition of a neighborhood's covariance.

    eigenvalues are descending; eigenvectors[:, j] pairs with eigenvalues[j],
    so column 2 is the direction of least spread (the normal candidate).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    centroid: np.ndarray


@dataclass(frozen=True)
class ScaleStats:
    """Global neighborhood scale: mean k-th-neighbor distance and error bound.

    r_bar is the mean distance to the k-th nearest neighbor; e_bar is the
    mean unsigned point-to-plane distance pooled over all neighbor pairs.
    """

    r_bar: float
    e_bar: float
    k: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.r_bar > 0:
            raise ValueError("r_bar must be > 0")
        if self.e_bar < 0:
            raise ValueError("e_bar must be >= 0")


def _canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its first nonzero component is positive."""
    v = vectors.copy()
    sign = np.where(v[:, 0] != 0.0, np.sign(v[:, 0]),
                    np.where(v[:, 1] != 0.0, np.sign(v[:, 1]),
                             np.where(v[:, 2] != 0.0, np.sign(v[:, 2]), 1.0)))
    return v * sign[:, None]


def neighborhood_pca(points) -> PcaFrame:
    """PCA of a single neighborhood. Needs >= 3 points with nonzero spread."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateNeighborhoodError(f"need >= 3 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    cov = q.T @ q / len(pts)
    w, v = np.linalg.eigh(cov)          # ascending
    w = np.maximum(w[::-1], 0.0)         # descending, clamp fp negatives
    v = v[:, ::-1]
    if w[0] <= _RANK_EPS:
        raise DegenerateNeighborhoodError("all neighborhood points coincide")
    v = _canonical_sign(v.T).T
    return PcaFrame(eigenvalues=w, eigenvectors=np.ascontiguousarray(v), centroid=centroid)


def _batch_pca(positions: np.ndarray, nbr_idx: np.ndarray, nbr_mask: np.ndarray):
    """Vectorized PCA over per-point neighbor lists.

    Returns (eigenvalues (n,3) descending, normals (n,3) canonical-sign,
    valid (n,)). Rows with fewer than 3 neighbors or zero spread are invalid.
    """
    counts = nbr_mask.sum(axis=1)
    w8 = nbr_mask.astype(np.float64)
    pts = positions[np.where(nbr_idx >= 0, nbr_idx, 0)]       # (n, k, 3)
    safe_counts = np.maximum(counts, 1)
    mu = np.einsum("nk,nkj->nj", w8, pts) / safe_counts[:, None]
    d = (pts - mu[:, None, :]) * w8[:, :, None]
    cov = np.einsum("nki,nkj->nij", d, d) / safe_counts[:, None, None]
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w[:, ::-1], 0.0)
    normals = _canonical_sign(np.ascontiguousarray(v[:, :, 0]))
    valid = (counts >= 3) & (w[:, 0] > _RANK_EPS)
    return w, normals, valid


def restricted_neighbor_table(cloud: PointCloud, index: PointIndex, k: int, radius: float):
    """(n, k) neighbor indices/distances of every point, masked to the radius."""
    d, i = knn_excluding_self(index, k)
    mask = d <= radius
    return i, d, mask


def mean_kth_neighbor_distance(cloud: PointCloud, index: PointIndex, k: int) -> float:
    """Mean distance to the k-th nearest other point (the radius scale)."""
    if len(cloud) < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k}")
    d, _ = knn_excluding_self(index, k)
    return float(d[:, k - 1].mean())


def estimate_normals(cloud: PointCloud, index: PointIndex, stats: ScaleStats,
                     viewpoint=None) -> PointCloud:
    """PCA normals oriented toward the observing sensor.

    Orientation reference, in order of preference: per-point sensor
    positions, an explicit `viewpoint`, else the +z axis. Points whose
    restricted neighborhood is degenerate get a NaN (flagged) normal.
    """
    nbr_idx, _, mask = restricted_neighbor_table(cloud, index, stats.k, stats.r_bar)
    _, normals, valid = _batch_pca(cloud.positions, nbr_idx, mask)

    if cloud.sensor_positions is not None:
        toward = cloud.sensor_positions - cloud.positions
    elif viewpoint is not None:
        toward = np.asarray(viewpoint, dtype=np.float64).reshape(1, 3) - cloud.positions
    else:
        toward = np.tile(np.array([0.0, 0.0, 1.0]), (len(cloud), 1))
    dots = np.einsum("ij,ij->i", normals, toward)
    normals = np.where((dots < 0.0)[:, None], -normals, normals)
    normals[~valid] = np.nan
    return cloud.replace(normals=normals)


def compute_scale_stats(cloud: PointCloud, index: PointIndex, k: int = DEFAULT_K) -> ScaleStats:
    """r_bar plus the error bound e_bar; the cloud must already carry normals.

    e_bar pools |n_i . (p_k - p_i)| over every (point, restricted neighbor)
    pair, skipping points with flagged normals.
    """
    r_bar = mean_kth_neighbor_distance(cloud, index, k)
    nbr_idx, _, mask = restricted_neighbor_table(cloud, index, k, r_bar)
    valid = cloud.valid_normal_mask()
    if not valid.any():
        raise ValueError("cloud has no oriented normals; estimate normals first")
    pos = cloud.positions
    nrm = np.where(valid[:, None], cloud.normals, 0.0)
    pts = pos[np.where(nbr_idx >= 0, nbr_idx, 0)]
    eps = np.einsum("nj,nkj->nk", nrm, pts - pos[:, None, :])
    pair_mask = mask & valid[:, None]
    total = pair_mask.sum()
    e_bar = float(np.abs(eps[pair_mask]).sum() / total) if total else 0.0
    return ScaleStats(
        r_bar=r_bar, e_bar=e_bar, k=k,
        meta={"radius_definition": "mean distance to k-th nearest neighbor",
              "error_definition": "pooled mean over all neighbor pairs"},
    )


def eigen_descriptors(eigenvalues: np.ndarray):
    """(linearity, planarity, sphericity) from descending eigenvalue rows."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    squeeze = lam.ndim == 1
    lam = np.atleast_2d(lam)
    l1 = lam[:, 0]
    if np.any(l1 <= 0):
        raise DegenerateNeighborhoodError("leading eigenvalue must be positive")
    linearity = (lam[:, 0] - lam[:, 1]) / l1
    planarity = (lam[:, 1] - lam[:, 2]) / l1
    sphericity = lam[:, 2] / l1
    if squeeze:
        return float(linearity[0]), float(planarity[0]), float(sphericity[0])
    return linearity, planarity, sphericity


def classify_descriptors(linearity, planarity, sphericity) -> np.ndarray:
    """Largest-descriptor group; ties prefer linear, then planar."""
    linearity = np.atleast_1d(linearity)
    planarity = np.atleast_1d(planarity)
    sphericity = np.atleast_1d(sphericity)
    out = np.full(len(linearity), int(SurfaceGroup.NON_SURFACE), dtype=np.uint8)
    planar = planarity >= sphericity
    out[planar] = int(SurfaceGroup.GROUND_SURFACE)
    linear = (linearity >= planarity) & (linearity >= sphericity)
    out[linear] = int(SurfaceGroup.LINEAR)
    return out


def classify_by_descriptors(cloud: PointCloud, index: PointIndex,
                            stats: ScaleStats) -> PointCloud:
    """Assign surface groups from local eigenvalue descriptors.

    Degenerate neighborhoods (rank zero or under 3 neighbors) fall back to
    the non-surface group: they carry no usable structure either way.
    """
    nbr_idx, _, mask = restricted_neighbor_table(cloud, index, stats.k, stats.r_bar)
    w, _, valid = _batch_pca(cloud.positions, nbr_idx, mask)
    groups = np.full(len(cloud), int(SurfaceGroup.NON_SURFACE), dtype=np.uint8)
    if valid.any():
        lin, plan, sph = eigen_descriptors(w[valid])
        groups[valid] = classify_descriptors(lin, plan, sph)
    return cloud.replace(groups=groups)


def prepare_cloud(cloud: PointCloud, k: int = DEFAULT_K, viewpoint=None):
    """Index, orient normals, and compute scale stats in one pass.

    Returns (cloud_with_normals, index, stats).
    """
    index = PointIndex(cloud)
    r_bar = mean_kth_neighbor_distance(cloud, index, k)
    bootstrap = ScaleStats(r_bar=r_bar, e_bar=0.0, k=k)
    cloud = estimate_normals(cloud, index, bootstrap, viewpoint=viewpoint)
    stats = compute_scale_stats(cloud, index, k)
    return cloud, index, stats
