"""Spatial queries: exact nearest neighbors over points, BVH over splats.

The point index wraps scipy's cKDTree (exact, deterministic). The BVH is a
median-split hierarchy over splat AABBs with first-hit and all-hits ray
traversal; equal-t ties always resolve to the lower splat index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .cloud import PointCloud, SplatSet

# self-intersection guard for first-hit queries, in meters
T_MIN_EPSILON = 1e-4

_NO_FILTER = (np.int64(-1), False)


def _filter_args(frame_filter):
    if frame_filter is None:
        return _NO_FILTER
    return np.int64(frame_filter), True


class PointIndex:
    """Exact k-NN / radius index over a cloud's positions."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.positions)

    def __len__(self):
        return len(self.cloud)

    def knn(self, p, k: int):
        """k nearest neighbors of an arbitrary point, ascending distance.

        Returns (distances, indices); fewer than k results when the cloud is
        smaller than k.
        """
        k_eff = min(k, len(self))
        d, i = self._tree.query(np.asarray(p, dtype=np.float64), k=k_eff)
        return np.atleast_1d(d), np.atleast_1d(i).astype(np.int64)

    def knn_batch(self, points, k: int):
        """Batched exact k-NN, padded with (inf, -1) when k exceeds the cloud."""
        points = np.asarray(points, dtype=np.float64)
        n = len(self)
        k_eff = min(k, n)
        d, i = self._tree.query(points, k=k_eff)
        d = d.reshape(len(points), k_eff)
        i = i.reshape(len(points), k_eff).astype(np.int64)
        if k_eff < k:
            pad_d = np.full((len(points), k - k_eff), np.inf)
            pad_i = np.full((len(points), k - k_eff), -1, dtype=np.int64)
            d = np.hstack([d, pad_d])
            i = np.hstack([i, pad_i])
        return d, i

    def ball(self, p, radius: float):
        """Indices within `radius` (inclusive), ascending distance."""
        idx = np.asarray(self._tree.query_ball_point(np.asarray(p, dtype=np.float64), radius),
                         dtype=np.int64)
        if idx.size == 0:
            return idx
        d = np.linalg.norm(self.cloud.positions[idx] - np.asarray(p, dtype=np.float64), axis=1)
        order = np.lexsort((idx, d))
        return idx[order]

    def count_ball(self, points, radius: float) -> np.ndarray:
        """Number of indexed points within `radius` of each query point."""
        pts = np.asarray(points, dtype=np.float64)
        other = cKDTree(pts)
        return np.array([len(lst) for lst in other.query_ball_tree(self._tree, radius)],
                        dtype=np.int64)


def build_point_index(cloud: PointCloud) -> PointIndex:
    return PointIndex(cloud)


def restricted_neighborhood(index: PointIndex, p, k: int, radius: float):
    """Neighbors of p: the k nearest, minus any beyond `radius`, minus p itself.

    Returns (indices, distances) sorted by ascending distance. The "query
    point itself" is identified as the single closest zero-distance entry.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be > 0")
    d, i = index.knn(p, k + 1)
    if d.size and d[0] == 0.0:
        d, i = d[1:], i[1:]
    d, i = d[:k], i[:k]
    within = d <= radius
    return i[within], d[within]


def knn_excluding_self(index: PointIndex, k: int):
    """For every cloud point: its k nearest other points, ascending.

    Returns (distances, indices) of shape (n, k), padded with (inf, -1)
    where the cloud runs out of points. Deterministic for fixed input.
    """
    n = len(index)
    pos = index.cloud.positions
    d_full, i_full = index.knn_batch(pos, k + 1)
    rows = np.arange(n)
    valid = i_full >= 0
    self_hit = (i_full == rows[:, None]) & valid
    first_self = self_hit & (np.cumsum(self_hit, axis=1) == 1)
    drop = first_self.copy()
    no_self = ~first_self.any(axis=1)
    drop[no_self, k] = True
    keep = ~drop
    out_d = d_full[keep].reshape(n, k)
    out_i = i_full[keep].reshape(n, k)
    return out_d, out_i


@dataclass(frozen=True)
class Ray:
    """Origin plus unit direction, limited to max_range meters."""

    origin: np.ndarray
    direction: np.ndarray
    max_range: float = np.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "max_range", float(self.max_range))

    def at(self, t: float) -> np.ndarray:
        return self.origin + self.direction * t


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    splat_index: int


@dataclass(frozen=True)
class Bvh:
    """Flat median-split BVH over splat bounding cubes (side = diameter)."""

    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    prim: np.ndarray
    n_splats: int

    def __len__(self):
        return len(self.node_left)


def build_bvh(splats: SplatSet, leaf_size: int = 4) -> Bvh:
    """Median-split build over the longest axis of the centroid bounds."""
    m = len(splats)
    if m == 0:
        raise ValueError("cannot build a BVH over an empty splat set")
    centers = splats.centers
    r = splats.radii[:, None]
    box_lo = centers - r
    box_hi = centers + r

    max_nodes = 2 * m + 1
    node_min = np.empty((max_nodes, 3))
    node_max = np.empty((max_nodes, 3))
    node_left = np.empty(max_nodes, dtype=np.int32)
    node_right = np.empty(max_nodes, dtype=np.int32)
    prim = np.arange(m, dtype=np.int32)

    n_nodes = 1
    stack = [(0, 0, m)]
    while stack:
        node, start, end = stack.pop()
        members = prim[start:end]
        node_min[node] = box_lo[members].min(axis=0)
        node_max[node] = box_hi[members].max(axis=0)
        count = end - start
        c_lo = centers[members].min(axis=0)
        c_hi = centers[members].max(axis=0)
        extent = c_hi - c_lo
        if count <= leaf_size or extent.max() == 0.0:
            node_left[node] = -(start + 1)
            node_right[node] = count
            continue
        axis = int(np.argmax(extent))
        order = np.argsort(centers[members, axis], kind="stable")
        prim[start:end] = members[order]
        mid = start + count // 2
        left = n_nodes
        right = n_nodes + 1
        n_nodes += 2
        node_left[node] = left
        node_right[node] = right
        stack.append((right, mid, end))
        stack.append((left, start, mid))

    return Bvh(
        node_min=node_min[:n_nodes].copy(),
        node_max=node_max[:n_nodes].copy(),
        node_left=node_left[:n_nodes].copy(),
        node_right=node_right[:n_nodes].copy(),
        prim=prim,
        n_splats=m,
    )


def _bvh_args(bvh: Bvh, splats: SplatSet):
    return (bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right, bvh.prim,
            splats.centers, splats.normals, splats.radii, splats.frame_ids)


def bvh_first_hit(bvh: Bvh, splats: SplatSet, ray: Ray,
                  t_min: float = T_MIN_EPSILON, frame_filter=None) -> Hit | None:
    """Closest intersection along the ray, or None.

    Hits closer than the self-intersection guard `t_min` are ignored.
    """
    ff, has = _filter_args(frame_filter)
    t, i = _kernels.first_hit(*_bvh_args(bvh, splats),
                              ray.origin[0], ray.origin[1], ray.origin[2],
                              ray.direction[0], ray.direction[1], ray.direction[2],
                              ray.max_range, t_min, ff, has)
    if i < 0:
        return None
    return Hit(t=float(t), point=ray.at(t), splat_index=int(i))


def bvh_all_hits(bvh: Bvh, splats: SplatSet, ray: Ray, frame_filter=None) -> list[Hit]:
    """Every intersection along the ray, ascending t (ties by splat index)."""
    ff, has = _filter_args(frame_filter)
    out_t = np.empty(bvh.n_splats, dtype=np.float64)
    out_i = np.empty(bvh.n_splats, dtype=np.int64)
    n = _kernels.all_hits(*_bvh_args(bvh, splats),
                          ray.origin[0], ray.origin[1], ray.origin[2],
                          ray.direction[0], ray.direction[1], ray.direction[2],
                          ray.max_range, 0.0, ff, has, out_t, out_i)
    order = np.lexsort((out_i[:n], out_t[:n]))
    return [Hit(t=float(out_t[:n][j]), point=ray.at(out_t[:n][j]),
                splat_index=int(out_i[:n][j])) for j in order]


def cast_first_hits(bvh: Bvh, splats: SplatSet, origin, directions,
                    max_range: float, t_min: float = T_MIN_EPSILON, frame_filter=None):
    """Batched first-hit query for rays sharing one origin.

    Returns (t, splat_index) arrays; index -1 marks a miss (t = inf there).
    """
    ff, has = _filter_args(frame_filter)
    dirs = np.ascontiguousarray(directions, dtype=np.float64)
    out_t = np.empty(len(dirs))
    out_i = np.empty(len(dirs), dtype=np.int64)
    _kernels.first_hit_batch(*_bvh_args(bvh, splats),
                             np.asarray(origin, dtype=np.float64), dirs,
                             max_range, t_min, ff, has, out_t, out_i)
    return out_t, out_i


def cast_weighted_returns(bvh: Bvh, splats: SplatSet, origin, directions,
                          max_range: float, depth: int, max_gap: float,
                          frame_filter=None):
    """Batched multi-depth weighted returns (see lidar.weighted_return).

    Returns (points, t, first_index, accumulated_count); first_index -1
    marks a miss.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    ff, has = _filter_args(frame_filter)
    dirs = np.ascontiguousarray(directions, dtype=np.float64)
    n = len(dirs)
    out_point = np.empty((n, 3))
    out_t = np.empty(n)
    out_first = np.empty(n, dtype=np.int64)
    out_count = np.empty(n, dtype=np.int64)
    _kernels.weighted_batch(*_bvh_args(bvh, splats)[:5],
                            splats.centers, splats.normals, splats.radii,
                            splats.labels, splats.frame_ids,
                            np.asarray(origin, dtype=np.float64), dirs,
                            max_range, depth, max_gap, ff, has,
                            out_point, out_t, out_first, out_count)
    return out_point, out_t, out_first, out_count


def brute_force_first_hits(splats: SplatSet, origin, directions, max_range: float,
                           t_min: float = T_MIN_EPSILON, frame_filter=None):
    """O(rays x splats) first-hit scan, the no-acceleration baseline."""
    ff, has = _filter_args(frame_filter)
    dirs = np.ascontiguousarray(directions, dtype=np.float64)
    out_t = np.empty(len(dirs))
    out_i = np.empty(len(dirs), dtype=np.int64)
    _kernels.brute_first_hit_batch(splats.centers, splats.normals, splats.radii,
                                   splats.frame_ids,
                                   np.asarray(origin, dtype=np.float64), dirs,
                                   max_range, t_min, ff, has, out_t, out_i)
    return out_t, out_i
