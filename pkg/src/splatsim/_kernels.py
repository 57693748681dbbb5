"""Numba kernels for ray-splat intersection and BVH traversal.

All kernels operate on flat float64/int arrays so they can be shared by the
single-ray query API and the batched scan simulation. No fastmath: results
must be bit-reproducible.

BVH node encoding: ``left[i] >= 0`` is an internal node with children
``left[i]``/``right[i]``; a leaf stores ``left[i] = -(start + 1)`` and
``right[i] = count`` into the permuted primitive array.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

# stale-TBB advisory from numba's threading-layer probe; harmless fallback
warnings.filterwarnings("ignore", message=".*TBB.*", module="numba.np.ufunc.parallel")

from numba import njit, prange

PLANE_PARALLEL_EPS = 1e-12
MAX_STACK = 128


@njit(cache=True, inline="always")
def _splat_t(ox, oy, oz, dx, dy, dz, cx, cy, cz, nx, ny, nz, radius, t_min, t_max):
    """Ray-disk intersection parameter, or -1.0 when there is no hit.

    Solves the ray-plane equation, rejects near-parallel rays, then applies
    the strict in-radius check on the in-plane offset vector.
    """
    denom = dx * nx + dy * ny + dz * nz
    if abs(denom) < PLANE_PARALLEL_EPS:
        return -1.0
    t = ((cx - ox) * nx + (cy - oy) * ny + (cz - oz) * nz) / denom
    if t <= t_min or t > t_max:
        return -1.0
    vx = ox + dx * t - cx
    vy = oy + dy * t - cy
    vz = oz + dz * t - cz
    if vx * vx + vy * vy + vz * vz < radius * radius:
        return t
    return -1.0


@njit(cache=True, inline="always")
def _box_overlaps(bx0, by0, bz0, bx1, by1, bz1, ox, oy, oz, dx, dy, dz, t_hi):
    """Slab test: does the ray intersect the box within [0, t_hi]?"""
    tmin = 0.0
    tmax = t_hi
    if dx != 0.0:
        inv = 1.0 / dx
        t1 = (bx0 - ox) * inv
        t2 = (bx1 - ox) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
    elif ox < bx0 or ox > bx1:
        return False
    if dy != 0.0:
        inv = 1.0 / dy
        t1 = (by0 - oy) * inv
        t2 = (by1 - oy) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
    elif oy < by0 or oy > by1:
        return False
    if dz != 0.0:
        inv = 1.0 / dz
        t1 = (bz0 - oz) * inv
        t2 = (bz1 - oz) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
    elif oz < bz0 or oz > bz1:
        return False
    return tmin <= tmax


@njit(cache=True, inline="always")
def _frame_pass(frame_id, frame_filter, has_filter):
    # splats without a frame id (-1) always pass
    return (not has_filter) or frame_id < 0 or frame_id == frame_filter


@njit(cache=True)
def first_hit(node_min, node_max, node_left, node_right, prim,
              centers, normals, radii, frame_ids,
              ox, oy, oz, dx, dy, dz, max_range, t_min,
              frame_filter, has_filter):
    """Minimum-t hit along one ray; ties broken by lower splat index.

    Returns (t, splat_index); index is -1 when nothing is hit.
    """
    stack = np.empty(MAX_STACK, dtype=np.int32)
    stack[0] = 0
    top = 1
    best_t = np.inf
    best_i = -1
    while top > 0:
        top -= 1
        node = stack[top]
        bound = best_t if best_t < max_range else max_range
        if not _box_overlaps(node_min[node, 0], node_min[node, 1], node_min[node, 2],
                             node_max[node, 0], node_max[node, 1], node_max[node, 2],
                             ox, oy, oz, dx, dy, dz, bound):
            continue
        left = node_left[node]
        if left >= 0:
            stack[top] = left
            stack[top + 1] = node_right[node]
            top += 2
        else:
            start = -left - 1
            for k in range(start, start + node_right[node]):
                s = prim[k]
                if not _frame_pass(frame_ids[s], frame_filter, has_filter):
                    continue
                t = _splat_t(ox, oy, oz, dx, dy, dz,
                             centers[s, 0], centers[s, 1], centers[s, 2],
                             normals[s, 0], normals[s, 1], normals[s, 2],
                             radii[s], t_min, max_range)
                if t > 0.0 and (t < best_t or (t == best_t and s < best_i)):
                    best_t = t
                    best_i = s
    if best_i < 0:
        return np.inf, -1
    return best_t, best_i


@njit(cache=True)
def all_hits(node_min, node_max, node_left, node_right, prim,
             centers, normals, radii, frame_ids,
             ox, oy, oz, dx, dy, dz, max_range, t_min,
             frame_filter, has_filter, out_t, out_i):
    """Collect every hit along one ray (unordered). Returns the hit count."""
    stack = np.empty(MAX_STACK, dtype=np.int32)
    stack[0] = 0
    top = 1
    n = 0
    while top > 0:
        top -= 1
        node = stack[top]
        if not _box_overlaps(node_min[node, 0], node_min[node, 1], node_min[node, 2],
                             node_max[node, 0], node_max[node, 1], node_max[node, 2],
                             ox, oy, oz, dx, dy, dz, max_range):
            continue
        left = node_left[node]
        if left >= 0:
            stack[top] = left
            stack[top + 1] = node_right[node]
            top += 2
        else:
            start = -left - 1
            for k in range(start, start + node_right[node]):
                s = prim[k]
                if not _frame_pass(frame_ids[s], frame_filter, has_filter):
                    continue
                t = _splat_t(ox, oy, oz, dx, dy, dz,
                             centers[s, 0], centers[s, 1], centers[s, 2],
                             normals[s, 0], normals[s, 1], normals[s, 2],
                             radii[s], t_min, max_range)
                if t > 0.0:
                    out_t[n] = t
                    out_i[n] = s
                    n += 1
    return n


@njit(cache=True, parallel=True)
def first_hit_batch(node_min, node_max, node_left, node_right, prim,
                    centers, normals, radii, frame_ids,
                    origin, dirs, max_range, t_min, frame_filter, has_filter,
                    out_t, out_i):
    for r in prange(len(dirs)):
        t, i = first_hit(node_min, node_max, node_left, node_right, prim,
                         centers, normals, radii, frame_ids,
                         origin[0], origin[1], origin[2],
                         dirs[r, 0], dirs[r, 1], dirs[r, 2],
                         max_range, t_min, frame_filter, has_filter)
        out_t[r] = t
        out_i[r] = i


@njit(cache=True)
def _smallest_hits(node_min, node_max, node_left, node_right, prim,
                   centers, normals, radii, frame_ids,
                   ox, oy, oz, dx, dy, dz, max_range, t_min,
                   frame_filter, has_filter, buf_t, buf_i):
    """Keep the `len(buf_t)` smallest hits, (t, index)-ordered. Returns count.

    Once the buffer is full the largest kept t prunes the traversal.
    """
    cap = len(buf_t)
    stack = np.empty(MAX_STACK, dtype=np.int32)
    stack[0] = 0
    top = 1
    n = 0
    while top > 0:
        top -= 1
        node = stack[top]
        bound = buf_t[cap - 1] if n == cap else max_range
        if not _box_overlaps(node_min[node, 0], node_min[node, 1], node_min[node, 2],
                             node_max[node, 0], node_max[node, 1], node_max[node, 2],
                             ox, oy, oz, dx, dy, dz, bound):
            continue
        left = node_left[node]
        if left >= 0:
            stack[top] = left
            stack[top + 1] = node_right[node]
            top += 2
        else:
            start = -left - 1
            for k in range(start, start + node_right[node]):
                s = prim[k]
                if not _frame_pass(frame_ids[s], frame_filter, has_filter):
                    continue
                t = _splat_t(ox, oy, oz, dx, dy, dz,
                             centers[s, 0], centers[s, 1], centers[s, 2],
                             normals[s, 0], normals[s, 1], normals[s, 2],
                             radii[s], t_min, max_range)
                if t <= 0.0:
                    continue
                if n == cap and (t > buf_t[cap - 1]
                                 or (t == buf_t[cap - 1] and s > buf_i[cap - 1])):
                    continue
                # insertion sort, ties by splat index
                pos = n if n < cap else cap - 1
                while pos > 0 and (buf_t[pos - 1] > t
                                   or (buf_t[pos - 1] == t and buf_i[pos - 1] > s)):
                    if pos < cap:
                        buf_t[pos] = buf_t[pos - 1]
                        buf_i[pos] = buf_i[pos - 1]
                    pos -= 1
                buf_t[pos] = t
                buf_i[pos] = s
                if n < cap:
                    n += 1
    return n


@njit(cache=True, parallel=True)
def weighted_batch(node_min, node_max, node_left, node_right, prim,
                   centers, normals, radii, labels, frame_ids,
                   origin, dirs, max_range, depth, gap,
                   frame_filter, has_filter,
                   out_point, out_t, out_first, out_count):
    """Multi-depth weighted returns for a batch of rays sharing one origin.

    Walks the ascending hits from the first one, accumulating while the hit
    count stays below `depth`, the class matches the first hit's class, and
    consecutive hits are no farther apart than `gap`. The return is the
    exponential-kernel weighted mean of the accumulated hit points.
    """
    for r in prange(len(dirs)):
        buf_t = np.empty(depth, dtype=np.float64)
        buf_i = np.empty(depth, dtype=np.int64)
        n = _smallest_hits(node_min, node_max, node_left, node_right, prim,
                           centers, normals, radii, frame_ids,
                           origin[0], origin[1], origin[2],
                           dirs[r, 0], dirs[r, 1], dirs[r, 2],
                           max_range, 0.0, frame_filter, has_filter,
                           buf_t, buf_i)
        if n == 0:
            out_first[r] = -1
            out_count[r] = 0
            out_t[r] = np.inf
            continue
        first_label = labels[buf_i[0]]
        acc = 1
        while acc < n:
            if labels[buf_i[acc]] != first_label:
                break
            if buf_t[acc] - buf_t[acc - 1] > gap:
                break
            acc += 1
        half = acc / 2.0
        sw = 0.0
        swx = 0.0
        swy = 0.0
        swz = 0.0
        swt = 0.0
        for q in range(acc):
            beta = math.exp(-abs((q + 1) - half) / half)
            t = buf_t[q]
            sw += beta
            swx += beta * (origin[0] + dirs[r, 0] * t)
            swy += beta * (origin[1] + dirs[r, 1] * t)
            swz += beta * (origin[2] + dirs[r, 2] * t)
            swt += beta * t
        out_point[r, 0] = swx / sw
        out_point[r, 1] = swy / sw
        out_point[r, 2] = swz / sw
        out_t[r] = swt / sw
        out_first[r] = buf_i[0]
        out_count[r] = acc


@njit(cache=True, parallel=True)
def brute_first_hit_batch(centers, normals, radii, frame_ids,
                          origin, dirs, max_range, t_min, frame_filter, has_filter,
                          out_t, out_i):
    """Reference O(rays x splats) first-hit, used as the performance baseline."""
    m = len(radii)
    for r in prange(len(dirs)):
        best_t = np.inf
        best_i = -1
        for s in range(m):
            if not _frame_pass(frame_ids[s], frame_filter, has_filter):
                continue
            t = _splat_t(origin[0], origin[1], origin[2],
                         dirs[r, 0], dirs[r, 1], dirs[r, 2],
                         centers[s, 0], centers[s, 1], centers[s, 2],
                         normals[s, 0], normals[s, 1], normals[s, 2],
                         radii[s], t_min, max_range)
            if t > 0.0 and (t < best_t or (t == best_t and s < best_i)):
                best_t = t
                best_i = s
        out_t[r] = best_t
        out_i[r] = best_i
