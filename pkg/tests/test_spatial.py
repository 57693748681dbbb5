import numpy as np
import pytest

from splatsim.cloud import PointCloud, SplatSet
from splatsim.spatial import (Ray, build_bvh, build_point_index, bvh_all_hits,
                              bvh_first_hit, cast_first_hits,
                              restricted_neighborhood)

import oracles
from conftest import random_splat_set, random_unit_vectors


def test_single_point_self_query():
    index = build_point_index(PointCloud(positions=np.zeros((1, 3))))
    d, i = index.knn([0, 0, 0], k=1)
    assert i[0] == 0 and d[0] == 0.0


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        build_point_index(PointCloud(positions=np.zeros((0, 3))))


def test_cube_corners_equidistant():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                       dtype=float)
    index = build_point_index(PointCloud(positions=corners))
    d, i = index.knn([0.5, 0.5, 0.5], k=8)
    assert len(i) == 8 and set(i.tolist()) == set(range(8))
    assert np.allclose(d, d[0])


def test_knn_matches_linear_scan(rng):
    positions = rng.uniform(-5, 5, (10000, 3))
    index = build_point_index(PointCloud(positions=positions))
    for _ in range(100):
        q = rng.uniform(-5, 5, 3)
        d, i = index.knn(q, k=7)
        oi, od = oracles.brute_knn(positions, q, 7)
        assert np.allclose(d, od)
        assert np.array_equal(np.sort(i), np.sort(oi))  # tie order may differ


def test_restricted_neighborhood_k_binds(rng):
    # dense cluster: more than k points inside the ball
    positions = rng.normal(0, 0.01, (200, 3))
    index = build_point_index(PointCloud(positions=positions))
    i, d = restricted_neighborhood(index, positions[0], k=40, radius=10.0)
    assert len(i) == 40
    assert np.all(np.diff(d) >= 0)
    assert 0 not in i


def test_restricted_neighborhood_radius_binds(rng):
    # 5 points near the query, the rest far outside the ball
    near = rng.normal(0, 0.01, (5, 3))
    far = rng.normal(50, 0.01, (100, 3))
    positions = np.vstack([[[0, 0, 0]], near, far])
    index = build_point_index(PointCloud(positions=positions))
    i, d = restricted_neighborhood(index, positions[0], k=40, radius=1.0)
    assert len(i) == 5


def test_restricted_neighborhood_equals_brute_intersection(rng):
    positions = rng.uniform(-2, 2, (500, 3))
    index = build_point_index(PointCloud(positions=positions))
    for qi in rng.integers(0, 500, 25):
        p = positions[qi]
        i, d = restricted_neighborhood(index, p, k=20, radius=0.8)
        others = np.delete(np.arange(500), qi)
        ki, _ = oracles.brute_knn(positions[others], p, 20)
        knn_set = set(others[ki].tolist())
        ball_set = set(oracles.brute_ball(positions, p, 0.8).tolist()) - {qi}
        assert set(i.tolist()) == (knn_set & ball_set)


# --- BVH ---

def _axis_splat(z, radius=1.0, label=None):
    return dict(center=[0, 0, z], normal=[0, 0, 1], radius=radius, label=label)


def make_set(specs):
    centers = np.array([s["center"] for s in specs], dtype=float)
    normals = np.array([s["normal"] for s in specs], dtype=float)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    radii = np.array([s["radius"] for s in specs], dtype=float)
    labels = np.array([s.get("label") if s.get("label") is not None else -1
                       for s in specs], dtype=np.int64)
    return SplatSet.build(centers, normals, radii, labels=labels)


def test_single_splat_bvh():
    s = make_set([_axis_splat(0.0)])
    bvh = build_bvh(s)
    assert bvh.node_left[0] < 0          # single leaf
    hit = bvh_first_hit(bvh, s, Ray(origin=(0, 0, 5), direction=(0, 0, -1), max_range=10))
    assert hit is not None
    assert hit.t == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(hit.point, [0, 0, 0], atol=1e-12)


def test_empty_set_rejected():
    s = SplatSet.build(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        build_bvh(s)


def test_ray_through_gap_misses():
    s = make_set([dict(center=[-2, 0, 0], normal=[0, 0, 1], radius=0.5),
                  dict(center=[2, 0, 0], normal=[0, 0, 1], radius=0.5)])
    bvh = build_bvh(s)
    ray = Ray(origin=(0, 0, 5), direction=(0, 0, -1), max_range=20)
    assert bvh_first_hit(bvh, s, ray) is None
    assert bvh_all_hits(bvh, s, ray) == []


def test_radius_check_excludes_offset_ray():
    s = make_set([_axis_splat(0.0, radius=0.5)])
    bvh = build_bvh(s)
    ray = Ray(origin=(0.6, 0, 5), direction=(0, 0, -1), max_range=10)
    assert bvh_first_hit(bvh, s, ray) is None


def test_in_plane_ray_never_hits():
    s = make_set([_axis_splat(0.0, radius=5.0)])
    bvh = build_bvh(s)
    ray = Ray(origin=(-10, 0, 0), direction=(1, 0, 0), max_range=100)
    assert bvh_first_hit(bvh, s, ray) is None


def test_self_intersection_guard():
    # hit closer than 1e-4 is suppressed for first-hit queries
    s = make_set([_axis_splat(0.0)])
    bvh = build_bvh(s)
    ray = Ray(origin=(0, 0, 5e-5), direction=(0, 0, -1), max_range=10)
    assert bvh_first_hit(bvh, s, ray) is None
    assert len(bvh_all_hits(bvh, s, ray)) == 1


def test_coaxial_stack_all_hits_ordered():
    s = make_set([_axis_splat(z) for z in (1.0, 2.0, 3.0)])
    bvh = build_bvh(s)
    ray = Ray(origin=(0, 0, 0), direction=(0, 0, 1), max_range=10)
    hits = bvh_all_hits(bvh, s, ray)
    assert [h.splat_index for h in hits] == [0, 1, 2]
    assert np.allclose([h.t for h in hits], [1, 2, 3], atol=1e-12)


def test_frame_filter_drops_other_frames():
    specs = [_axis_splat(z) for z in (1.0, 2.0, 3.0)]
    s = make_set(specs)
    s = SplatSet.build(s.centers, s.normals, s.radii,
                       frame_ids=np.array([-1, 7, -1], dtype=np.int64))
    bvh = build_bvh(s)
    ray = Ray(origin=(0, 0, 0), direction=(0, 0, 1), max_range=10)
    hits = bvh_all_hits(bvh, s, ray, frame_filter=8)
    assert [h.splat_index for h in hits] == [0, 2]
    hits = bvh_all_hits(bvh, s, ray, frame_filter=7)
    assert [h.splat_index for h in hits] == [0, 1, 2]


def test_equal_t_tie_prefers_lower_index():
    # two coplanar overlapping splats: identical t
    s = make_set([dict(center=[0.1, 0, 1.0], normal=[0, 0, 1], radius=1.0),
                  dict(center=[-0.1, 0, 1.0], normal=[0, 0, 1], radius=1.0)])
    bvh = build_bvh(s)
    ray = Ray(origin=(0, 0, 0), direction=(0, 0, 1), max_range=10)
    hit = bvh_first_hit(bvh, s, ray)
    assert hit.splat_index == 0
    hits = bvh_all_hits(bvh, s, ray)
    assert [h.splat_index for h in hits] == [0, 1]


def test_bvh_matches_brute_force_random_scenes(rng):
    # 2000 splats x 2000 random rays: exact agreement with the numpy oracle
    s = random_splat_set(rng, 2000)
    bvh = build_bvh(s)
    origins = rng.uniform(-12, 12, (2000, 3))
    dirs = random_unit_vectors(rng, 2000)
    for o, d in zip(origins, dirs):
        ray = Ray(origin=o, direction=d, max_range=40.0)
        got = bvh_first_hit(bvh, s, ray)
        want = oracles.ray_splat_first(s.centers, s.normals, s.radii, o, d, 40.0, 1e-4)
        if want is None:
            assert got is None
        else:
            assert got.splat_index == want[1]
            assert got.t == pytest.approx(want[0], rel=1e-9)


def test_bvh_all_hits_matches_brute_force(rng):
    # overlapping stacks force many hits per ray
    s = random_splat_set(rng, 500, extent=3.0, r_lo=0.5, r_hi=2.0)
    bvh = build_bvh(s)
    for _ in range(300):
        o = rng.uniform(-4, 4, 3)
        d = random_unit_vectors(rng, 1)[0]
        ray = Ray(origin=o, direction=d, max_range=15.0)
        got = bvh_all_hits(bvh, s, ray)
        wt, wi = oracles.ray_splat_all(s.centers, s.normals, s.radii, o, d, 15.0, 0.0)
        assert [h.splat_index for h in got] == wi.tolist()
        assert np.allclose([h.t for h in got], wt, rtol=1e-12, atol=0)
        # monotone t, ties by index
        ts = np.array([h.t for h in got])
        assert np.all(np.diff(ts) >= 0)


def test_hit_geometric_invariants(rng):
    s = random_splat_set(rng, 300)
    bvh = build_bvh(s)
    checked = 0
    for _ in range(500):
        o = rng.uniform(-12, 12, 3)
        d = random_unit_vectors(rng, 1)[0]
        ray = Ray(origin=o, direction=d, max_range=50.0)
        hit = bvh_first_hit(bvh, s, ray)
        if hit is None:
            continue
        checked += 1
        c = s.centers[hit.splat_index]
        n = s.normals[hit.splat_index]
        assert 0 < hit.t <= ray.max_range
        assert abs(float((hit.point - c) @ n)) <= 1e-7 * (1 + hit.t)
        assert np.linalg.norm(hit.point - c) <= s.radii[hit.splat_index]
    assert checked > 50


def test_batch_matches_single_ray_queries(rng):
    s = random_splat_set(rng, 400)
    bvh = build_bvh(s)
    dirs = random_unit_vectors(rng, 200)
    origin = np.array([0.0, 0.0, 0.0])
    ts, idx = cast_first_hits(bvh, s, origin, dirs, 40.0)
    for r in range(len(dirs)):
        hit = bvh_first_hit(bvh, s, Ray(origin=origin, direction=dirs[r], max_range=40.0))
        if hit is None:
            assert idx[r] == -1
        else:
            assert idx[r] == hit.splat_index and ts[r] == hit.t


def test_ray_validation():
    with pytest.raises(ValueError):
        Ray(origin=(0, 0, 0), direction=(0, 0, 2), max_range=1.0)
    with pytest.raises(ValueError):
        Ray(origin=(0, 0, 0), direction=(0, 0, 1), max_range=0.0)
