import numpy as np
import pytest

from splatsim.cloud import PointCloud, SurfaceGroup
from splatsim.errors import DegenerateNeighborhoodError
from splatsim.features import (ScaleStats, classify_by_descriptors,
                               classify_descriptors, compute_scale_stats,
                               eigen_descriptors, estimate_normals,
                               mean_kth_neighbor_distance, neighborhood_pca,
                               prepare_cloud)
from splatsim.spatial import build_point_index

import oracles


def test_pca_exact_plane_square():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    frame = neighborhood_pca(pts)
    assert frame.eigenvalues[2] == pytest.approx(0.0, abs=1e-15)
    normal = frame.eigenvectors[:, 2]
    assert np.allclose(np.abs(normal), [0, 0, 1], atol=1e-12)


def test_pca_collinear_points():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    frame = neighborhood_pca(pts)
    assert frame.eigenvalues[1] == pytest.approx(0.0, abs=1e-15)
    assert frame.eigenvalues[2] == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(np.abs(frame.eigenvectors[:, 0]), [1, 0, 0], atol=1e-12)


def test_pca_gaussian_blob_matches_dense_eigensolver(rng):
    for _ in range(20):
        pts = rng.normal(size=(60, 3)) @ rng.normal(size=(3, 3))
        frame = neighborhood_pca(pts)
        w, _ = oracles.covariance_eigh(pts)
        assert np.allclose(frame.eigenvalues, w, rtol=0, atol=1e-9)
        # orthonormal eigenvector matrix
        g = frame.eigenvectors.T @ frame.eigenvectors
        assert np.allclose(g, np.eye(3), atol=1e-6)


def test_pca_degenerate_inputs():
    with pytest.raises(DegenerateNeighborhoodError):
        neighborhood_pca(np.zeros((2, 3)))
    with pytest.raises(DegenerateNeighborhoodError):
        neighborhood_pca(np.zeros((5, 3)))          # rank 0


def _plane_cloud_with_sensor(rng, n, sensor_z, noise=0.0):
    pts = np.column_stack([rng.uniform(-2, 2, (n, 2)), np.zeros(n)])
    if noise:
        pts[:, 2] += rng.normal(0, noise, n)
    sensor = np.tile([0.0, 0.0, sensor_z], (n, 1))
    return PointCloud(positions=pts, sensor_positions=sensor)


def test_normals_oriented_toward_sensor_above(rng):
    cloud = _plane_cloud_with_sensor(rng, 500, sensor_z=10.0)
    index = build_point_index(cloud)
    stats = ScaleStats(r_bar=1.0, e_bar=0.0, k=12)
    out = estimate_normals(cloud, index, stats)
    assert np.allclose(out.normals, [0, 0, 1], atol=1e-9)


def test_normals_flip_with_sensor_below(rng):
    cloud = _plane_cloud_with_sensor(rng, 500, sensor_z=-10.0)
    index = build_point_index(cloud)
    out = estimate_normals(cloud, index, ScaleStats(r_bar=1.0, e_bar=0.0, k=12))
    assert np.allclose(out.normals, [0, 0, -1], atol=1e-9)


def test_isolated_point_flagged(rng):
    pts = np.vstack([rng.normal(0, 0.1, (50, 3)), [[100, 100, 100]]])
    cloud = PointCloud(positions=pts)
    index = build_point_index(cloud)
    out = estimate_normals(cloud, index, ScaleStats(r_bar=0.5, e_bar=0.0, k=10))
    assert not out.valid_normal_mask()[-1]
    assert out.valid_normal_mask()[:50].all()


def test_orientation_invariant_for_all_points(rng):
    n = 800
    pts = rng.normal(size=(n, 3))
    sensor = rng.normal(size=(n, 3)) * 5
    cloud = PointCloud(positions=pts, sensor_positions=sensor)
    index = build_point_index(cloud)
    out = estimate_normals(cloud, index, ScaleStats(r_bar=2.0, e_bar=0.0, k=15))
    ok = out.valid_normal_mask()
    dots = np.einsum("ij,ij->i", out.normals[ok], (sensor - pts)[ok])
    assert (dots >= 0).all()


def test_r_bar_unit_grid_line():
    pts = np.column_stack([np.arange(50, dtype=float), np.zeros(50), np.zeros(50)])
    cloud = PointCloud(positions=pts)
    index = build_point_index(cloud)
    assert mean_kth_neighbor_distance(cloud, index, k=1) == pytest.approx(1.0)


def test_e_bar_zero_on_exact_plane(rng):
    cloud = _plane_cloud_with_sensor(rng, 400, sensor_z=5.0)
    index = build_point_index(cloud)
    cloud = estimate_normals(cloud, index, ScaleStats(r_bar=1.0, e_bar=0.0, k=10))
    stats = compute_scale_stats(cloud, index, k=10)
    assert stats.e_bar == pytest.approx(0.0, abs=1e-12)


def test_e_bar_analytic_half_normal(rng):
    # noisy plane, 100k points: each pooled pair measures eps = z_k - z_i
    # to the tangent plane through p_i, so eps ~ N(0, 2 sigma^2) and
    # E|eps| = sqrt(2) * sigma * sqrt(2/pi) = 2 sigma / sqrt(pi)
    sigma = 0.01
    n = 100_000
    cloud = PointCloud(
        positions=np.column_stack([
            rng.uniform(-20, 20, (n, 2)), rng.normal(0, sigma, n)]),
        sensor_positions=np.tile([0.0, 0.0, 50.0], (n, 1)),
    )
    cloud, index, stats = prepare_cloud(cloud, k=40)
    analytic = 2 * sigma / np.sqrt(np.pi)
    assert stats.e_bar == pytest.approx(analytic, rel=0.05)


def test_e_bar_matches_brute_force_recomputation(rng):
    sigma = 0.01
    n = 1500
    k = 15
    cloud = PointCloud(
        positions=np.column_stack([
            rng.uniform(-3, 3, (n, 2)), rng.normal(0, sigma, n)]),
        sensor_positions=np.tile([0.0, 0.0, 20.0], (n, 1)),
    )
    cloud, index, stats = prepare_cloud(cloud, k=k)

    # full pooled-pairs mean, recomputed by linear scan
    pos, nrm = cloud.positions, cloud.normals
    valid = cloud.valid_normal_mask()
    total, count = 0.0, 0
    for i in range(n):
        if not valid[i]:
            continue
        d = np.linalg.norm(pos - pos[i], axis=1)
        order = np.argsort(d, kind="stable")
        order = order[order != i][:k]
        order = order[d[order] <= stats.r_bar]
        total += float(np.abs((pos[order] - pos[i]) @ nrm[i]).sum())
        count += len(order)
    assert stats.e_bar == pytest.approx(total / count, rel=1e-12)


def test_descriptor_identity_and_ranges(rng):
    lam = np.sort(rng.random((10000, 3)), axis=1)[:, ::-1]
    lin, plan, sph = eigen_descriptors(lam)
    assert np.all(np.abs(lin + plan + sph - 1.0) <= 1e-12)
    for d in (lin, plan, sph):
        assert np.all((d >= 0) & (d <= 1))


def test_descriptor_classification_examples():
    # exact plane, exact line, isotropic blob
    lin, plan, sph = eigen_descriptors(np.array([1.0, 1.0, 0.0]))
    assert (lin, plan, sph) == (0.0, 1.0, 0.0)
    assert classify_descriptors(lin, plan, sph)[0] == int(SurfaceGroup.GROUND_SURFACE)

    lin, plan, sph = eigen_descriptors(np.array([1.0, 0.0, 0.0]))
    assert (lin, plan, sph) == (1.0, 0.0, 0.0)
    assert classify_descriptors(lin, plan, sph)[0] == int(SurfaceGroup.LINEAR)

    lin, plan, sph = eigen_descriptors(np.array([1.0, 1.0, 1.0]))
    assert (lin, plan, sph) == (0.0, 0.0, 1.0)
    assert classify_descriptors(lin, plan, sph)[0] == int(SurfaceGroup.NON_SURFACE)


def test_classification_matches_argmax_oracle(rng):
    lam = np.sort(rng.random((5000, 3)), axis=1)[:, ::-1]
    lin, plan, sph = eigen_descriptors(lam)
    got = classify_descriptors(lin, plan, sph)
    stack = np.stack([lin, plan, sph])
    want_code = np.argmax(stack, axis=0)         # argmax takes the first max: tie priority
    lut = np.array([int(SurfaceGroup.LINEAR), int(SurfaceGroup.GROUND_SURFACE),
                    int(SurfaceGroup.NON_SURFACE)], dtype=np.uint8)
    assert np.array_equal(got, lut[want_code])


def test_rigid_invariance(rng):
    n = 2000
    pts = np.column_stack([rng.uniform(-3, 3, (n, 2)), rng.normal(0, 0.02, n)])
    sensor = np.tile([0.0, 0.0, 8.0], (n, 1))
    cloud = PointCloud(positions=pts, sensor_positions=sensor)
    cloud, index, stats = prepare_cloud(cloud, k=20)

    # random rotation + translation
    q = rng.normal(size=(3, 3))
    R, _ = np.linalg.qr(q)
    if np.linalg.det(R) < 0:
        R[:, 0] = -R[:, 0]
    t = rng.normal(size=3) * 10
    moved = PointCloud(positions=pts @ R.T + t, sensor_positions=sensor @ R.T + t)
    moved, midx, mstats = prepare_cloud(moved, k=20)

    assert mstats.e_bar == pytest.approx(stats.e_bar, abs=1e-9)
    assert mstats.r_bar == pytest.approx(stats.r_bar, abs=1e-9)
    ok = cloud.valid_normal_mask() & moved.valid_normal_mask()
    rotated = cloud.normals[ok] @ R.T
    assert np.allclose(np.abs(np.einsum("ij,ij->i", rotated, moved.normals[ok])),
                       1.0, atol=1e-6)


def test_classify_plane_cloud_is_ground_surface(rng):
    # regular grid (no sampling clusters) + small noise: interior points are
    # unambiguously planar; border points see half-disk neighborhoods and
    # may legitimately classify linear
    ax = np.linspace(-3, 3, 55)
    xx, yy = np.meshgrid(ax, ax)
    pts = np.column_stack([xx.ravel(), yy.ravel(), rng.normal(0, 0.005, xx.size)])
    cloud = PointCloud(positions=pts, sensor_positions=np.tile([0., 0., 9.], (len(pts), 1)))
    cloud, index, stats = prepare_cloud(cloud, k=30)
    out = classify_by_descriptors(cloud, index, stats)
    interior = (np.abs(pts[:, :2]) < 3 - stats.r_bar).all(axis=1)
    frac = (out.groups[interior] == int(SurfaceGroup.GROUND_SURFACE)).mean()
    assert frac > 0.99


def test_classify_line_cloud_is_linear(rng):
    pts = np.column_stack([np.linspace(0, 10, 1000),
                           rng.normal(0, 0.003, 1000),
                           rng.normal(0, 0.003, 1000)])
    cloud = PointCloud(positions=pts, sensor_positions=np.tile([0., 5., 5.], (1000, 1)))
    cloud, index, stats = prepare_cloud(cloud, k=20)
    out = classify_by_descriptors(cloud, index, stats)
    assert (out.groups == int(SurfaceGroup.LINEAR)).mean() > 0.99
