import numpy as np
import pytest

from splatsim.cloud import (GroupMapping, PointCloud, Splat, SplatSet,
                            SurfaceGroup, map_semantic_groups)
from splatsim.errors import ConfigError, StructuralError


def test_cloud_rejects_nan_positions():
    with pytest.raises(ValueError):
        PointCloud(positions=np.array([[0.0, 0.0, np.nan]]))


def test_cloud_rejects_length_mismatch():
    with pytest.raises(StructuralError):
        PointCloud(positions=np.zeros((3, 3)), labels=np.array([1, 2]))


def test_cloud_rejects_non_unit_normals():
    with pytest.raises(ValueError):
        PointCloud(positions=np.zeros((1, 3)), normals=np.array([[0.0, 0.0, 2.0]]))


def test_cloud_allows_nan_flagged_normals():
    cloud = PointCloud(positions=np.zeros((2, 3)),
                       normals=np.array([[0.0, 0.0, 1.0], [np.nan] * 3]))
    assert cloud.valid_normal_mask().tolist() == [True, False]


def test_cloud_arrays_frozen():
    cloud = PointCloud(positions=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        cloud.positions[0, 0] = 1.0


def test_splat_rejects_zero_radius():
    with pytest.raises(ValueError):
        Splat(center=np.zeros(3), normal=np.array([0.0, 0.0, 1.0]), radius=0.0)


def test_splat_set_roundtrip_single():
    s = Splat(center=np.ones(3), normal=np.array([0.0, 1.0, 0.0]), radius=0.5,
              group=SurfaceGroup.LINEAR, label=9, frame_id=3)
    ss = SplatSet.from_splats([s])
    back = ss[0]
    assert np.array_equal(back.center, s.center)
    assert back.label == 9 and back.frame_id == 3 and back.group == SurfaceGroup.LINEAR


def test_mapping_parses_and_flags_dynamic():
    mapping = GroupMapping.from_text("""
        # classes
        0 ground
        1 surface
        2 linear
        3 non-surface
        4 surface dynamic
    """)
    assert mapping.group_of(0) == SurfaceGroup.GROUND
    assert mapping.group_of(3) == SurfaceGroup.NON_SURFACE
    assert mapping.dynamic == {4}


def test_mapping_rejects_bad_lines():
    with pytest.raises(ConfigError):
        GroupMapping.from_text("0 ground extra junk")
    with pytest.raises(ConfigError):
        GroupMapping.from_text("x ground")
    with pytest.raises(ConfigError):
        GroupMapping.from_text("0 ground\n0 surface")


def test_map_groups_all_ground():
    cloud = PointCloud(positions=np.zeros((4, 3)), labels=np.full(4, 7))
    mapping = GroupMapping.from_text("7 ground")
    static, dynamic = map_semantic_groups(cloud, mapping)
    assert (static.groups == int(SurfaceGroup.GROUND)).all()
    assert dynamic == {}


def test_map_groups_unmapped_class_listed():
    cloud = PointCloud(positions=np.zeros((2, 3)), labels=np.array([7, 42]))
    mapping = GroupMapping.from_text("7 ground")
    with pytest.raises(ConfigError, match=r"\[42\]"):
        map_semantic_groups(cloud, mapping)


def test_map_groups_partitions_dynamic_by_frame(rng):
    # 10 static + 5 dynamic points across two frames; counted by direct partition
    labels = np.array([1] * 10 + [2] * 5)
    frames = np.array([0] * 12 + [1] * 3)
    cloud = PointCloud(positions=rng.normal(size=(15, 3)), labels=labels,
                       frame_ids=frames)
    mapping = GroupMapping.from_text("1 surface\n2 surface dynamic")
    static, dynamic = map_semantic_groups(cloud, mapping)

    # oracle: direct partition on the label array
    assert len(static) == int((labels == 1).sum()) == 10
    assert sum(len(c) for c in dynamic.values()) == int((labels == 2).sum()) == 5
    assert set(dynamic) == {0, 1}
    assert len(dynamic[0]) == 2 and len(dynamic[1]) == 3
    # true partition: no point lost, none duplicated
    total = len(static) + sum(len(c) for c in dynamic.values())
    assert total == len(cloud)


def test_map_groups_idempotent_on_static(rng):
    labels = rng.integers(0, 3, size=20)
    cloud = PointCloud(positions=rng.normal(size=(20, 3)), labels=labels)
    mapping = GroupMapping.from_text("0 ground\n1 linear\n2 nonsurface")
    static1, _ = map_semantic_groups(cloud, mapping)
    static2, dyn2 = map_semantic_groups(static1, mapping)
    assert dyn2 == {}
    assert np.array_equal(static1.positions, static2.positions)
    assert np.array_equal(static1.groups, static2.groups)


def test_splat_set_concat(rng):
    from conftest import random_splat_set
    a = random_splat_set(rng, 5)
    b = random_splat_set(rng, 3)
    c = a.concat(b)
    assert len(c) == 8
    assert np.array_equal(c.centers[:5], a.centers)
    assert np.array_equal(c.centers[5:], b.centers)
