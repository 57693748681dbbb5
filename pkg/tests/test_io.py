import numpy as np
import pytest

from splatsim.cloud import PointCloud
from splatsim.errors import FormatError, StructuralError
from splatsim.io import load_cloud, load_splats, save_cloud, save_splats

from conftest import random_splat_set


def test_ply_binary_roundtrip_bit_identical(tmp_path, rng):
    cloud = PointCloud(positions=rng.normal(size=(100, 3)))
    path = tmp_path / "c.ply"
    save_cloud(cloud, path)
    back = load_cloud(path)
    assert np.array_equal(back.positions, cloud.positions)
    assert back.positions.dtype == np.float64


def test_ply_roundtrip_all_attributes(tmp_path, rng):
    n = 50
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = PointCloud(
        positions=rng.normal(size=(n, 3)),
        normals=normals,
        labels=rng.integers(0, 10, n),
        groups=rng.integers(0, 4, n).astype(np.uint8),
        sensor_positions=rng.normal(size=(n, 3)),
        frame_ids=rng.integers(0, 5, n),
        extras={"intensity": rng.random(n).astype(np.float32)},
    )
    path = tmp_path / "c.ply"
    save_cloud(cloud, path)
    back = load_cloud(path)
    assert np.array_equal(back.positions, cloud.positions)
    assert np.array_equal(back.normals, cloud.normals)
    assert np.array_equal(back.labels, cloud.labels)
    assert np.array_equal(back.groups, cloud.groups)
    assert np.array_equal(back.sensor_positions, cloud.sensor_positions)
    assert np.array_equal(back.frame_ids, cloud.frame_ids)
    assert np.array_equal(back.extras["intensity"], cloud.extras["intensity"])


def test_ply_label_property_present(tmp_path):
    cloud = PointCloud(positions=np.zeros((3, 3)), labels=np.array([1, 2, 3]))
    path = tmp_path / "c.ply"
    save_cloud(cloud, path)
    header = path.read_bytes().split(b"end_header")[0].decode()
    assert "property uint label" in header


def test_ply_empty_cloud(tmp_path):
    path = tmp_path / "empty.ply"
    save_cloud(PointCloud(positions=np.zeros((0, 3))), path)
    back = load_cloud(path)
    assert len(back) == 0


def test_ply_ascii_writer_roundtrip(tmp_path, rng):
    cloud = PointCloud(positions=rng.normal(size=(20, 3)),
                       labels=rng.integers(0, 4, 20))
    path = tmp_path / "a.ply"
    save_cloud(cloud, path, binary=False)
    assert path.read_bytes().startswith(b"ply\nformat ascii 1.0")
    back = load_cloud(path)
    # repr round-trips doubles exactly even through text
    assert np.array_equal(back.positions, cloud.positions)
    assert np.array_equal(back.labels, cloud.labels)


def test_ply_ascii_with_normals(tmp_path):
    text = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
property float nx
property float ny
property float nz
end_header
0 0 0 0 0 1
1 0 0 0 0 1
0 1 0 0 0 1
"""
    path = tmp_path / "a.ply"
    path.write_text(text)
    cloud = load_cloud(path)
    assert len(cloud) == 3
    assert cloud.normals is not None
    assert np.allclose(cloud.normals, [0, 0, 1])


def test_ply_truncated_payload_names_offset(tmp_path):
    path = tmp_path / "t.ply"
    header = b"ply\nformat binary_little_endian 1.0\nelement vertex 4\n" \
             b"property double x\nproperty double y\nproperty double z\nend_header\n"
    path.write_bytes(header + b"\x00" * 10)       # needs 96 bytes
    with pytest.raises(FormatError, match="byte"):
        load_cloud(path)


def test_ply_garbage_rejected(tmp_path):
    path = tmp_path / "g.ply"
    path.write_bytes(b"not a ply file at all")
    with pytest.raises(FormatError):
        load_cloud(path)


def test_kitti_bin_single_record(tmp_path):
    path = tmp_path / "one.bin"
    np.array([1.0, 2.0, 3.0, 0.5], dtype="<f4").tofile(path)
    cloud = load_cloud(path)
    assert len(cloud) == 1
    assert cloud.labels is None
    assert np.allclose(cloud.positions[0], [1.0, 2.0, 3.0])
    assert np.allclose(cloud.extras["intensity"], [0.5])


def test_kitti_bin_with_labels(tmp_path):
    path = tmp_path / "c.bin"
    np.zeros(8, dtype="<f4").tofile(path)          # 2 points
    lpath = tmp_path / "c.label"
    # semantic class in the low 16 bits, instance id above
    np.array([0x00010007, 0x0002000A], dtype="<u4").tofile(lpath)
    cloud = load_cloud(path, labels_path=lpath)
    assert cloud.labels.tolist() == [7, 10]


def test_kitti_bin_label_count_mismatch(tmp_path):
    path = tmp_path / "c.bin"
    np.zeros(16, dtype="<f4").tofile(path)         # 4 points
    lpath = tmp_path / "c.label"
    np.zeros(3, dtype="<u4").tofile(lpath)         # 3 labels
    with pytest.raises(StructuralError):
        load_cloud(path, labels_path=lpath)


def test_kitti_bin_truncated(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"\x00" * 20)                 # not a multiple of 16
    with pytest.raises(FormatError, match="byte 16"):
        load_cloud(path)


def test_splat_roundtrip_1000(tmp_path, rng):
    splats = random_splat_set(rng, 1000, labels=rng.integers(0, 5, 1000),
                              frame_ids=rng.integers(-1, 3, 1000))
    path = tmp_path / "s.ply"
    save_splats(splats, path)
    back = load_splats(path)
    assert len(back) == 1000
    assert np.array_equal(back.centers, splats.centers)
    assert np.array_equal(back.normals, splats.normals)
    assert np.array_equal(back.radii, splats.radii)
    assert np.array_equal(back.groups, splats.groups)
    assert np.array_equal(back.labels, splats.labels)
    assert np.array_equal(back.frame_ids, splats.frame_ids)


def test_splat_file_without_frame_column(tmp_path, rng):
    splats = random_splat_set(rng, 10)              # all frame_ids -1
    path = tmp_path / "s.ply"
    save_splats(splats, path)
    header = path.read_bytes().split(b"end_header")[0].decode()
    assert "frame_id" not in header
    back = load_splats(path)
    assert (back.frame_ids == -1).all()


def test_splat_zero_radius_rejected(tmp_path, rng):
    splats = random_splat_set(rng, 4)
    path = tmp_path / "s.ply"
    save_splats(splats, path)
    # corrupt one radius in place: column layout is x y z nx ny nz radius group
    data = bytearray(path.read_bytes())
    header_len = data.index(b"end_header\n") + len(b"end_header\n")
    rec = 7 * 8 + 1
    off = header_len + 6 * 8                       # radius of record 0
    data[off:off + 8] = np.float64(0.0).tobytes()
    path.write_bytes(bytes(data))
    assert rec  # layout documented above
    with pytest.raises(FormatError, match="radius"):
        load_splats(path)


def test_splat_version_mismatch(tmp_path, rng):
    splats = random_splat_set(rng, 2)
    path = tmp_path / "s.ply"
    save_splats(splats, path)
    data = path.read_bytes().replace(b"splat_format 1", b"splat_format 9")
    path.write_bytes(data)
    with pytest.raises(FormatError, match="version"):
        load_splats(path)


def test_plain_ply_is_not_a_splat_file(tmp_path):
    path = tmp_path / "c.ply"
    save_cloud(PointCloud(positions=np.zeros((1, 3))), path)
    with pytest.raises(FormatError):
        load_splats(path)


def test_attribute_lengths_after_load(tmp_path, rng):
    n = 20
    cloud = PointCloud(positions=rng.normal(size=(n, 3)),
                       labels=rng.integers(0, 3, n))
    path = tmp_path / "c.ply"
    save_cloud(cloud, path)
    back = load_cloud(path)
    assert len(back.labels) == len(back.positions)
