import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from octsdf.dataset_io import (
    Pose, ScanFormatError, load_sequence, read_poses, read_scan, read_scan_bin, read_scan_ply, to_world,
    voxel_downsample, write_poses, write_scan_bin, write_scan_ply,
)
from octsdf.ply import PlyFormatError, read_ply, write_ply


def test_empty_bin(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    assert read_scan_bin(p).shape == (0, 3)


def test_single_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(np.array([1, 2, 3, 0.5], dtype="<f4").tobytes())
    assert read_scan_bin(p).tolist() == [[1.0, 2.0, 3.0]]


def test_bin_roundtrip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(1000, 3)).astype(np.float32).astype(np.float64)
    write_scan_bin(tmp_path / "s.bin", pts, intensity=np.ones(1000))
    assert np.array_equal(read_scan_bin(tmp_path / "s.bin"), pts)


def test_truncated_bin_reports_offset(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(np.zeros(8, dtype="<f4").tobytes() + b"\x00" * 5)
    with pytest.raises(ScanFormatError, match="offset 32"):
        read_scan_bin(p)


def test_nan_points_dropped(tmp_path, caplog):
    rec = np.array([[1, 2, 3, 0], [np.nan, 0, 0, 0], [4, 5, 6, 0]], dtype="<f4")
    p = tmp_path / "n.bin"
    p.write_bytes(rec.tobytes())
    with caplog.at_level(logging.WARNING):
        pts = read_scan_bin(p)
    assert pts.tolist() == [[1, 2, 3], [4, 5, 6]]
    assert "dropped 1" in caplog.text


def test_minimal_ascii_ply(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                 "property float z\nend_header\n0.5 -1 2\n")
    assert read_scan_ply(p).tolist() == [[0.5, -1.0, 2.0]]


def test_ascii_and_binary_parse_identically(tmp_path):
    pts = np.random.default_rng(1).normal(size=(50, 3))
    write_scan_ply(tmp_path / "a.ply", pts, binary=False)
    write_scan_ply(tmp_path / "b.ply", pts, binary=True)
    a, b = read_scan_ply(tmp_path / "a.ply"), read_scan_ply(tmp_path / "b.ply")
    assert np.array_equal(a, b)
    assert np.array_equal(a, pts.astype(np.float32))


def test_mesh_ply_reads_points_ignores_faces(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    write_ply(tmp_path / "m.ply", v, np.array([[0, 1, 2]]))
    assert np.array_equal(read_scan(str(tmp_path / "m.ply")), v)


def test_ply_extra_properties_and_double(tmp_path):
    p = tmp_path / "x.ply"
    p.write_text("ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty double z\n"
                 "property uchar red\nproperty double x\nproperty double y\nend_header\n3 255 1 2\n6 0 4 5\n")
    assert read_scan_ply(p).tolist() == [[1, 2, 3], [4, 5, 6]]


def test_ply_missing_property_named(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n")
    with pytest.raises(ScanFormatError, match="'z'|z"):
        read_scan_ply(p)
    with pytest.raises(PlyFormatError, match="z"):
        read_ply(p)


@pytest.mark.parametrize("content", [
    b"not a ply at all",
    b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
    b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
    b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
    b"property float z\nend_header\n\x00\x00",
])
def test_malformed_ply_structured_error(tmp_path, content):
    p = tmp_path / "m.ply"
    p.write_bytes(content)
    with pytest.raises(PlyFormatError):
        read_ply(p)


def test_unknown_scan_extension(tmp_path):
    with pytest.raises(ScanFormatError, match="extension"):
        read_scan(str(tmp_path / "scan.xyz"))


# -- poses ----------------------------------------------------------------------------


def test_identity_and_translation(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 4 0 1 0 5 0 0 1 6\n")
    a, b = read_poses(p)
    assert np.array_equal(a.rotation, np.eye(3)) and not a.translation.any()
    assert np.array_equal(b.rotation, np.eye(3)) and b.translation.tolist() == [4, 5, 6]


def test_pose_roundtrip(tmp_path):
    rots = Rotation.random(20, random_state=0).as_matrix()
    trans = np.random.default_rng(0).normal(size=(20, 3)) * 10
    poses = [Pose(R, t) for R, t in zip(rots, trans)]
    write_poses(tmp_path / "p.txt", poses)
    for a, b in zip(poses, read_poses(tmp_path / "p.txt")):
        assert np.abs(a.matrix() - b.matrix()).max() < 1e-9


def test_wrong_field_count_line_number(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(ScanFormatError, match=r":2: expected 12"):
        read_poses(p)


def test_non_numeric_pose(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 zero\n")
    with pytest.raises(ScanFormatError, match=":1:"):
        read_poses(p)


def test_drift_warns_then_errors(tmp_path, caplog):
    p = tmp_path / "p.txt"
    p.write_text("1.0001 0 0 0 0 1 0 0 0 0 1 0\n")
    with caplog.at_level(logging.WARNING):
        assert len(read_poses(p)) == 1
    assert "drifts" in caplog.text
    p.write_text("1.01 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ScanFormatError, match="orthonormal"):
        read_poses(p)


# -- world transform ----------------------------------------------------------------------


def test_to_world_examples():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    s = to_world(pts, Pose.identity())
    assert np.array_equal(s.points, pts) and not s.sensor_origin.any()
    assert to_world(np.zeros((1, 3)), Pose(np.eye(3), [1, 0, 0])).points.tolist() == [[1, 0, 0]]
    Rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], float)
    out = to_world(np.array([[1.0, 0, 0]]), Pose(Rz, np.zeros(3))).points[0]
    assert np.abs(out - [0, 1, 0]).max() <= 1e-12


def test_max_range_filter():
    pts = np.array([[1.0, 0, 0], [0, 70.0, 0]])
    s = to_world(pts, Pose(np.eye(3), [5.0, 0, 0]), max_range=60.0)
    assert s.points.tolist() == [[6.0, 0, 0]]
    assert s.sensor_origin.tolist() == [5.0, 0, 0]


@given(st.integers(0, 2**31 - 1))
def test_rigidity(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3)) * 20
    pose = Pose(Rotation.random(random_state=seed).as_matrix(), rng.normal(size=3) * 100)
    w = to_world(pts, pose).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(w[:, None] - w[None], axis=2)
    assert np.abs(d0 - d1).max() < 1e-9


def test_voxel_downsample():
    pts = np.array([[0.01, 0, 0], [0.02, 0, 0], [0.3, 0, 0], [0.04, 0.01, 0.0]])
    assert voxel_downsample(pts, 0.1).tolist() == [[0.01, 0, 0], [0.3, 0, 0]]
    assert voxel_downsample(pts, 0.0) is pts


# -- sequences ------------------------------------------------------------------------------


def write_seq(root, n_scans, n_poses):
    scans = root / "scans"
    scans.mkdir()
    for i in range(n_scans):
        write_scan_bin(scans / f"{i:06d}.bin", np.full((3, 3), float(i)))
    write_poses(root / "poses.txt", [Pose(np.eye(3), [i, 0, 0]) for i in range(n_poses)])
    return scans, root / "poses.txt"


def test_load_sequence_orders_and_indexes(tmp_path):
    scans, poses = write_seq(tmp_path, 3, 3)
    seq = list(load_sequence(str(scans), str(poses)))
    assert [s.index for s in seq] == [0, 1, 2]
    assert seq[2].points[0].tolist() == [4.0, 2.0, 2.0]
    assert seq[2].sensor_origin.tolist() == [2.0, 0, 0]


def test_load_sequence_count_mismatch(tmp_path):
    scans, poses = write_seq(tmp_path, 3, 2)
    with pytest.raises(ScanFormatError, match="3 scans"):
        list(load_sequence(str(scans), str(poses)))


def test_load_sequence_missing_inputs(tmp_path):
    with pytest.raises(FileNotFoundError, match="scan directory"):
        list(load_sequence(str(tmp_path / "nope"), str(tmp_path / "p.txt")))
    (tmp_path / "scans").mkdir()
    with pytest.raises(FileNotFoundError, match="pose file"):
        list(load_sequence(str(tmp_path / "scans"), str(tmp_path / "p.txt")))
