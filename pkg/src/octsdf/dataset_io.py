"""Scan, pose and point-cloud file formats.

* ``.bin``: little-endian float32 ``(x, y, z, intensity)`` records (KITTI).
* ``.ply``: vertex element with float ``x, y, z`` (ascii or binary LE).
* poses: one row-major 3x4 ``[R | t]`` per line, 12 numbers (KITTI).
"""
import logging
import os
from dataclasses import dataclass

import numpy as np

from .ply import PlyFormatError, read_ply, write_ply

log = logging.getLogger(__name__)


class ScanFormatError(ValueError):
    pass


@dataclass
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def matrix(self):
        return np.hstack([self.rotation, self.translation[:, None]])


@dataclass
class Scan:
    sensor_origin: np.ndarray
    points: np.ndarray
    index: int = 0


def read_scan_bin(path):
    """Points ``(N, 3)`` float64 from a KITTI ``.bin``; NaN points are dropped."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) % 16:
        good = len(buf) - len(buf) % 16
        raise ScanFormatError(f"{path}: truncated record at byte offset {good} (file length {len(buf)})")
    pts = np.frombuffer(buf, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    finite = np.all(np.isfinite(pts), axis=1)
    if not finite.all():
        log.warning("%s: dropped %d non-finite points", path, int((~finite).sum()))
        pts = pts[finite]
    return pts


def write_scan_bin(path, points, intensity=None):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((pts.shape[0], 4), dtype="<f4")
    rec[:, :3] = pts
    if intensity is not None:
        rec[:, 3] = intensity
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def read_scan_ply(path):
    """Vertex positions of a PLY file (faces, if any, are ignored)."""
    try:
        verts, _ = read_ply(path)
    except PlyFormatError as exc:
        raise ScanFormatError(str(exc)) from exc
    return verts


def write_scan_ply(path, points, binary=True):
    write_ply(path, points, None, binary=binary)


def read_scan(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".bin":
        return read_scan_bin(path)
    if ext == ".ply":
        return read_scan_ply(path)
    raise ScanFormatError(f"{path}: unsupported scan extension {ext!r}")


def read_poses(path, drift_warn=1e-6, drift_max=1e-3):
    """One :class:`Pose` per non-empty line of a KITTI pose file."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 12:
                raise ScanFormatError(f"{path}:{lineno}: expected 12 numbers, got {len(tok)}")
            try:
                m = np.array([float(t) for t in tok]).reshape(3, 4)
            except ValueError as exc:
                raise ScanFormatError(f"{path}:{lineno}: {exc}") from exc
            R = m[:, :3]
            err = max(np.abs(R.T @ R - np.eye(3)).max(), abs(np.linalg.det(R) - 1.0))
            if err > drift_max:
                raise ScanFormatError(f"{path}:{lineno}: rotation is not orthonormal (error {err:.3g})")
            if err > drift_warn:
                log.warning("%s:%d: rotation drifts from orthonormal by %.3g", path, lineno, err)
            poses.append(Pose(R, m[:, 3]))
    return poses


def write_poses(path, poses):
    with open(path, "w") as fh:
        for p in poses:
            if not isinstance(p, Pose):
                p = Pose(*p)
            fh.write(" ".join(repr(float(v)) for v in p.matrix().ravel()) + "\n")


def to_world(points, pose, max_range=None, index=0):
    """Transform sensor-frame points by ``pose``; drop returns beyond ``max_range``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if max_range is not None:
        pts = pts[np.linalg.norm(pts, axis=1) <= max_range]
    world = pts @ pose.rotation.T + pose.translation
    return Scan(pose.translation.copy(), world, index)


def voxel_downsample(points, voxel):
    """Keep the first point falling in each ``voxel``-sized cell (order preserved)."""
    if voxel <= 0:
        return points
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def list_scans(scan_dir):
    names = sorted(n for n in os.listdir(scan_dir) if n.lower().endswith((".bin", ".ply")))
    return [os.path.join(scan_dir, n) for n in names]


def load_sequence(scan_dir, pose_path, max_range=None, voxel=0.0):
    """Yield world-frame :class:`Scan` objects, pairing sorted scan files with pose lines."""
    if not os.path.isdir(scan_dir):
        raise FileNotFoundError(f"scan directory not found: {scan_dir}")
    if not os.path.isfile(pose_path):
        raise FileNotFoundError(f"pose file not found: {pose_path}")
    files = list_scans(scan_dir)
    poses = read_poses(pose_path)
    if len(files) != len(poses):
        raise ScanFormatError(f"{len(files)} scans in {scan_dir} but {len(poses)} poses in {pose_path}")
    for i, (f, p) in enumerate(zip(files, poses)):
        pts = read_scan(f)
        if voxel > 0:
            pts = voxel_downsample(pts, voxel)
        yield to_world(pts, p, max_range, i)
