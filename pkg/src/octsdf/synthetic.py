"""Analytic test scenes scanned by a virtual spinning LiDAR.

Rays are intersected exactly with spheres, axis-aligned boxes (solid, or a
room seen from inside) and bounded horizontal rectangles. Every scene is
deterministic given its seed.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np

SCENES = ("sphere", "room", "two-region")


@dataclass
class Scene:
    name: str
    poses: list  # (R, t) pairs, sensor -> world
    scans_world: list  # float64 (N, 3) endpoints in world frame
    gt_vertices: np.ndarray
    gt_triangles: np.ndarray
    params: dict
    scan_regions: list = field(default_factory=list)

    @property
    def origins(self):
        return np.array([t for _, t in self.poses])

    def scans_local(self):
        """Endpoints in each sensor frame (what a ``.bin`` file stores)."""
        return [(p - t) @ R for (R, t), p in zip(self.poses, self.scans_world)]


# -- ray casting --------------------------------------------------------------------


def lidar_directions(n_beams, n_azimuth, fov_up_deg, fov_down_deg, phase=0.0):
    el = np.deg2rad(np.linspace(fov_down_deg, fov_up_deg, n_beams))
    az = phase + np.arange(n_azimuth) * (2.0 * np.pi / n_azimuth)
    el, az = np.meshgrid(el, az, indexing="ij")
    d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    return d.reshape(-1, 3)


def look_at(origin, target):
    """Rotation whose x axis points from ``origin`` to ``target`` (z as up hint)."""
    fwd = np.asarray(target, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    fwd /= np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.95:
        up = np.array([1.0, 0.0, 0.0])
    left = np.cross(up, fwd)
    left /= np.linalg.norm(left)
    up = np.cross(fwd, left)
    return np.stack([fwd, left, up], axis=1)


def _hit_sphere(o, d, center, radius):
    oc = o - center
    b = d @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    t = np.full(d.shape[0], np.inf)
    ok = disc >= 0
    s = np.sqrt(np.where(ok, disc, 0.0))
    t1, t2 = -b - s, -b + s
    first = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
    t[ok] = first[ok]
    return t


def _slabs(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    tmin = np.nanmax(np.minimum(ta, tb), axis=1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=1)
    return tmin, tmax


def _hit_box(o, d, lo, hi):
    tmin, tmax = _slabs(o, d, np.asarray(lo, float), np.asarray(hi, float))
    return np.where((tmax >= tmin) & (tmin > 1e-9), tmin, np.inf)


def _hit_room(o, d, lo, hi):
    # from inside: the exit distance
    _, tmax = _slabs(o, d, np.asarray(lo, float), np.asarray(hi, float))
    return np.where(tmax > 1e-9, tmax, np.inf)


def _hit_rect(o, d, z, lo_xy, hi_xy):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (z - o[2]) / d[:, 2]
    p = o[None, :2] + t[:, None] * d[:, :2]
    inside = np.all((p >= lo_xy) & (p <= hi_xy), axis=1) & (t > 1e-9)
    return np.where(inside, t, np.inf)


def cast(origin, dirs, prims):
    """Nearest hit distance along each direction (``inf`` on a miss)."""
    o = np.asarray(origin, dtype=np.float64)
    best = np.full(dirs.shape[0], np.inf)
    for kind, args in prims:
        if kind == "sphere":
            t = _hit_sphere(o, dirs, *args)
        elif kind == "box":
            t = _hit_box(o, dirs, *args)
        elif kind == "room":
            t = _hit_room(o, dirs, *args)
        elif kind == "rect":
            t = _hit_rect(o, dirs, *args)
        else:
            raise ValueError(kind)
        best = np.minimum(best, t)
    return best


def scan_from(origin, target, prims, n_beams, n_azimuth, fov_up, fov_down, max_range, rng):
    R = look_at(origin, target)
    local = lidar_directions(n_beams, n_azimuth, fov_up, fov_down, phase=rng.uniform(0, 2 * np.pi / n_azimuth))
    dirs = local @ R.T
    t = cast(origin, dirs, prims)
    keep = t <= max_range
    return (R, np.asarray(origin, dtype=np.float64)), origin + t[keep, None] * dirs[keep]


# -- ground-truth meshes --------------------------------------------------------------


def icosphere(center, radius, subdivisions=5):
    phi = (1 + 5**0.5) / 2
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0], [0, -1, phi], [0, 1, phi],
                  [0, -1, -phi], [0, 1, -phi], [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv.ravel().reshape(3, -1).T + v.shape[0]
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
                            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
        v = np.concatenate([v, mid])
    return np.asarray(center, float) + radius * v, f.astype(np.int64)


def _quad(p0, p1, p2, p3, base):
    return [p0, p1, p2, p3], [[base, base + 1, base + 2], [base, base + 2, base + 3]]


def box_mesh(lo, hi, skip_bottom=False):
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    c = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], float)
    faces = [[4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]]
    if not skip_bottom:
        faces.append([0, 3, 2, 1])
    tris = []
    for a, b, cc, d in faces:
        tris += [[a, b, cc], [a, cc, d]]
    return c, np.array(tris, dtype=np.int64)


def rect_mesh(z, lo_xy, hi_xy):
    (x0, y0), (x1, y1) = lo_xy, hi_xy
    v = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], float)
    return v, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)


def merge_meshes(parts):
    vs, fs, base = [], [], 0
    for v, f in parts:
        vs.append(v)
        fs.append(f + base)
        base += v.shape[0]
    return np.concatenate(vs), np.concatenate(fs)


# -- scenes -------------------------------------------------------------------------


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    th = np.pi * (1 + 5**0.5) * i
    return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)


def sphere_scene(seed=0, radius=2.0, n_scans=30, distance=6.0, n_beams=32, n_azimuth=1024,
                 fov=25.0, max_range=60.0, center=(0.0, 0.0, 0.0)):
    rng = np.random.default_rng(seed)
    center = np.asarray(center, float)
    prims = [("sphere", (center, radius))]
    dirs = _fibonacci_sphere(n_scans)
    # random rotation of the viewpoint set
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    dirs = dirs @ q.T
    poses, scans = [], []
    for d in dirs:
        pose, pts = scan_from(center + distance * d, center, prims, n_beams, n_azimuth, fov, -fov, max_range, rng)
        poses.append(pose)
        scans.append(pts)
    v, f = icosphere(center, radius, 6)
    params = {"scene": "sphere", "center": center.tolist(), "radius": radius, "seed": seed}
    return Scene("sphere", poses, scans, v, f, params)


def room_scene(seed=0, lo=(-4.0, -3.0, 0.0), hi=(4.0, 3.0, 3.0), n_scans=8, n_beams=32, n_azimuth=1024,
               max_range=60.0):
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    prims = [("room", (lo, hi))]
    poses, scans = [], []
    for _ in range(n_scans):
        o = rng.uniform(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo))
        tgt = o + np.r_[rng.normal(size=2), 0.0]
        pose, pts = scan_from(o, tgt, prims, n_beams, n_azimuth, 45.0, -45.0, max_range, rng)
        poses.append(pose)
        scans.append(pts)
    v, f = box_mesh(lo, hi)
    f = f[:, ::-1]  # normals face into the room
    params = {"scene": "room", "lo": lo.tolist(), "hi": hi.tolist(), "seed": seed}
    return Scene("room", poses, scans, v, f, params)


def two_region_scene(seed=0, n_scans_per_region=6, n_beams=32, n_azimuth=1024, max_range=60.0,
                     split_x=1.3, a_width=1.0, b_step=0.8):
    """Region A is a ``a_width`` strip on the ``x < split`` side, region B the 7 m beyond it.

    Region B's ground is raised by ``b_step`` (a kerb at the split), so nodes
    straddling the split hold conflicting surfaces. Each scan only keeps returns
    on its own side, so region A is never observed while region B is mapped.
    The split and every plane sit off the map lattice. Set ``b_step=0`` for a
    flat ground plane.
    """
    rng = np.random.default_rng(seed)
    gz, sx = 0.173, split_x
    ground = ((sx - a_width, -6.0), (sx + 7.0, 6.0))
    rel = [((-5.43, -1.87), (-2.61, 1.06), 1.61), ((-2.12, 2.13), (-0.58, 4.04), 2.57),
           ((-1.17, -1.43), (-0.31, 0.88), 1.27), ((-0.62, -3.35), (-0.28, -2.05), 1.43),
           ((0.61, -2.91), (3.07, -0.46), 3.03), ((2.88, 1.12), (5.41, 3.09), 1.14)]
    boxes = [((sx + lo[0], lo[1], gz), (sx + hi[0], hi[1], top)) for lo, hi, top in rel
             if lo[0] > -a_width + 0.3 or lo[0] > 0]
    # with a step, region B's ground is the top of a slab that starts at the split
    a_ground = ((ground[0][0], ground[0][1]), (sx, ground[1][1])) if b_step > 0 else ground
    slab = ((sx, ground[0][1], gz - 1.0), (ground[1][0], ground[1][1], gz + b_step))
    prims = [("rect", (gz, np.array(a_ground[0]), np.array(a_ground[1])))]
    if b_step > 0:
        prims.append(("box", (np.array(slab[0]), np.array(slab[1]))))
    prims += [("box", (np.array(lo), np.array(hi))) for lo, hi in boxes]
    poses, scans, regions = [], [], []
    for region, sign in (("A", -1.0), ("B", 1.0)):
        for _ in range(n_scans_per_region):
            while True:
                reach = min(a_width, 7.0) if sign < 0 else 7.0
                o = np.array([sx + sign * rng.uniform(0.2, 0.8) * reach, rng.uniform(-5.0, 5.0),
                              gz + rng.uniform(1.8, 2.2)])
                if not any(np.all((o > np.array(lo) - 0.3) & (o < np.array(hi) + 0.3)) for lo, hi in boxes):
                    break
            tgt = o + np.r_[rng.normal(size=2), 0.0]
            pose, pts = scan_from(o, tgt, prims, n_beams, n_azimuth, 15.0, -30.0, max_range, rng)
            pts = pts[sign * (pts[:, 0] - sx) > 0]
            poses.append(pose)
            scans.append(pts)
            regions.append(region)
    parts = [rect_mesh(gz, *a_ground)] + [box_mesh(lo, hi, skip_bottom=True) for lo, hi in boxes]
    if b_step > 0:
        parts.append(box_mesh(*slab, skip_bottom=True))
    v, f = merge_meshes(parts)
    x0, x1 = ground[0][0], ground[1][0]
    params = {"scene": "two-region", "ground": ground, "ground_z": gz, "split_x": sx, "b_step": b_step, "boxes": boxes, "seed": seed,
              "regions": {"A": [[x0, -6.0, -1.0], [sx, 6.0, 4.0]], "B": [[sx, -6.0, -1.0], [x1, 6.0, 4.0]]}}
    return Scene("two-region", poses, scans, v, f, params, regions)


def make_scene(name, seed=0, **kw):
    if name == "sphere":
        return sphere_scene(seed, **kw)
    if name == "room":
        return room_scene(seed, **kw)
    if name == "two-region":
        return two_region_scene(seed, **kw)
    raise ValueError(f"unknown scene {name!r}; choose from {', '.join(SCENES)}")


def write_scene(scene, out_dir):
    """Write ``scans/NNNNNN.bin``, ``poses.txt``, ``gt_mesh.ply`` and ``scene.json``."""
    from .dataset_io import write_poses, write_scan_bin
    from .mesher import TriangleMesh, write_mesh

    scan_dir = os.path.join(out_dir, "scans")
    os.makedirs(scan_dir, exist_ok=True)
    for i, pts in enumerate(scene.scans_local()):
        write_scan_bin(os.path.join(scan_dir, f"{i:06d}.bin"), pts)
    write_poses(os.path.join(out_dir, "poses.txt"), scene.poses)
    write_mesh(TriangleMesh(scene.gt_vertices, scene.gt_triangles), os.path.join(out_dir, "gt_mesh.ply"))
    meta = dict(scene.params)
    meta["n_scans"] = len(scene.poses)
    if scene.scan_regions:
        meta["scan_regions"] = scene.scan_regions
    with open(os.path.join(out_dir, "scene.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
