from collections import Counter

import numpy as np
import pytest

from octsdf.decoder import MlpConfig, MlpDecoder
from octsdf.evaluator import sample_surface
from octsdf.field import FeatureField, FieldLayout
from octsdf.mesher import (
    SdfGrid, TriangleMesh, evaluate_points, extract_mesh, lattice_points, marching_cubes, query_grid, read_mesh,
    write_mesh,
)
from octsdf.ply import read_ply
from oracles import sphere_sdf


def analytic_grid(fn, lo, hi, cell):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    dims = np.floor((hi - lo) / cell + 1e-9).astype(int) + 1
    pts = lattice_points(lo, cell, dims)
    return SdfGrid(lo, cell, tuple(dims), fn(pts).reshape(dims), np.ones(dims, bool))


def sphere_grid(r=1.0, cell=0.05):
    return analytic_grid(lambda p: sphere_sdf(p, np.zeros(3), r), [-1.3] * 3, [1.3] * 3, cell)


def edge_counts(mesh):
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    return Counter(map(tuple, e))


def test_grid_needs_two_points_per_axis():
    with pytest.raises(ValueError):
        SdfGrid(np.zeros(3), 0.1, (1, 2, 2), np.zeros((1, 2, 2)), np.ones((1, 2, 2), bool))


def test_all_positive_gives_empty_mesh():
    g = analytic_grid(lambda p: np.ones(len(p)), [0] * 3, [1] * 3, 0.25)
    m = marching_cubes(g)
    assert len(m) == 0 and m.vertices.shape == (0, 3)


def test_single_crossing_interpolates():
    a, b = 0.3, 0.9
    vals = np.full((2, 2, 2), b)
    vals[0] = -a  # x = 0 face negative, x = 1 face positive
    g = SdfGrid(np.zeros(3), 1.0, (2, 2, 2), vals, np.ones((2, 2, 2), bool))
    m = marching_cubes(g)
    assert len(m) == 2
    assert np.allclose(m.vertices[:, 0], a / (a + b), atol=1e-15)


def test_sphere_vertices_within_one_cell():
    m = marching_cubes(sphere_grid())
    r = np.linalg.norm(m.vertices, axis=1)
    assert len(m) > 1000
    assert np.all(np.abs(r - 1.0) <= 0.05)


def test_sphere_watertight_and_outward():
    m = marching_cubes(sphere_grid(cell=0.1))
    assert set(edge_counts(m).values()) == {2}
    v = m.vertices[m.triangles]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    # lattice points lying exactly on the sphere give zero-area triangles
    area = np.linalg.norm(n, axis=1)
    assert np.all(np.einsum("ij,ij->i", n, v.mean(axis=1))[area > 1e-12] > 0)


def test_invalid_cells_emit_nothing():
    g = sphere_grid(cell=0.1)
    g.valid_mask[:, :, : g.dims[2] // 2] = False
    m = marching_cubes(g)
    zmin = g.origin[2] + 0.1 * (g.dims[2] // 2)
    assert len(m) > 0
    assert m.vertices[:, 2].min() >= zmin - 1e-12
    # boundary edges appear only along the validity border
    counts = edge_counts(m)
    border = [e for e, c in counts.items() if c == 1]
    assert border and all(abs(m.vertices[list(e), 2] - zmin).max() < 1e-9 for e in border)


def test_core_mask_requires_one_core_corner():
    g = sphere_grid(cell=0.1)
    full = marching_cubes(g)
    g.core_mask = np.zeros(g.dims, bool)
    assert len(marching_cubes(g)) == 0
    g.core_mask[:] = True
    m = marching_cubes(g)
    assert np.array_equal(m.vertices, full.vertices) and np.array_equal(m.triangles, full.triangles)


def test_marching_cubes_deterministic():
    a, b = marching_cubes(sphere_grid(cell=0.1)), marching_cubes(sphere_grid(cell=0.1))
    assert a.vertices.tobytes() == b.vertices.tobytes() and a.triangles.tobytes() == b.triangles.tobytes()


# -- field-backed queries -------------------------------------------------------------


class CountingField:
    def __init__(self, field):
        self.field, self.n = field, 0

    def query_batch(self, pts):
        self.n += len(pts)
        return self.field.query_batch(pts)


def trained_like_map():
    field = FeatureField(FieldLayout.centered(np.zeros(3), 0.1, 3, 8), seed=0)
    rng = np.random.default_rng(0)
    d = rng.normal(size=(3000, 3))
    field.allocate_for_points(0.6 * d / np.linalg.norm(d, axis=1, keepdims=True))
    # features encode the sphere distance so the decoder can read it back linearly
    dec = MlpDecoder(MlpConfig(1, 1, 8, activation="identity"))
    dec.params[:] = 0.0
    dec.weights[0][0, 0] = 1.0
    dec.weights[1][0, 0] = 1.0
    field._features[: field.n_slots] = rng.normal(0, 0.01, (field.n_slots, 8))
    return field, dec


@pytest.mark.parametrize("dims", [(2, 2, 2), (3, 4, 5), (7, 2, 3)])
def test_evaluation_count(dims):
    field, dec = trained_like_map()
    cf = CountingField(field)
    hi = 0.1 * (np.asarray(dims) - 1)
    g = query_grid(cf, dec, (np.zeros(3), hi), 0.1)
    assert g.dims == tuple(dims) and cf.n == int(np.prod(dims))


def test_bbox_outside_is_all_invalid():
    field, dec = trained_like_map()
    g = query_grid(field, dec, (np.full(3, 20.0), np.full(3, 21.0)), 0.25)
    assert not g.valid_mask.any()
    assert len(marching_cubes(g)) == 0


def test_degenerate_bbox_and_cell():
    field, dec = trained_like_map()
    with pytest.raises(ValueError):
        query_grid(field, dec, (np.zeros(3), np.array([1.0, 1.0, 0.0])), 0.1)
    with pytest.raises(ValueError):
        query_grid(field, dec, (np.zeros(3), np.ones(3)), 0.0)


@pytest.mark.parametrize("mask_level", [None, 0, 1])
def test_extract_mesh_equals_query_then_mc(mask_level):
    field, dec = trained_like_map()
    bbox = (np.full(3, -0.8), np.full(3, 0.8))
    ref = marching_cubes(query_grid(field, dec, bbox, 0.05, mask_level=mask_level))
    got = extract_mesh(field, dec, bbox, 0.05, block=7, mask_level=mask_level)
    assert len(ref) > 0
    # same triangles up to vertex numbering
    key = lambda m: sorted(tuple(sorted(map(tuple, np.round(m.vertices[t], 12)))) for t in m.triangles)
    assert np.allclose(np.sort(ref.vertices, axis=0), np.sort(got.vertices, axis=0), atol=1e-12)
    assert key(ref) == key(got)


def test_mask_level_core_flag():
    field, dec = trained_like_map()
    pts = np.array([[0.6, 0.0, 0.0], [0.0, 0.0, 0.0]])
    vals, hit, core = evaluate_points(field, dec, pts, mask_level=0)
    slots, _ = field.lookup_corners(pts)
    assert np.array_equal(core, slots[:, 0, 0] >= 0)
    assert core[0]


def test_vertex_residual_below_cell():
    field, dec = trained_like_map()
    m = extract_mesh(field, dec, (np.full(3, -0.8), np.full(3, 0.8)), 0.05, mask_level=0)
    vals, hit = evaluate_points(field, dec, m.vertices)
    assert hit.all()
    assert np.all(np.abs(vals) < 0.05)


# -- files -------------------------------------------------------------------------------


@pytest.mark.parametrize("fmt", ["ply_binary", "ply_ascii"])
def test_write_read_roundtrip(tmp_path, fmt):
    m = marching_cubes(sphere_grid(cell=0.2))
    p = tmp_path / "m.ply"
    write_mesh(m, p, fmt)
    back = read_mesh(p)
    assert np.allclose(back.vertices, m.vertices.astype(np.float32), rtol=0, atol=0)
    assert np.array_equal(back.triangles, m.triangles)
    head = p.read_bytes()[:300]
    assert b"property float x" in head and b"property list uchar int vertex_indices" in head


def test_empty_mesh_ply(tmp_path):
    p = tmp_path / "e.ply"
    write_mesh(TriangleMesh.empty(), p)
    v, f = read_ply(p)
    assert v.shape == (0, 3)
    assert f is None or f.shape[0] == 0


def test_obj_export(tmp_path):
    m = marching_cubes(sphere_grid(cell=0.4))
    p = tmp_path / "m.obj"
    write_mesh(m, p, "obj")
    lines = p.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == len(m.vertices)
    assert sum(l.startswith("f ") for l in lines) == len(m)


def test_sphere_mesh_usable_by_evaluator(tmp_path):
    p = tmp_path / "s.ply"
    write_mesh(marching_cubes(sphere_grid(cell=0.1)), p)
    pts = sample_surface(read_mesh(p), 5000, 0)
    assert np.all(np.abs(np.linalg.norm(pts, axis=1) - 1.0) < 0.1)


def test_write_failure_names_path(tmp_path):
    bad = tmp_path / "missing_dir" / "m.ply"
    with pytest.raises(OSError, match="missing_dir"):
        write_mesh(marching_cubes(sphere_grid(cell=0.4)), bad)
