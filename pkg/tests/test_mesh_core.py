import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glassrecon.mesh.core import (
    MeshError, TriangleMesh, box_mesh, compute_vertex_normals, grid_mesh, icosphere, interpolate_normal, torus_mesh, weld,
)
from glassrecon.mesh.io import load_mesh, save_mesh


def angle_deg(a, b):
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return np.degrees(np.arccos(np.clip((a * b).sum(-1), -1, 1)))


def test_primitives_are_closed_manifolds():
    for mesh, chi in ((icosphere(2), 2), (box_mesh(3), 2), (torus_mesh(16, 8), 0)):
        mesh.validate()
        assert mesh.is_closed and mesh.is_manifold
        assert mesh.euler_characteristic == chi
        assert mesh.volume > 0


def test_grid_normals_are_plane_normal():
    g = grid_mesh(5, 4)
    n = compute_vertex_normals(g)
    assert np.allclose(n, g.face_normals[0])
    assert np.allclose(interpolate_normal(g, 3, [0.2, 0.3, 0.5]), g.face_normals[0])


def test_sphere_normals_are_radial():
    s = icosphere(3, 1.0)
    assert angle_deg(compute_vertex_normals(s), s.vertices).max() < 2.0
    bary = np.full(3, 1 / 3)
    worst = max(angle_deg(interpolate_normal(s, f, bary), s.face_centroids[f]) for f in range(0, s.n_faces, 7))
    assert worst < 2.0


def test_interpolate_corner_is_vertex_normal():
    s = icosphere(2)
    n = compute_vertex_normals(s)
    f = 11
    assert np.allclose(interpolate_normal(s, f, [1, 0, 0]), n[s.faces[f, 0]])


def test_normals_are_area_weighted():
    # vertex 0 shared by a large triangle in z=0 and a tiny one tilted 90 degrees
    V = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 0.01], [0.01, 0, 0]], dtype=float)
    F = np.array([[0, 1, 2], [0, 3, 4]])
    n = compute_vertex_normals(TriangleMesh(V, F))[0]
    assert angle_deg(n, np.array([0, 0, 1.0])) < 0.1


def test_validate_rejects_bad_input():
    with pytest.raises(MeshError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 5]])).validate()
    with pytest.raises(MeshError):
        TriangleMesh(np.array([[np.nan, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]])).validate()


def test_area_weighted_sampling(rng):
    V = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 1], [0.01, 0, 1], [0, 0.01, 1]], dtype=float)
    m = TriangleMesh(V, np.array([[0, 1, 2], [3, 4, 5]]))
    fid, bary = m.sample_barycentric(10_000, rng)
    assert (fid == 0).mean() > 0.999
    assert np.allclose(bary.sum(1), 1) and (bary >= 0).all()
    with pytest.raises(MeshError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 2]])).sample_barycentric(5, rng)


def test_io_roundtrip(tmp_path):
    t = torus_mesh(12, 6)
    for name in ("m.obj", "m.ply"):
        save_mesh(t, tmp_path / name)
        back = load_mesh(tmp_path / name)
        assert np.array_equal(back.faces, t.faces)
        assert np.allclose(back.vertices, t.vertices, atol=1e-12)


def test_weld_merges_duplicates():
    g = grid_mesh(2, 2)
    V = g.vertices[g.faces.ravel()]
    soup = TriangleMesh(V, np.arange(len(V)).reshape(-1, 3))
    w = weld(soup)
    assert w.n_vertices == g.n_vertices
    assert np.isclose(w.area, g.area)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_area_and_volume_translation_invariant(x, y, z):
    s = icosphere(1)
    moved = s.with_vertices(s.vertices + [x, y, z])
    assert np.isclose(moved.area, s.area)
    assert np.isclose(moved.volume, s.volume, rtol=1e-9, atol=1e-9)
