import numpy as np

from glassrecon.mesh.core import icosphere, torus_mesh
from glassrecon.mesh.simplify import flip_edges, polish, simplify_to_edge_length


def test_noop_when_edges_already_long():
    s = icosphere(2)
    out = simplify_to_edge_length(s, 0.01)
    assert out is s or (np.array_equal(out.faces, s.faces) and np.array_equal(out.vertices, s.vertices))


def test_dense_sphere_target():
    s = icosphere(7, 0.5)  # diameter 1, median edge ~0.0047
    out = simplify_to_edge_length(s, 0.005)
    med = float(np.median(out.edge_lengths))
    assert 0.004 <= med <= 0.0075


def test_sphere_coarsened_to_target():
    s = icosphere(6, 0.5)
    out, report = simplify_to_edge_length(s, 0.03, return_report=True)
    med = float(np.median(out.edge_lengths))
    assert report.converged and report.collapses > 0
    assert 0.024 <= med <= 0.045
    assert report.median_edge == med
    assert out.is_closed and out.is_manifold
    assert out.euler_characteristic == 2


def test_torus_genus_preserved():
    t = torus_mesh(96, 48)
    out = simplify_to_edge_length(t, 0.06)
    assert out.n_faces < t.n_faces
    assert out.euler_characteristic == t.euler_characteristic == 0
    assert out.is_closed and out.is_manifold


def test_flip_and_polish_keep_topology():
    s = icosphere(5, 0.5)
    coarse = simplify_to_edge_length(s, 0.04)
    flipped, n = flip_edges(coarse)
    assert n >= 0
    assert flipped.euler_characteristic == 2 and flipped.is_manifold
    p = polish(coarse, s, 3)
    assert p.is_closed and p.is_manifold and p.euler_characteristic == 2
    # vertices stay on the reference sphere
    r = np.linalg.norm(p.vertices, axis=1)
    assert np.abs(r - 0.5).max() < 0.01
    assert (p.face_normals * p.face_centroids).sum(1).min() > 0
