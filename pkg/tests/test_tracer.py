import io
import json
from dataclasses import replace

import numpy as np
import torch
from scipy.spatial import ConvexHull

from glassrecon.mesh.core import TriangleMesh, icosphere, weld
from glassrecon.scene.pattern import gen_pattern
from glassrecon.scene.scene import PatternPlane
from glassrecon.scene.synthetic import slab_mesh
from glassrecon.trace.optics import ETA_IN, ETA_OUT
from glassrecon.trace.tracer import (
    NOT_TRACED, PATTERN, TIR, Backdrop, boundary_distance, dump_paths, prune_rays, trace,
)


def plane_backdrop(z=-3.0, size=10.0):
    plane = PatternPlane([-size / 2, -size / 2, z], [size, 0, 0], [0, size, 0])
    return Backdrop(plane, gen_pattern(0).texture(8))


def incident(theta):
    d = np.array([[np.sin(theta), 0.0, -np.cos(theta)]])
    o = np.array([[0.013, 0.021, 0.1]]) - 5 * d
    return o, d


def test_slab_exit_parallel_and_shift():
    t = 0.2
    slab = slab_mesh(t, size=4.0)
    for deg in (15.0, 30.0, 50.0):
        th = np.radians(deg)
        o, d = incident(th)
        p = trace(slab.vertices, slab.faces, plane_backdrop(), o, d)
        assert p.term_t2[0] == PATTERN
        l_t2 = p.l_t2[0].numpy()
        assert np.linalg.norm(l_t2 - d[0]) < 1e-6
        th_t = np.arcsin(ETA_OUT / ETA_IN * np.sin(th))
        shift = t * np.sin(th - th_t) / np.cos(th_t)
        x2 = p.x2[0].numpy()
        rel = x2 - o[0]
        dist = np.linalg.norm(rel - (rel @ d[0]) * d[0])
        assert abs(dist - shift) < 1e-9


def subdivide(mesh, times):
    """Flat 1-to-4 midpoint split; interior vertex normals equal face normals."""
    for _ in range(times):
        a, b, c = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tris = np.stack([np.stack(t, 1) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))], 1)
        V = tris.reshape(-1, 3)
        mesh = weld(TriangleMesh(V, np.arange(len(V)).reshape(-1, 3)))
    return mesh


def prism():
    # right-angle prism: legs on x=0 and z=0, hypotenuse x+z=1, extruded along y
    pts = np.array([[x, y, z] for y in (-1.0, 1.0) for x, z in ((0, 0), (1, 0), (0, 1))])
    hull = ConvexHull(pts)
    F = hull.simplices.copy()
    cross = np.cross(pts[F[:, 1]] - pts[F[:, 0]], pts[F[:, 2]] - pts[F[:, 0]])
    inward = np.einsum("ij,ij->i", cross, hull.equations[:, :3]) < 0
    F[inward] = F[inward][:, ::-1]
    return subdivide(TriangleMesh(pts, F), 4)


def test_total_internal_reflection():
    m = prism()
    # enter through the z=0 face going +z; meet the hypotenuse at 45 degrees
    o = np.array([[0.45, 0.1, -1.0]])
    d = np.array([[0.0, 0.0, 1.0]])
    p = trace(m.vertices, m.faces, plane_backdrop(z=5.0), o, d)
    assert p.hit[0]
    assert p.term_t2[0] == TIR
    assert not p.valid[0]


def test_miss_fetches_backdrop_directly():
    s = icosphere(2, 0.5)
    bd = plane_backdrop()
    o = np.array([[2.0, 0.0, 2.0]])
    d = np.array([[0.0, 0.0, -1.0]])
    p = trace(s.vertices, s.faces, bd, o, d)
    assert not p.hit[0] and not p.valid[0]
    assert p.term_t2[0] == NOT_TRACED
    kind, face, _ = bd.intersect(o, d)
    direct, _ = bd.fetch(torch.as_tensor(o), torch.as_tensor(d), kind, face)[:2]
    assert torch.allclose(p.color, direct.clamp(0, 1))


def sphere_rays(n=64):
    s = icosphere(3, 0.5)
    g = np.linspace(-0.3, 0.3, int(np.sqrt(n)))
    xx, yy = np.meshgrid(g, g)
    o = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, 3.0)], 1)
    d = np.tile([0.0, 0.0, -1.0], (len(o), 1))
    return s, o, d


def test_deterministic():
    s, o, d = sphere_rays()
    a = trace(s.vertices, s.faces, plane_backdrop(), o, d)
    b = trace(s.vertices, s.faces, plane_backdrop(), o, d)
    assert torch.equal(a.color, b.color)
    assert np.array_equal(a.term_t2, b.term_t2)


def test_gradients_flow_to_vertices():
    s, o, d = sphere_rays()
    V = torch.tensor(s.vertices, requires_grad=True)
    p = trace(V, s.faces, plane_backdrop(), o, d)
    (p.color.sum() + p.x2.sum()).backward()
    assert V.grad is not None and V.grad.abs().sum() > 0


def test_prune_rules():
    s, o, d = sphere_rays(1)
    p = trace(s.vertices, s.faces, plane_backdrop(), o[:1] * 0 + [0, 0, 3.0], d[:1])
    assert p.valid[0]
    img = np.full((40, 40, 3), 0.5)
    mask = np.zeros((40, 40), bool)
    mask[5:35, 5:35] = True
    px = (np.array([20]), np.array([20]))
    assert prune_rays(p, img, mask, px)[0]
    # grazing entry: |l_in . n1| = 0.1
    n1 = p.n1[0]
    tangent = torch.tensor([1.0, 0, 0], dtype=torch.float64)
    tangent = tangent - (tangent @ n1) * n1
    tangent = tangent / tangent.norm()
    l_in = -0.1 * n1 + np.sqrt(1 - 0.01) * tangent
    assert not prune_rays(replace(p, l_in=l_in[None]), img, mask, px)[0]
    # 3 px from the projected-mask boundary
    assert not prune_rays(p, img, mask, (np.array([7]), np.array([20])))[0]
    assert prune_rays(p, img, mask, (np.array([13]), np.array([20])))[0]
    # over-exposed pixel
    bright = img.copy()
    bright[20, 20] = 0.92
    assert not prune_rays(p, bright, mask, px)[0]
    bright[20, 20] = [0.92, 0.92, 0.8]
    assert prune_rays(p, bright, mask, px)[0]


def test_boundary_distance():
    m = np.zeros((9, 9), bool)
    m[:, 4:] = True
    b = boundary_distance(m)
    assert b[0, 4] == 1 and b[0, 3] == 1 and b[0, 8] == 5
    assert np.isinf(boundary_distance(np.ones((3, 3), bool))).all()


def test_dump_paths():
    s, o, d = sphere_rays(16)
    p = trace(s.vertices, s.faces, plane_backdrop(), o, d)
    fh = io.StringIO()
    n = dump_paths(p, fh)
    lines = fh.getvalue().splitlines()
    assert n == len(lines) == 16
    rec = [json.loads(x) for x in lines]
    hit = [r for r in rec if r["hit"]]
    assert hit and "x1" in hit[0] and "termination_t2" in hit[0]
