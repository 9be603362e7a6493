import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from glassrecon.evaluation import (
    EvalReport, chamfer_metric, chamfer_points, evaluate, icp_align, kabsch, mask_diff,
)
from glassrecon.mesh.core import TriangleMesh, icosphere, torus_mesh
from glassrecon.pipeline import carve_masks
from glassrecon.scene.camera import gen_camera_ring


def test_chamfer_identical_and_symmetric():
    s = icosphere(4, 0.5)
    assert chamfer_metric(s, s, 10_000) < 1e-6
    t = torus_mesh(24, 12)
    assert chamfer_metric(s, t, 5000, seed=2) == chamfer_metric(t, s, 5000, seed=2)
    rng = np.random.default_rng(0)
    P, Q = rng.normal(size=(300, 3)), rng.normal(size=(200, 3))
    assert chamfer_points(P, Q) == chamfer_points(Q, P)


def test_offset_spheres_against_brute_force():
    a = icosphere(4, 0.5)
    b = a.with_vertices(a.vertices + [0.1, 0, 0])
    val = chamfer_metric(a, b, 2000, seed=1)
    assert 0 < val <= 0.01
    pa, _ = a.sample_surface(2000, np.random.default_rng([1, 0]))
    pb, _ = b.sample_surface(2000, np.random.default_rng([1, 0]))
    D = ((pa[:, None] - pb[None]) ** 2).sum(-1)
    assert val == D.min(1).mean() + D.min(0).mean()


def test_chamfer_rejects_degenerate():
    s = icosphere(2)
    flat = TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError):
        chamfer_metric(s, flat, 1000)
    with pytest.raises(ValueError):
        chamfer_metric(s, s, 10)


def test_mask_diff_cases():
    m = np.random.default_rng(0).uniform(size=(100, 100)) > 0.5
    assert mask_diff([m], [m])[0] == 0.0
    assert mask_diff([m], [~m])[0] == 1.0
    f = m.copy()
    f[3, 7] = ~f[3, 7]
    assert mask_diff([f], [m])[0] == pytest.approx(1e-4, abs=1e-15)
    mean, per = mask_diff([m, f], [m, m])
    assert per == [0.0, 1e-4] and mean == pytest.approx(0.5e-4)
    with pytest.raises(ValueError):
        mask_diff([m], [m[:50]])


def test_kabsch_exact():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(40, 3))
    R = Rotation.from_rotvec([0.2, -0.1, 0.4]).as_matrix()
    Rk, tk = kabsch(P, P @ R.T + [1, 2, 3])
    assert np.allclose(Rk, R) and np.allclose(tk, [1, 2, 3])


def test_icp_identity_and_recovery():
    gt = torus_mesh(48, 24)
    tf = icp_align(gt, gt)
    assert np.abs(tf.rotation - np.eye(3)).max() < 1e-6 and np.abs(tf.translation).max() < 1e-6
    rng = np.random.default_rng(7)
    for _ in range(3):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R = Rotation.from_rotvec(np.radians(rng.uniform(2, 10)) * axis).as_matrix()
        t = rng.uniform(-1, 1, 3)
        t *= rng.uniform(0.01, 0.05) / np.linalg.norm(t)
        moved = gt.with_vertices(gt.vertices @ R.T + t)
        est = icp_align(moved, gt, max_iters=100)
        # the estimate should undo the perturbation
        R_err = est.rotation @ R
        ang = np.degrees(np.arccos(np.clip((np.trace(R_err) - 1) / 2, -1, 1)))
        assert ang < 0.5
        assert np.linalg.norm(est.rotation @ t + est.translation) < 1e-3
        h = np.array(est.rms_history)
        assert np.all(np.diff(h) <= 1e-12)


def test_evaluate_report():
    s = icosphere(3, 0.5)
    cams = gen_camera_ring(3, 3.0, 10.0, resolution=32)
    masks = carve_masks(s, cams)
    rep = evaluate(s, s, cams, masks, samples=2000)
    assert isinstance(rep, EvalReport)
    assert rep.mask_diff == 0.0 and len(rep.per_view_mask_diff) == 3
    d = json.loads(rep.to_json())
    assert d["samples"] == 2000 and d["normalization"]
    assert evaluate(s, s, samples=2000, icp=True).aligned
