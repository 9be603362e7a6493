"""Reconstruction metrics: chamfer distance, mask difference, ICP alignment."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh.core import TriangleMesh
from .scene.render import render_mask
from .trace.bvh import BVH

DEFAULT_SAMPLES = 100_000
MIN_SAMPLES = 1000


def _check_mesh(mesh: TriangleMesh, name: str) -> None:
    if mesh.n_faces == 0 or not mesh.face_areas.sum() > 0:
        raise ValueError(f"{name} mesh is degenerate (no surface area)")


def chamfer_points(P: np.ndarray, Q: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbour distance between point sets."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("chamfer distance needs two nonempty point sets")
    ip = cKDTree(Q).query(P)[1]
    iq = cKDTree(P).query(Q)[1]
    dp = ((P - Q[ip]) ** 2).sum(axis=1)
    dq = ((Q - P[iq]) ** 2).sum(axis=1)
    return float(dp.mean() + dq.mean())


def chamfer_metric(a: TriangleMesh, b: TriangleMesh, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Chamfer distance between area-uniform surface samples of two meshes.

    Both meshes draw from the same random stream, so identical meshes get
    identical samples and the metric is symmetric in its arguments.
    """
    if samples < MIN_SAMPLES:
        raise ValueError(f"chamfer metric needs at least {MIN_SAMPLES} samples")
    _check_mesh(a, "first")
    _check_mesh(b, "second")
    pa, _ = a.sample_surface(samples, np.random.default_rng([seed, 0]))
    pb, _ = b.sample_surface(samples, np.random.default_rng([seed, 0]))
    return chamfer_points(pa, pb)


def mask_diff(rendered, reference) -> tuple[float, list[float]]:
    """Mean absolute difference over all views and pixels, plus per-view values."""
    rendered = [np.asarray(m, dtype=bool) for m in rendered]
    reference = [np.asarray(m, dtype=bool) for m in reference]
    if len(rendered) != len(reference) or not rendered:
        raise ValueError("need the same nonzero number of rendered and reference masks")
    per_view, total, count = [], 0, 0
    for r, g in zip(rendered, reference):
        if r.shape != g.shape:
            raise ValueError(f"mask resolution mismatch: {r.shape} vs {g.shape}")
        d = int(np.count_nonzero(r != g))
        per_view.append(d / r.size)
        total += d
        count += r.size
    return total / count, per_view


@dataclass
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    rms_history: list[float] = field(default_factory=list)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @property
    def angle_deg(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def kabsch(P: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimising sum |R p + t - q|^2."""
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - mp).T @ (Q - mq)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, mq - R @ mp


def icp_align(source: TriangleMesh, target: TriangleMesh, max_iters: int = 50, samples: int = 5000,
              tol: float = 1e-9, seed: int = 0) -> RigidTransform:
    """Point-to-point ICP taking ``source`` onto ``target`` (shared sample stream, as for the metric)."""
    _check_mesh(source, "source")
    _check_mesh(target, "target")
    P, _ = source.sample_surface(samples, np.random.default_rng([seed, 2]))
    Q, _ = target.sample_surface(samples, np.random.default_rng([seed, 2]))
    tree = cKDTree(Q)
    R, t = np.eye(3), np.zeros(3)
    cur = P.copy()
    d, idx = tree.query(cur)
    if len(idx) == 0:
        raise ValueError("ICP found no correspondences")
    history = [float(np.sqrt(np.mean(d ** 2)))]
    for _ in range(max_iters):
        dR, dt = kabsch(cur, Q[idx])
        cur = cur @ dR.T + dt
        R, t = dR @ R, dR @ t + dt
        d, idx = tree.query(cur)
        history.append(float(np.sqrt(np.mean(d ** 2))))
        if history[-2] - history[-1] < tol:
            break
    return RigidTransform(R, t, history)


@dataclass
class EvalReport:
    chamfer: float
    samples: int
    normalization: str = "bounding-ball diameter 1"
    aligned: bool = False
    mask_diff: float | None = None
    per_view_mask_diff: list[float] = field(default_factory=list)
    runtime_s: float = 0.0
    alignment: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def evaluate(recon: TriangleMesh, gt: TriangleMesh, cameras=None, masks=None, samples: int = DEFAULT_SAMPLES,
             icp: bool = False, seed: int = 0) -> EvalReport:
    """Chamfer distance (after optional ICP) and, with cameras and masks, mask difference."""
    t0 = time.perf_counter()
    alignment = None
    if icp:
        tf = icp_align(recon, gt, seed=seed)
        recon = recon.with_vertices(tf.apply(recon.vertices))
        alignment = {"rotation": tf.rotation.tolist(), "translation": tf.translation.tolist(),
                     "rms": tf.rms_history[-1]}
    report = EvalReport(chamfer_metric(recon, gt, samples, seed), samples, aligned=icp, alignment=alignment)
    if cameras is not None and masks is not None:
        bvh = BVH(recon.vertices, recon.faces)
        rendered = [render_mask(recon, c, bvh) for c in cameras]
        report.mask_diff, report.per_view_mask_diff = mask_diff(rendered, masks)
    report.runtime_s = time.perf_counter() - t0
    return report
