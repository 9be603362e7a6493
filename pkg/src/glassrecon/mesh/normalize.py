"""Minimal enclosing ball and unit-diameter normalisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core import MeshError, TriangleMesh

_EPS = 1e-12


@dataclass(frozen=True)
class Similarity:
    """x -> scale * x + translation."""

    scale: float
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) + self.translation

    def inverse(self) -> "Similarity":
        inv = 1.0 / self.scale
        return Similarity(inv, -inv * np.asarray(self.translation))

    def compose(self, first: "Similarity") -> "Similarity":
        """Transform equal to applying ``first`` then ``self``."""
        return Similarity(self.scale * first.scale, self.scale * first.translation + self.translation)

    def to_dict(self) -> dict:
        return {"scale": float(self.scale), "translation": [float(x) for x in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "Similarity":
        return cls(float(d["scale"]), np.asarray(d["translation"], dtype=np.float64))

    @classmethod
    def identity(cls) -> "Similarity":
        return cls(1.0, np.zeros(3))


def _ball_from(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest ball with all 1..4 points on its boundary."""
    n = len(points)
    if n == 1:
        return points[0].copy(), 0.0
    if n == 2:
        c = 0.5 * (points[0] + points[1])
        return c, float(np.linalg.norm(points[0] - c))
    a = points[0]
    d = points[1:] - a
    if n == 3:
        # circumcircle in the plane of the triangle
        u, v = d
        w = np.cross(u, v)
        ww = w @ w
        if ww < _EPS * _EPS:
            return _widest_pair(points)
        off = (np.cross(w, u) * (v @ v) + np.cross(v, w) * (u @ u)) / (2.0 * ww)
        return a + off, float(np.linalg.norm(off))
    A = 2.0 * d
    b = np.einsum("ij,ij->i", d, d)
    if abs(np.linalg.det(A)) < _EPS:
        # coplanar: the ball through the best three points
        best = None
        for drop in range(4):
            sub = np.delete(points, drop, axis=0)
            c, r = _ball_from(sub)
            if np.all(np.linalg.norm(points - c, axis=1) <= r * (1 + 1e-9) + _EPS):
                if best is None or r < best[1]:
                    best = (c, r)
        return best if best is not None else _widest_pair(points)
    off = np.linalg.solve(A, b)
    return a + off, float(np.linalg.norm(off))


def _widest_pair(points):
    d = np.linalg.norm(points[:, None] - points[None], axis=2)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    return _ball_from(points[[i, j]])


def _next_outside(points: np.ndarray, lo: int, hi: int, c: np.ndarray, r: float) -> int:
    if lo >= hi:
        return -1
    diff = points[lo:hi] - c
    out = np.einsum("ij,ij->i", diff, diff) > (r * (1 + 1e-12) + 1e-15) ** 2
    idx = np.flatnonzero(out)
    return lo + int(idx[0]) if len(idx) else -1


def _welzl(points: np.ndarray, fixed: list[int], n: int) -> tuple[np.ndarray, float]:
    """Ball of points[:n] with points[fixed] on its boundary."""
    if fixed:
        c, r = _ball_from(points[fixed])
    else:
        c, r = points[0].copy(), 0.0
    if len(fixed) == 4:
        return c, r
    i = 0
    while True:
        i = _next_outside(points, i, n, c, r)
        if i < 0:
            return c, r
        c, r = _welzl(points, fixed + [i], i)
        i += 1


def minimal_enclosing_ball(points) -> tuple[np.ndarray, float]:
    """Exact minimal enclosing ball (Welzl, iterative first-violator form)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise MeshError("no points")
    try:
        pts = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        pts = np.unique(pts, axis=0)
    # fixed permutation keeps results deterministic
    pts = pts[np.random.default_rng(0).permutation(len(pts))]
    return _welzl(pts, [], len(pts))


def normalize_scale(mesh: TriangleMesh) -> tuple[TriangleMesh, Similarity]:
    """Scale and translate so the minimal enclosing ball is centred at the origin with diameter 1."""
    if mesh.n_vertices == 0:
        raise MeshError("empty mesh")
    c, r = minimal_enclosing_ball(mesh.vertices[np.unique(mesh.faces)] if mesh.n_faces else mesh.vertices)
    if not r > 1e-15:
        raise MeshError("mesh has zero extent")
    s = 1.0 / (2.0 * r)
    tf = Similarity(s, -s * c)
    return mesh.with_vertices(tf.apply(mesh.vertices)), tf
