"""Edge-collapse simplification towards a target edge length."""
from __future__ import annotations

import heapq
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .core import TriangleMesh

log = logging.getLogger(__name__)

LOW, HIGH = 0.8, 1.5


@dataclass
class SimplifyReport:
    collapses: int
    skipped: int
    median_edge: float
    converged: bool


class _EditableMesh:
    def __init__(self, mesh: TriangleMesh):
        self.v = mesh.vertices.copy()
        self.f = mesh.faces.copy()
        self.alive = np.ones(len(self.f), dtype=bool)
        self.vfaces: list[set[int]] = [set() for _ in range(len(self.v))]
        for fi, tri in enumerate(self.f.tolist()):
            for a in tri:
                self.vfaces[a].add(fi)
        self.removed = np.zeros(len(self.v), dtype=bool)

    def neighbors(self, a: int) -> set[int]:
        out = set()
        for fi in self.vfaces[a]:
            out.update(self.f[fi].tolist())
        out.discard(a)
        return out

    def try_collapse(self, a: int, b: int, hi: float) -> bool:
        """Collapse edge (a, b) into a at the midpoint; False if unsafe."""
        na, nb = self.neighbors(a), self.neighbors(b)
        if b not in na:
            return False
        shared = self.vfaces[a] & self.vfaces[b]
        # link condition: the common neighbours are exactly the two wing vertices
        if len(shared) != 2 or len(na & nb) != 2:
            return False
        if len(na) <= 3 or len(nb) <= 3:
            return False
        p = 0.5 * (self.v[a] + self.v[b])
        ring = np.fromiter((na | nb) - {a, b}, dtype=np.int64)
        if np.any(np.einsum("ij,ij->i", self.v[ring] - p, self.v[ring] - p) > hi * hi):
            return False
        moved = np.fromiter((self.vfaces[a] | self.vfaces[b]) - shared, dtype=np.int64)
        tri = self.f[moved]
        pos = self.v[tri]
        old = np.cross(pos[:, 1] - pos[:, 0], pos[:, 2] - pos[:, 0])
        pos[(tri == a) | (tri == b)] = p
        new = np.cross(pos[:, 1] - pos[:, 0], pos[:, 2] - pos[:, 0])
        on = np.linalg.norm(old, axis=1)
        nn = np.linalg.norm(new, axis=1)
        if np.any(nn < 1e-14) or np.any(np.einsum("ij,ij->i", old, new) < 0.2 * on * nn):
            return False
        for fi in shared:
            self.alive[fi] = False
            for x in self.f[fi].tolist():
                self.vfaces[x].discard(fi)
        for fi in list(self.vfaces[b]):
            tri = self.f[fi]
            tri[tri == b] = a
            self.vfaces[a].add(fi)
        self.vfaces[b] = set()
        self.removed[b] = True
        self.v[a] = p
        return True

    def to_mesh(self) -> TriangleMesh:
        return TriangleMesh(self.v, self.f[self.alive]).compact()


def _median_edge(mesh: TriangleMesh) -> float:
    return float(np.median(mesh.edge_lengths))


def simplify_to_edge_length(mesh: TriangleMesh, target: float, return_report: bool = False):
    """Collapse short edges until the median edge length is near ``target``.

    Collapses go shortest-first to the edge midpoint. A collapse is skipped
    when it would violate the link condition (non-manifold result), flip a
    face, or create an edge longer than ``1.5 * target``.
    """
    if not target > 0:
        raise ValueError("target edge length must be positive")
    if not (mesh.is_closed and mesh.is_manifold):
        raise ValueError("simplification needs a closed manifold mesh")
    median = _median_edge(mesh)
    if median >= LOW * target:
        report = SimplifyReport(0, 0, median, median <= HIGH * target)
        return (mesh, report) if return_report else mesh

    em = _EditableMesh(mesh)
    collapses = skipped = 0
    threshold = LOW * target
    hi = HIGH * target
    out = mesh
    for _ in range(8):
        heap = [(float(l), int(a), int(b)) for (a, b), l in zip(out.edges, out.edge_lengths) if l < threshold]
        # keep indices of the editable mesh: rebuild from the current state
        if out is not mesh:
            em = _EditableMesh(out)
        heapq.heapify(heap)
        while heap:
            length, a, b = heapq.heappop(heap)
            if em.removed[a] or em.removed[b]:
                continue
            cur = float(np.linalg.norm(em.v[a] - em.v[b]))
            if abs(cur - length) > 1e-15:
                if cur < threshold:
                    heapq.heappush(heap, (cur, a, b))
                continue
            if em.try_collapse(a, b, hi):
                collapses += 1
                for n in em.neighbors(a):
                    d = float(np.linalg.norm(em.v[a] - em.v[n]))
                    if d < threshold:
                        heapq.heappush(heap, (d, min(a, n), max(a, n)))
            else:
                skipped += 1
        out = em.to_mesh()
        median = _median_edge(out)
        log.debug("simplify pass: %d faces, median edge %.4g", out.n_faces, median)
        if median >= LOW * target:
            break
        threshold *= 1.15
    converged = LOW * target <= median <= HIGH * target
    if not converged:
        warnings.warn(f"simplification stopped at median edge {median:.4g} (target {target:.4g})", RuntimeWarning)
    report = SimplifyReport(collapses, skipped, median, converged)
    return (out, report) if return_report else out


FLIP_NORMAL_COS = 0.7


def _oriented_wings(faces: np.ndarray, f0: int, f1: int, a: int, b: int):
    """Opposite vertices (c, d) with face f0 = (a, b, c) in cyclic order."""
    t0 = faces[f0].tolist()
    t1 = faces[f1].tolist()
    i = t0.index(a)
    if t0[(i + 1) % 3] != b:
        a, b = b, a
    c = next(x for x in t0 if x != a and x != b)
    d = next(x for x in t1 if x != a and x != b)
    return a, b, c, d


def _unit(n: np.ndarray) -> np.ndarray:
    return n / max(np.linalg.norm(n), 1e-300)


def flip_edges(mesh: TriangleMesh) -> tuple[TriangleMesh, int]:
    """One pass of valence-improving edge flips (target valence 6).

    A flip is taken only when both new triangles stay within ~45 degrees of
    the normals they replace and the new diagonal is not already an edge.
    Each face takes part in at most one flip per pass.
    """
    faces = mesh.faces.copy()
    V = mesh.vertices
    valence = np.bincount(mesh.edges.ravel(), minlength=mesh.n_vertices)
    existing = set(map(tuple, mesh.edges.tolist()))
    touched = np.zeros(len(faces), dtype=bool)
    flips = 0
    for e in mesh.interior_edges:
        a, b = (int(x) for x in mesh.edges[e])
        f0, f1 = (int(x) for x in mesh.edge_faces[e])
        if touched[f0] or touched[f1]:
            continue
        a, b, c, d = _oriented_wings(faces, f0, f1, a, b)
        if (min(c, d), max(c, d)) in existing or valence[a] <= 3 or valence[b] <= 3:
            continue
        before = sum(abs(int(valence[x]) - 6) for x in (a, b, c, d))
        after = (abs(int(valence[a]) - 7) + abs(int(valence[b]) - 7) + abs(int(valence[c]) - 5)
                 + abs(int(valence[d]) - 5))
        if after >= before:
            continue
        old = _unit(np.cross(V[b] - V[a], V[c] - V[a]) + np.cross(V[a] - V[b], V[d] - V[b]))
        n1 = _unit(np.cross(V[a] - V[c], V[d] - V[c]))
        n2 = _unit(np.cross(V[d] - V[c], V[b] - V[c]))
        if n1 @ old < FLIP_NORMAL_COS or n2 @ old < FLIP_NORMAL_COS:
            continue
        faces[f0] = (c, a, d)
        faces[f1] = (c, d, b)
        touched[f0] = touched[f1] = True
        valence[a] -= 1
        valence[b] -= 1
        valence[c] += 1
        valence[d] += 1
        existing.discard((min(a, b), max(a, b)))
        existing.add((min(c, d), max(c, d)))
        flips += 1
    return TriangleMesh(mesh.vertices, faces), flips


def relax_onto(mesh: TriangleMesh, reference: TriangleMesh) -> TriangleMesh:
    """Tangential umbrella step, then projection onto the reference surface.

    The projection uses the tangent plane of the nearest reference vertex,
    accurate to second order in the reference edge length.
    """
    from scipy.spatial import cKDTree

    V = mesh.vertices
    A = mesh.adjacency
    deg = np.asarray(A.sum(axis=1)).ravel()
    q = (A @ V) / deg[:, None]
    n = mesh.vertex_normals
    step = q - V
    step -= np.einsum("ij,ij->i", step, n)[:, None] * n
    P = V + step
    _, idx = cKDTree(reference.vertices).query(P)
    h = reference.vertices[idx]
    rn = reference.vertex_normals[idx]
    P = P - np.einsum("ij,ij->i", P - h, rn)[:, None] * rn
    return mesh.with_vertices(P)


def polish(mesh: TriangleMesh, reference: TriangleMesh, iterations: int = 5) -> TriangleMesh:
    """Improve triangle shape after simplification while staying on ``reference``."""
    for _ in range(iterations):
        mesh, _ = flip_edges(mesh)
        mesh = relax_onto(mesh, reference)
    return mesh
