"""Geodesic distances on triangle meshes by the heat method.

Three steps per source: a short implicit heat-diffusion step, normalisation
of the negated heat gradient, and a Poisson solve for the potential whose
gradient matches it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import splu

from .core import MeshError, TriangleMesh

COT_CLAMP = 20.0


@dataclass
class GeodesicField:
    sources: np.ndarray
    distances: np.ndarray  # (len(sources), V); +inf where unreachable

    def __getitem__(self, source: int) -> np.ndarray:
        hits = np.flatnonzero(self.sources == source)
        if not len(hits):
            raise KeyError(source)
        return self.distances[hits[0]]


def _face_cotangents(mesh: TriangleMesh) -> np.ndarray:
    """cot of the angle at each corner of each face, clamped to +-COT_CLAMP."""
    v = mesh.vertices[mesh.faces]
    cots = np.empty((mesh.n_faces, 3))
    for k in range(3):
        a = v[:, (k + 1) % 3] - v[:, k]
        b = v[:, (k + 2) % 3] - v[:, k]
        dot = np.einsum("ij,ij->i", a, b)
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = dot / cross
        c[~np.isfinite(c)] = COT_CLAMP
        cots[:, k] = np.clip(c, -COT_CLAMP, COT_CLAMP)
    return cots


def cotan_laplacian(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Positive semi-definite cotangent Laplacian (L = -Delta)."""
    f = mesh.faces
    cots = _face_cotangents(mesh)
    rows, cols, vals = [], [], []
    for k in range(3):
        i = f[:, (k + 1) % 3]
        j = f[:, (k + 2) % 3]
        w = 0.5 * cots[:, k]
        rows += [i, j]
        cols += [j, i]
        vals += [-w, -w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    n = mesh.n_vertices
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sparse.diags(diag)).tocsr()


def lumped_mass(mesh: TriangleMesh) -> np.ndarray:
    m = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(m, mesh.faces[:, k], mesh.face_areas / 3.0)
    return m


class HeatGeodesics:
    """Prefactored heat-method solver for repeated distance queries."""

    def __init__(self, mesh: TriangleMesh, t: float | None = None):
        self.mesh = mesh
        if np.any(mesh.face_areas <= 0):
            raise MeshError("singular Laplacian: mesh has zero-area faces")
        self.L = cotan_laplacian(mesh)
        self.M = lumped_mass(mesh)
        h = float(mesh.edge_lengths.mean())
        self.t = h * h if t is None else float(t)
        self.heat = splu((sparse.diags(self.M) + self.t * self.L).tocsc())
        self.n_comp, self.labels = mesh.connected_components()
        # pin one vertex per component to remove the Poisson null space
        pinned = np.array([np.flatnonzero(self.labels == c)[0] for c in range(self.n_comp)])
        keep = np.ones(mesh.n_vertices, dtype=bool)
        keep[pinned] = False
        self.free = np.flatnonzero(keep)
        Lff = self.L[self.free][:, self.free].tocsc()
        try:
            self.poisson = splu(Lff)
        except RuntimeError as exc:
            raise MeshError(f"singular Laplacian: {exc}") from exc
        self._prepare_operators()

    def _prepare_operators(self):
        mesh = self.mesh
        v = mesh.vertices[mesh.faces]
        n = mesh.face_normals
        # rotated opposite edges: grad u = sum_i u_i (N x e_i) / (2A)
        self.rot_edges = np.stack(
            [np.cross(n, v[:, (k + 2) % 3] - v[:, (k + 1) % 3]) for k in range(3)], axis=1
        ) / (2.0 * mesh.face_areas)[:, None, None]
        self.cots = _face_cotangents(mesh)

    def distances(self, sources, batch: int = 256) -> np.ndarray:
        sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        if len(sources) == 0:
            raise ValueError("no sources given")
        out = np.empty((len(sources), self.mesh.n_vertices))
        for s in range(0, len(sources), batch):
            out[s:s + batch] = self._solve(sources[s:s + batch]).T
        return out

    def _solve(self, sources: np.ndarray) -> np.ndarray:
        mesh = self.mesh
        nv, f = mesh.n_vertices, mesh.faces
        b = len(sources)
        rhs = np.zeros((nv, b))
        rhs[sources, np.arange(b)] = 1.0
        u = self.heat.solve(rhs)
        # per-face gradient, (F, 3, B)
        grad = np.einsum("fkd,fkb->fdb", self.rot_edges, u[f])
        norm = np.linalg.norm(grad, axis=1, keepdims=True)
        X = -np.divide(grad, norm, out=np.zeros_like(grad), where=norm > 1e-300)
        v = mesh.vertices[f]
        div = np.zeros((nv, b))
        for k in range(3):
            i, j, l = k, (k + 1) % 3, (k + 2) % 3
            e1 = v[:, j] - v[:, i]  # opposite corner l
            e2 = v[:, l] - v[:, i]  # opposite corner j
            contrib = 0.5 * (
                self.cots[:, l, None] * np.einsum("fd,fdb->fb", e1, X)
                + self.cots[:, j, None] * np.einsum("fd,fdb->fb", e2, X)
            )
            np.add.at(div, f[:, i], contrib)
        phi = np.zeros((nv, b))
        phi[self.free] = self.poisson.solve(-div[self.free])
        col = np.arange(b)
        phi = phi - phi[sources, col][None, :]
        reach = self.labels[:, None] == self.labels[sources][None, :]
        phi = np.where(reach, np.maximum(phi, 0.0), np.inf)
        phi[sources, col] = 0.0
        return phi


def geodesic_distances(mesh: TriangleMesh, sources) -> GeodesicField:
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if len(sources) == 0:
        raise ValueError("no sources given")
    d = HeatGeodesics(mesh).distances(sources)
    return GeodesicField(sources, d)


def edge_graph_distances(mesh: TriangleMesh, sources) -> np.ndarray:
    """Dijkstra shortest paths along mesh edges (reference oracle)."""
    e = mesh.edges
    w = mesh.edge_lengths
    n = mesh.n_vertices
    g = sparse.csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )
    return dijkstra(g, directed=False, indices=np.atleast_1d(sources))
