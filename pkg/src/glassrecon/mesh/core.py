"""Indexed triangle mesh with cached adjacency and normals."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse


class MeshError(ValueError):
    """Raised for structurally invalid meshes."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle mesh.

    Derived quantities (normals, edges, adjacency) are computed lazily and
    cached on the instance. Use :meth:`with_vertices` to get a displaced copy
    sharing the connectivity.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriangleMesh":
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise MeshError("vertex array shape changed")
        return TriangleMesh(vertices, self.faces)

    def validate(self) -> None:
        """Check index range, degenerate faces and consistent winding."""
        f = self.faces
        if len(f) == 0:
            raise MeshError("mesh has no faces")
        if f.min() < 0 or f.max() >= self.n_vertices:
            raise MeshError("face index out of range")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")
        degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        if degenerate.any():
            raise MeshError(f"degenerate face {int(np.flatnonzero(degenerate)[0])}")
        directed = self.directed_edges
        keys = directed[:, 0] * self.n_vertices + directed[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise MeshError("inconsistent winding: a directed edge appears twice")

    # ---- geometry -------------------------------------------------------
    @cached_property
    def face_cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = self.face_cross
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(n > 0, n, 1.0)

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        return compute_vertex_normals(self)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    # ---- connectivity ---------------------------------------------------
    @cached_property
    def directed_edges(self) -> np.ndarray:
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)

    @cached_property
    def _edge_data(self):
        d = self.directed_edges
        lo = np.minimum(d[:, 0], d[:, 1])
        hi = np.maximum(d[:, 0], d[:, 1])
        keys = lo * self.n_vertices + hi
        uniq, inverse = np.unique(keys, return_inverse=True)
        edges = np.stack([uniq // self.n_vertices, uniq % self.n_vertices], axis=1)
        # directed edge k belongs to face k % F
        face_of = np.tile(np.arange(self.n_faces), 3)
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=len(uniq))
        edge_faces = np.full((len(uniq), 2), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_faces[:, 0] = face_of[order[starts]]
        two = counts >= 2
        edge_faces[two, 1] = face_of[order[starts[two] + 1]]
        return edges, edge_faces, counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(E, 2)`` with ``e[0] < e[1]``."""
        return self._edge_data[0]

    @property
    def edge_faces(self) -> np.ndarray:
        """For each edge, the (up to) two incident faces; -1 marks a boundary."""
        return self._edge_data[1]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_data[2]

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_face_counts == 2)

    @property
    def is_closed(self) -> bool:
        return bool(np.all(self.edge_face_counts == 2))

    @property
    def is_manifold(self) -> bool:
        return bool(np.all(self.edge_face_counts <= 2))

    @property
    def euler_characteristic(self) -> int:
        used = np.unique(self.faces).size
        return int(used - len(self.edges) + self.n_faces)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 vertex adjacency matrix."""
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def vertex_neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    @cached_property
    def vertex_faces(self) -> sparse.csr_matrix:
        """Vertex-by-face incidence matrix."""
        f = self.faces
        rows = f.ravel()
        cols = np.repeat(np.arange(self.n_faces), 3)
        return sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, self.n_faces)
        )

    @cached_property
    def face_adjacency(self) -> sparse.csr_matrix:
        """Face-by-face adjacency across shared edges."""
        ef = self.edge_faces[self.interior_edges]
        n = self.n_faces
        rows = np.concatenate([ef[:, 0], ef[:, 1]])
        cols = np.concatenate([ef[:, 1], ef[:, 0]])
        return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def connected_components(self) -> tuple[int, np.ndarray]:
        from scipy.sparse.csgraph import connected_components

        return connected_components(self.adjacency, directed=False)

    def sample_barycentric(self, n: int, rng: np.random.Generator):
        """Area-uniform face ids and barycentric coordinates of ``n`` samples."""
        areas = self.face_areas
        total = areas.sum()
        if not total > 0:
            raise MeshError("mesh has zero surface area")
        face_ids = rng.choice(self.n_faces, size=n, p=areas / total)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        return face_ids, np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)

    def sample_surface(self, n: int, rng: np.random.Generator):
        """Area-uniform surface samples; returns points and their face ids."""
        face_ids, b = self.sample_barycentric(n, rng)
        tri = self.vertices[self.faces[face_ids]]
        return np.einsum("ij,ijk->ik", b, tri), face_ids

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces[:, ::-1].copy())

    def oriented_outward(self) -> "TriangleMesh":
        return self.flipped() if self.volume < 0 else self

    def compact(self) -> "TriangleMesh":
        """Drop unreferenced vertices."""
        used = np.unique(self.faces)
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(self.vertices[used], remap[self.faces])


def compute_vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted vertex normals, unit length.

    The unnormalised face cross product has length twice the triangle area, so
    summing it is exactly area weighting.
    """
    acc = np.zeros_like(mesh.vertices)
    c = mesh.face_cross
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], c)
    norm = np.linalg.norm(acc, axis=1)
    bad = np.flatnonzero(~(norm > 0))
    if len(bad):
        counts = np.bincount(mesh.faces.ravel(), minlength=mesh.n_vertices)
        isolated = np.flatnonzero(counts == 0)
        if len(isolated):
            raise MeshError(f"vertex {int(isolated[0])} has no incident faces")
        raise MeshError(f"vertex {int(bad[0])} has a zero-length normal")
    return acc / norm[:, None]


def interpolate_normal(mesh: TriangleMesh, face: int, bary) -> np.ndarray:
    bary = np.asarray(bary, dtype=np.float64)
    if np.any(bary < 0) or abs(bary.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid barycentric coordinates {bary}")
    n = bary @ mesh.vertex_normals[mesh.faces[face]]
    length = np.linalg.norm(n)
    if length < 1e-12:
        raise ValueError("interpolated normal vanishes (opposing vertex normals)")
    return n / length


# ---- primitives ---------------------------------------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = np.array(verts, dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(faces, dtype=np.int64)
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return TriangleMesh(v * radius, f)


def _subdivide(v: np.ndarray, f: np.ndarray):
    n = len(v)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = np.minimum(e[:, 0], e[:, 1]) * n + np.maximum(e[:, 0], e[:, 1])
    uniq, inv = np.unique(key, return_inverse=True)
    a, b = uniq // n, uniq % n
    mid = 0.5 * (v[a] + v[b])
    m = inv.reshape(3, -1).T + n  # midpoints of edges (01, 12, 20)
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    nf = np.concatenate([
        np.stack([f[:, 0], m01, m20], 1),
        np.stack([f[:, 1], m12, m01], 1),
        np.stack([f[:, 2], m20, m12], 1),
        np.stack([m01, m12, m20], 1),
    ])
    return np.concatenate([v, mid]), nf


def grid_mesh(nx: int, ny: int, size=(1.0, 1.0)) -> TriangleMesh:
    """Flat rectangle in the z=0 plane, normals along +z."""
    xs = np.linspace(0.0, size[0], nx + 1)
    ys = np.linspace(0.0, size[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    v = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(v, f)


def box_mesh(n: int = 4, half: float = 0.5) -> TriangleMesh:
    """Closed axis-aligned cube with each side split into n x n quads."""
    verts: list[np.ndarray] = []
    faces: list[np.ndarray] = []
    g = np.linspace(-half, half, n + 1)
    U, V = np.meshgrid(g, g, indexing="xy")
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    quad = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    offset = 0
    for axis in range(3):
        for sign in (-1.0, 1.0):
            p = np.zeros((U.size, 3))
            u_ax, v_ax = [k for k in range(3) if k != axis]
            p[:, axis] = sign * half
            p[:, u_ax] = U.ravel()
            p[:, v_ax] = V.ravel()
            tri = quad + offset
            # orient outward: (u x v) points along +axis for the cyclic pair
            cyc = (u_ax - axis) % 3 == 1
            if (sign > 0) != cyc:
                tri = tri[:, ::-1]
            verts.append(p)
            faces.append(tri)
            offset += len(p)
    mesh = TriangleMesh(np.concatenate(verts), np.concatenate(faces))
    return weld(mesh)


def torus_mesh(nu: int = 32, nv: int = 16, R: float = 0.35, r: float = 0.15) -> TriangleMesh:
    u = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    v = np.linspace(0, 2 * np.pi, nv, endpoint=False)
    U, Vv = np.meshgrid(u, v, indexing="ij")
    x = (R + r * np.cos(Vv)) * np.cos(U)
    z = (R + r * np.cos(Vv)) * np.sin(U)
    y = r * np.sin(Vv)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], 1)
    idx = np.arange(nu * nv).reshape(nu, nv)
    a = idx
    b = np.roll(idx, -1, axis=0)
    c = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    d = np.roll(idx, -1, axis=1)
    f = np.concatenate([
        np.stack([a.ravel(), d.ravel(), c.ravel()], 1),
        np.stack([a.ravel(), c.ravel(), b.ravel()], 1),
    ])
    return TriangleMesh(verts, f).oriented_outward()


def weld(mesh: TriangleMesh, tol: float = 1e-9) -> TriangleMesh:
    """Merge coincident vertices (within ``tol``)."""
    q = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, inv = np.unique(q, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = mesh.vertices[first[order]]
    faces = rank[inv[mesh.faces]]
    return TriangleMesh(verts, faces)
