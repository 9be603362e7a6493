"""Variational shape approximation: partition faces into near-planar clusters.

Proxies are fitted exactly from integrated second moments of the triangles, so
the L2 distortion of a cluster is the smallest eigenvalue of its covariance.
An extra term weighted by ``balance_weight`` sums vertex-to-centroid distances
and discourages very large clusters.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import MeshError, TriangleMesh

log = logging.getLogger(__name__)

DEFAULT_BALANCE_WEIGHT = 0.005


@dataclass
class Clustering:
    cluster_of_face: np.ndarray
    cluster_of_vertex: np.ndarray
    k: int
    proxy_points: np.ndarray
    proxy_normals: np.ndarray
    energy_history: list[float] = field(default_factory=list)

    def faces_of(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of_face == c)

    def vertices_of(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of_vertex == c)


class _Moments:
    """Per-face area, first and second moments (integrated over the face)."""

    def __init__(self, mesh: TriangleMesh):
        tri = mesh.vertices[mesh.faces]
        self.area = mesh.face_areas
        s = tri.sum(axis=1)
        self.first = self.area[:, None] * s / 3.0
        outer = np.einsum("fki,fkj->fij", tri, tri) + np.einsum("fi,fj->fij", s, s)
        self.second = self.area[:, None, None] * outer / 12.0

    def cluster(self, labels: np.ndarray, k: int):
        A = np.bincount(labels, weights=self.area, minlength=k)
        m = np.zeros((k, 3))
        M = np.zeros((k, 3, 3))
        np.add.at(m, labels, self.first)
        np.add.at(M, labels, self.second)
        return A, m, M


def _fit(A, m, M):
    """Best-fit planes and their L2 distortion for moment sums."""
    A = np.maximum(A, 1e-300)
    centroid = m / A[:, None]
    cov = M - np.einsum("ki,kj->kij", m, m) / A[:, None, None]
    w, vecs = np.linalg.eigh(cov)
    return centroid, vecs[:, :, 0], np.maximum(w[:, 0], 0.0)


def _face_distortion(mesh: TriangleMesh, faces, points, normals) -> np.ndarray:
    """Integrated squared distance of each face to a plane."""
    tri = mesh.vertices[mesh.faces[faces]]
    d = np.einsum("fkj,fj->fk", tri - points[:, None, :], normals)
    s = (d ** 2).sum(1) + d[:, 0] * d[:, 1] + d[:, 1] * d[:, 2] + d[:, 2] * d[:, 0]
    return mesh.face_areas[faces] * s / 6.0


def vertex_majority(mesh: TriangleMesh, cluster_of_face: np.ndarray, k: int) -> np.ndarray:
    """Vertex label by majority of incident faces; ties go to the lowest id."""
    votes = np.zeros((mesh.n_vertices, k), dtype=np.int64)
    for c in range(3):
        np.add.at(votes, (mesh.faces[:, c], cluster_of_face), 1)
    return np.argmax(votes, axis=1)


def clustering_energy(mesh, labels, k, balance_weight, moments=None):
    moments = moments or _Moments(mesh)
    A, m, M = moments.cluster(labels, k)
    _, _, dist = _fit(A, m, M)
    energy = float(dist.sum())
    if balance_weight:
        vl = vertex_majority(mesh, labels, k)
        counts = np.bincount(vl, minlength=k)
        centers = np.zeros((k, 3))
        np.add.at(centers, vl, mesh.vertices)
        centers /= np.maximum(counts, 1)[:, None]
        energy += balance_weight * float(np.linalg.norm(mesh.vertices - centers[vl], axis=1).sum())
    return energy


def _farthest_point_seeds(centroids: np.ndarray, k: int) -> list[int]:
    seeds = [0]
    d = np.linalg.norm(centroids - centroids[0], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))  # argmax returns the lowest index on ties
        seeds.append(nxt)
        d = np.minimum(d, np.linalg.norm(centroids - centroids[nxt], axis=1))
    return seeds


@njit(cache=True)
def _grow_kernel(indptr, indices, faces, verts, areas, centroids, seeds, points, normals, centers, bw):
    nf = faces.shape[0]
    labels = np.full(nf, -1, dtype=np.int64)
    heap = [(0.0, np.int64(0), np.int64(0))]
    heap.pop()
    for c in range(len(seeds)):
        labels[seeds[c]] = c
    for c in range(len(seeds)):
        _push(heap, seeds[c], c, labels, indptr, indices, faces, verts, areas, centroids, points, normals, centers, bw)
    while len(heap) > 0:
        item = heapq.heappop(heap)
        f = item[1]
        c = item[2]
        if labels[f] >= 0:
            continue
        labels[f] = c
        _push(heap, f, c, labels, indptr, indices, faces, verts, areas, centroids, points, normals, centers, bw)
    return labels


@njit(cache=True)
def _push(heap, f, c, labels, indptr, indices, faces, verts, areas, centroids, points, normals, centers, bw):
    for q in range(indptr[f], indptr[f + 1]):
        g = indices[q]
        if labels[g] >= 0:
            continue
        d0 = 0.0
        d1 = 0.0
        d2 = 0.0
        for a in range(3):
            d0 += (verts[faces[g, 0], a] - points[c, a]) * normals[c, a]
            d1 += (verts[faces[g, 1], a] - points[c, a]) * normals[c, a]
            d2 += (verts[faces[g, 2], a] - points[c, a]) * normals[c, a]
        cost = areas[g] * (d0 * d0 + d1 * d1 + d2 * d2 + d0 * d1 + d1 * d2 + d2 * d0) / 6.0
        if bw != 0.0:
            e = 0.0
            for a in range(3):
                e += (centroids[g, a] - centers[c, a]) ** 2
            cost += bw * np.sqrt(e)
        heapq.heappush(heap, (cost, np.int64(g), np.int64(c)))


class _Grower:
    def __init__(self, mesh: TriangleMesh, balance_weight: float):
        self.mesh = mesh
        self.balance_weight = float(balance_weight)
        adj = mesh.face_adjacency
        self.indptr = adj.indptr.astype(np.int64)
        self.indices = adj.indices.astype(np.int64)
        self.centroids = mesh.face_centroids

    def grow(self, seeds, points, normals, centers) -> np.ndarray:
        """Flood faces from seeds in order of increasing proxy cost."""
        m = self.mesh
        labels = _grow_kernel(
            self.indptr, self.indices, m.faces, m.vertices, m.face_areas, self.centroids,
            np.asarray(seeds, dtype=np.int64), np.ascontiguousarray(points, dtype=np.float64),
            np.ascontiguousarray(normals, dtype=np.float64), np.ascontiguousarray(centers, dtype=np.float64),
            self.balance_weight,
        )
        if np.any(labels < 0):
            # faces in components without a seed: attach to nearest proxy
            rest = np.flatnonzero(labels < 0)
            d = np.linalg.norm(self.centroids[rest, None] - centers[None], axis=2)
            labels[rest] = np.argmin(d, axis=1)
        return labels


def vsa_cluster(
    mesh: TriangleMesh,
    k: int,
    balance_weight: float = DEFAULT_BALANCE_WEIGHT,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> Clustering:
    """Lloyd-style VSA with teleportation; energy never increases."""
    if k < 1:
        raise MeshError("k must be >= 1")
    if k > mesh.n_faces:
        raise MeshError(f"k={k} exceeds face count {mesh.n_faces}")
    moments = _Moments(mesh)
    grower = _Grower(mesh, balance_weight)

    def proxies(labels):
        A, m, M = moments.cluster(labels, k)
        pts, nrm, dist = _fit(A, m, M)
        return pts, nrm, dist

    if k == 1:
        labels = np.zeros(mesh.n_faces, dtype=np.int64)
    else:
        seeds = _farthest_point_seeds(mesh.face_centroids, k)
        fn = mesh.face_normals
        labels = grower.grow(seeds, mesh.face_centroids[seeds], fn[seeds], mesh.face_centroids[seeds])
    energy = clustering_energy(mesh, labels, k, balance_weight, moments)
    history = [energy]

    for it in range(max_iter if k > 1 else 0):
        pts, nrm, dist = proxies(labels)
        candidate = _lloyd_step(mesh, grower, labels, k, pts, nrm)
        cand_energy = clustering_energy(mesh, candidate, k, balance_weight, moments)
        if cand_energy > energy - tol:
            # stalled: try moving the least useful region to the worst one
            candidate = _teleport(mesh, grower, moments, labels, k, pts, nrm, dist, energy, balance_weight)
            if candidate is None:
                break
            cand_energy = clustering_energy(mesh, candidate, k, balance_weight, moments)
            if cand_energy > energy - tol:
                break
        labels, energy = candidate, cand_energy
        history.append(energy)
        log.debug("vsa iter %d energy %.6g", it, energy)

    pts, nrm, _ = proxies(labels)
    return Clustering(
        cluster_of_face=labels,
        cluster_of_vertex=vertex_majority(mesh, labels, k),
        k=k,
        proxy_points=pts,
        proxy_normals=nrm,
        energy_history=history,
    )


def _cluster_centers(mesh, labels, k):
    c = np.zeros((k, 3))
    w = np.bincount(labels, weights=mesh.face_areas, minlength=k)
    np.add.at(c, labels, mesh.face_centroids * mesh.face_areas[:, None])
    return c / np.maximum(w, 1e-300)[:, None]


def _best_seeds(mesh, labels, k, pts, nrm):
    cost = _face_distortion(mesh, np.arange(mesh.n_faces), pts[labels], nrm[labels])
    order = np.lexsort((np.arange(mesh.n_faces), cost, labels))
    first = np.ones(len(order), dtype=bool)
    first[1:] = labels[order][1:] != labels[order][:-1]
    seeds = np.full(k, -1, dtype=np.int64)
    seeds[labels[order][first]] = order[first]
    return seeds


def _lloyd_step(mesh, grower, labels, k, pts, nrm):
    seeds = _best_seeds(mesh, labels, k, pts, nrm)
    centers = _cluster_centers(mesh, labels, k)
    return grower.grow(list(seeds), pts, nrm, centers)


def _teleport(mesh, grower, moments, labels, k, pts, nrm, dist, energy, balance_weight, tries=4):
    """Merge a cheap adjacent pair and re-seed the freed slot in a bad cluster.

    Tries a few (pair, worst-cluster) combinations and returns the first
    partition with lower energy, or None.
    """
    ef = mesh.edge_faces[mesh.interior_edges]
    la, lb = labels[ef[:, 0]], labels[ef[:, 1]]
    cross = la != lb
    if not cross.any():
        return None
    pairs = np.unique(np.sort(np.stack([la[cross], lb[cross]], 1), axis=1), axis=0)
    A, m, M = moments.cluster(labels, k)
    _, _, merged = _fit(A[pairs[:, 0]] + A[pairs[:, 1]], m[pairs[:, 0]] + m[pairs[:, 1]], M[pairs[:, 0]] + M[pairs[:, 1]])
    increase = merged - dist[pairs[:, 0]] - dist[pairs[:, 1]]
    base_seeds = _best_seeds(mesh, labels, k, pts, nrm)
    for pi in np.argsort(increase, kind="stable")[:tries]:
        a, b = (int(x) for x in pairs[pi])
        merged_labels = labels.copy()
        merged_labels[labels == b] = a
        A2, m2, M2 = moments.cluster(merged_labels, k)
        p2, n2, d2 = _fit(A2, m2, M2)
        d2[b] = -1.0
        for worst in np.argsort(-d2, kind="stable")[:tries]:
            worst = int(worst)
            faces = np.flatnonzero(merged_labels == worst)
            if len(faces) < 2:
                continue
            err = _face_distortion(mesh, faces, p2[[worst]].repeat(len(faces), 0), n2[[worst]].repeat(len(faces), 0))
            new_seed = int(faces[np.argmax(err)])
            seeds = base_seeds.copy()
            seeds[b] = new_seed
            if len(set(seeds.tolist())) < k:
                continue
            pp, nn = p2.copy(), n2.copy()
            pp[b] = mesh.face_centroids[new_seed]
            nn[b] = mesh.face_normals[new_seed]
            centers = _cluster_centers(mesh, merged_labels, k)
            centers[b] = mesh.face_centroids[new_seed]
            out = grower.grow(list(seeds), pp, nn, centers)
            if len(np.unique(out)) < k:
                continue
            # relax once so the new region settles before judging it
            A3, m3, M3 = moments.cluster(out, k)
            p3, n3, _ = _fit(A3, m3, M3)
            relaxed = _lloyd_step(mesh, grower, out, k, p3, n3)
            for cand in (relaxed, out):
                if len(np.unique(cand)) == k and clustering_energy(mesh, cand, k, balance_weight, moments) < energy:
                    return cand
    return None
