"""Visual-hull space carving with marching cubes and Taubin smoothing."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from skimage.measure import marching_cubes

from .core import MeshError, TriangleMesh
from .normalize import Similarity, normalize_scale

log = logging.getLogger(__name__)


@dataclass
class VoxelGrid:
    resolution: tuple[int, int, int]
    lo: np.ndarray
    hi: np.ndarray
    occupancy: np.ndarray  # bool, shape == resolution, indexed [ix, iy, iz]

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.hi - self.lo <= 0):
            raise ValueError("voxel grid bounds need positive extent")
        if self.occupancy.shape != tuple(self.resolution):
            raise ValueError("occupancy shape does not match resolution")

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.resolution)

    def centers(self) -> np.ndarray:
        axes = [self.lo[a] + (np.arange(self.resolution[a]) + 0.5) * self.voxel_size[a] for a in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)

    def index_of(self, points) -> np.ndarray:
        return np.floor((np.asarray(points) - self.lo) / self.voxel_size).astype(np.int64)

    def contains(self, points, dilate: int = 0) -> np.ndarray:
        occ = self.occupancy
        if dilate:
            from scipy.ndimage import binary_dilation

            occ = binary_dilation(occ, iterations=dilate)
        idx = self.index_of(points)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.resolution)), axis=1)
        out = np.zeros(len(idx), dtype=bool)
        ii = idx[inside]
        out[inside] = occ[ii[:, 0], ii[:, 1], ii[:, 2]]
        return out


def _carve(masks, cameras, grid_lo, grid_hi, resolution) -> VoxelGrid:
    res = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
    occ = np.ones(int(np.prod(res)), dtype=bool)
    grid = VoxelGrid(res, grid_lo, grid_hi, occ.reshape(res))
    pts = grid.centers()
    for mask, cam in zip(masks, cameras):
        live = np.flatnonzero(occ)
        if not len(live):
            break
        uv, z = cam.project(pts[live])
        col = np.floor(uv[:, 0]).astype(np.int64)
        row = np.floor(uv[:, 1]).astype(np.int64)
        # the object is fully visible in every view, so voxels outside any frustum are carved too
        seen = (z > 0) & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        keep = np.zeros(len(live), dtype=bool)
        keep[seen] = mask[row[seen], col[seen]]
        occ[live[~keep]] = False
    return VoxelGrid(res, grid_lo, grid_hi, occ.reshape(res))


def _axes_meeting_point(cameras) -> np.ndarray:
    """Least-squares point closest to all optical axes."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c in cameras:
        P = np.eye(3) - np.outer(c.axis, c.axis)
        A += P
        b += P @ c.center
    return np.linalg.lstsq(A, b, rcond=None)[0]


def carve_volume(masks, cameras, resolution=128, bounds=None) -> VoxelGrid:
    """Occupancy grid of the visual hull.

    Without explicit bounds a coarse 32^3 pass over a box around the point
    the optical axes converge on fixes the fine grid's extent.
    """
    if len(masks) != len(cameras) or len(masks) < 3:
        raise ValueError("space carving needs at least 3 masks, one per camera")
    masks = [np.asarray(m, dtype=bool) for m in masks]
    for m, c in zip(masks, cameras):
        if m.shape != (c.height, c.width):
            raise ValueError("mask resolution does not match its camera")
    if bounds is None:
        mid = _axes_meeting_point(cameras)
        centers = np.array([c.center for c in cameras])
        half = 0.5 * np.min(np.linalg.norm(centers - mid, axis=1))
        if not half > 0:
            raise ValueError("a camera sits at the point its views converge on; pass explicit bounds")
        coarse = _carve(masks, cameras, mid - half, mid + half, 32)
        if not coarse.occupancy.any():
            raise MeshError("masks inconsistent: carved volume is empty")
        idx = np.argwhere(coarse.occupancy)
        vs = coarse.voxel_size
        lo = coarse.lo + (idx.min(axis=0) - 1) * vs
        hi = coarse.lo + (idx.max(axis=0) + 2) * vs
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    grid = _carve(masks, cameras, lo, hi, resolution)
    if not grid.occupancy.any():
        raise MeshError("masks inconsistent: carved volume is empty")
    return grid


def uniform_laplacian(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Row-normalised adjacency minus identity (umbrella operator)."""
    A = mesh.adjacency
    deg = np.asarray(A.sum(axis=1)).ravel()
    W = sparse.diags(1.0 / np.maximum(deg, 1)) @ A
    return (W - sparse.identity(mesh.n_vertices)).tocsr()


def taubin_smooth(mesh: TriangleMesh, iterations: int = 20, lam: float = 0.5, mu: float = -0.53) -> TriangleMesh:
    U = uniform_laplacian(mesh)
    v = mesh.vertices.copy()
    for _ in range(iterations):
        v = v + lam * (U @ v)
        v = v + mu * (U @ v)
    return mesh.with_vertices(v)


def grid_to_mesh(grid: VoxelGrid) -> TriangleMesh:
    vol = np.pad(grid.occupancy.astype(np.float32), 1)
    verts, faces, _, _ = marching_cubes(vol, level=0.5, spacing=tuple(grid.voxel_size), allow_degenerate=False)
    # padding shifts indices by one voxel; voxel centres sit at half-cells
    verts = verts + grid.lo - 0.5 * grid.voxel_size
    mesh = TriangleMesh(verts, faces).compact()
    # keep the largest connected piece
    n, labels = mesh.connected_components()
    if n > 1:
        big = np.argmax(np.bincount(labels))
        keep = labels[mesh.faces[:, 0]] == big
        mesh = TriangleMesh(mesh.vertices, mesh.faces[keep]).compact()
    return mesh.oriented_outward()


def space_carve(
    masks,
    cameras,
    resolution=128,
    bounds=None,
    smooth_iterations: int = 20,
    normalize: bool = True,
    return_transform: bool = False,
):
    """Carve, extract the 0.5 iso-surface, Taubin-smooth and normalise.

    With ``return_transform`` the similarity mapping the input frame to the
    normalised frame is returned alongside the mesh.
    """
    grid = carve_volume(masks, cameras, resolution, bounds)
    mesh = grid_to_mesh(grid)
    log.info("carved %d voxels -> %d faces", int(grid.occupancy.sum()), mesh.n_faces)
    if smooth_iterations:
        mesh = taubin_smooth(mesh, smooth_iterations)
    tf = Similarity.identity()
    if normalize:
        mesh, tf = normalize_scale(mesh)
    return (mesh, tf) if return_transform else mesh
