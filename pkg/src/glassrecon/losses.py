"""Optimisation objectives.

Image terms (rgb, corr, ncorr) work on traced paths of one patch, the
silhouette term on the occluding contour of the displaced mesh, and the
regularisers (laplacian, normal consistency, chamfer) on the mesh itself.
Everything is torch float64 and differentiable w.r.t. vertex positions.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as tnf
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .mesh.core import TriangleMesh
from .scene.camera import Camera
from .scene.pattern import CELL, GRID_CENTER
from .trace.bvh import T_MIN

PYRAMID = ((7, 2.5), (11, 7.5), (13, 7.5))
NC_CLAMP = 1e-6
MISS_CAP = math.sqrt(2.0)

_f64 = torch.float64


class LossNaNError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"loss component '{name}' is NaN")
        self.component = name


@dataclass
class RegWeights:
    ls: float = 0.2
    nc: float = 1.0
    pc: float = 100.0


@dataclass
class LossWeights:
    rgb: float = 0.001
    corr: float = 0.1
    ncorr: float = 0.03
    sil: float = 50.0
    reg: float = 1.0
    nested: RegWeights = field(default_factory=RegWeights)

    def __post_init__(self):
        if isinstance(self.nested, dict):
            self.nested = RegWeights(**self.nested)
        vals = [self.rgb, self.corr, self.ncorr, self.sil, self.reg, self.nested.ls, self.nested.nc, self.nested.pc]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def _zero_like(*tensors) -> torch.Tensor:
    """A zero that stays attached to the graph of the inputs."""
    out = torch.zeros((), dtype=_f64)
    for t in tensors:
        if isinstance(t, torch.Tensor) and t.requires_grad:
            out = out + 0.0 * t.sum()
    return out


# ---- rgb -----------------------------------------------------------------

def gaussian_kernel_1d(size: int, sigma: float) -> torch.Tensor:
    x = torch.arange(size, dtype=_f64) - (size - 1) / 2
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter(img: torch.Tensor, size: int, sigma: float) -> torch.Tensor:
    """Separable unit-gain Gaussian on an (H, W, C) image, edges replicated."""
    k = gaussian_kernel_1d(size, sigma)
    r = size // 2
    x = img.permute(2, 0, 1)[:, None]  # (C, 1, H, W)
    x = tnf.pad(x, (r, r, r, r), mode="replicate")
    x = tnf.conv2d(x, k.view(1, 1, 1, size))
    x = tnf.conv2d(x, k.view(1, 1, size, 1))
    return x[:, 0].permute(1, 2, 0)


def pyramid_filter(img: torch.Tensor) -> torch.Tensor:
    """Sum of the image filtered by each pyramid kernel."""
    out = None
    for size, sigma in PYRAMID:
        f = gaussian_filter(img, size, sigma)
        out = f if out is None else out + f
    return out


def rgb_loss(rendered: torch.Tensor, captured, valid) -> torch.Tensor:
    """Mean over valid pixels of the L1 colour difference of pyramid-filtered patches."""
    captured = torch.as_tensor(np.asarray(captured), dtype=_f64)
    valid = torch.as_tensor(np.asarray(valid, dtype=bool))
    if rendered.shape != captured.shape:
        raise ValueError(f"patch shapes differ: {tuple(rendered.shape)} vs {tuple(captured.shape)}")
    n = int(valid.sum())
    if n == 0:
        warnings.warn("rgb loss: no valid pixels in patch", RuntimeWarning, stacklevel=2)
        return _zero_like(rendered)
    diff = (pyramid_filter(rendered) - pyramid_filter(captured)).abs().sum(dim=-1)
    return diff[valid].sum() / n


# ---- correspondence ----------------------------------------------------

@dataclass
class TexturePoint:
    """Where a ray meets the infinite pattern plane, in texture units."""

    uv: torch.Tensor  # (B, 2); rows with hit=False hold the foot of the ray origin
    hit: np.ndarray  # ray meets the plane in front of its origin

    @property
    def inside(self) -> np.ndarray:
        uv = self.uv.detach().numpy()
        return self.hit & np.all((uv >= 0) & (uv <= 1), axis=1)


def project_to_texture(origins: torch.Tensor, dirs: torch.Tensor, plane) -> TexturePoint:
    """Intersect rays with the plane and express the point in (u, v) coordinates.

    Rays that are parallel or point away from the plane are misses; for them
    ``uv`` is the orthogonal foot of the ray origin, the point of the plane
    closest to the ray.
    """
    o = torch.as_tensor(origins, dtype=_f64)
    d = torch.as_tensor(dirs, dtype=_f64)
    n = torch.as_tensor(plane.normal, dtype=_f64)
    org = torch.as_tensor(plane.origin, dtype=_f64)
    uu = torch.as_tensor(plane.u_axis / (plane.u_axis @ plane.u_axis), dtype=_f64)
    vv = torch.as_tensor(plane.v_axis / (plane.v_axis @ plane.v_axis), dtype=_f64)
    gap = (org - o) @ n
    denom = d @ n
    ok_denom = denom.detach().abs() > 1e-12
    s = gap / torch.where(ok_denom, denom, torch.ones_like(denom))
    hit = (ok_denom & (s.detach() > T_MIN)).numpy()
    ht = torch.as_tensor(hit)
    p = torch.where(ht[:, None], o + s[:, None] * d, o + gap[:, None] * n)
    rel = p - org
    return TexturePoint(torch.stack([rel @ uu, rel @ vv], dim=1), hit)


def _safe_norm(x: torch.Tensor, keep: torch.Tensor) -> torch.Tensor:
    sq = (x * x).sum(dim=-1)
    return torch.sqrt(torch.where(keep, sq, torch.ones_like(sq)))


def clipped_corr_distance(q1, q2, cell: float = CELL) -> torch.Tensor:
    """L2 distance, or zero when the L-infinity gap is within half a cell."""
    q1 = torch.as_tensor(q1, dtype=_f64)
    q2 = torch.as_tensor(q2, dtype=_f64)
    diff = q1 - q2
    far = diff.abs().amax(dim=-1) > cell / 2
    return torch.where(far, _safe_norm(diff, far), torch.zeros_like(far, dtype=_f64))


def no_corr_distance(q, center=GRID_CENTER) -> torch.Tensor:
    """L2 distance to the grid centre while inside the grid, zero outside."""
    q = torch.as_tensor(q, dtype=_f64)
    diff = q - torch.as_tensor(center, dtype=_f64)
    inside = diff.abs().amax(dim=-1) < 0.5
    nz = inside & (diff.detach().abs().amax(dim=-1) > 0)
    return torch.where(nz, _safe_norm(diff, nz), torch.zeros_like(inside, dtype=_f64))


def corr_loss(point: TexturePoint, targets, cell_mask, valid, cell: float = CELL) -> torch.Tensor:
    """Clipped distance to the corresponding cell centre, summed over valid
    Cell pixels and divided by the number of valid pixels.

    Points off the pattern are clamped to its boundary first, so a path that
    misses contributes at most the diagonal length.
    """
    valid = np.asarray(valid, dtype=bool)
    sel = np.flatnonzero(valid & np.asarray(cell_mask, dtype=bool))
    n = int(valid.sum())
    if n == 0 or len(sel) == 0:
        return _zero_like(point.uv)
    idx = torch.as_tensor(sel)
    uv = point.uv[idx].clamp(0.0, 1.0)
    tgt = torch.as_tensor(np.asarray(targets)[sel], dtype=_f64)
    d = clipped_corr_distance(uv, tgt, cell).clamp(max=MISS_CAP)
    return d.sum() / n


def ncorr_loss(point: TexturePoint, inf_mask, valid) -> torch.Tensor:
    """Minus the grid-centre distance of valid Inf pixels that still land on the grid."""
    valid = np.asarray(valid, dtype=bool)
    sel = np.flatnonzero(valid & np.asarray(inf_mask, dtype=bool) & point.hit)
    n = int(valid.sum())
    if n == 0 or len(sel) == 0:
        return _zero_like(point.uv)
    d = no_corr_distance(point.uv[torch.as_tensor(sel)])
    return -d.sum() / n


# ---- silhouette ----------------------------------------------------------

def signed_distance(mask) -> np.ndarray:
    """Pixel signed distance to a binary mask boundary, negative inside."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.full(mask.shape, float(np.hypot(*mask.shape)))
    if mask.all():
        return -np.full(mask.shape, float(np.hypot(*mask.shape)))
    return distance_transform_edt(~mask) - distance_transform_edt(mask)


def contour_vertices(mesh: TriangleMesh, camera_center) -> np.ndarray:
    """Vertices on edges shared by a front-facing and a back-facing face."""
    facing = np.einsum("ij,ij->i", mesh.face_cross, mesh.face_centroids - np.asarray(camera_center)) < 0
    ef = mesh.edge_faces
    inner = ef[:, 1] >= 0
    e = mesh.edges[inner]
    ef = ef[inner]
    contour = facing[ef[:, 0]] != facing[ef[:, 1]]
    return np.unique(e[contour])


def sample_bilinear(img: torch.Tensor, xy: torch.Tensor) -> torch.Tensor:
    """Sample an (H, W) image at continuous pixel coordinates (x right, y down).

    Pixel (r, c) has its centre at (c + 0.5, r + 0.5); lookups clamp to the edge.
    """
    H, W = img.shape
    x = (xy[:, 0] - 0.5).clamp(0.0, W - 1.0)
    y = (xy[:, 1] - 0.5).clamp(0.0, H - 1.0)
    x0 = torch.floor(x.detach()).long().clamp(max=W - 2)
    y0 = torch.floor(y.detach()).long().clamp(max=H - 2)
    fx = x - x0
    fy = y - y0
    a = img[y0, x0]
    b = img[y0, x0 + 1]
    c = img[y0 + 1, x0]
    d = img[y0 + 1, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def project_t(camera: Camera, points: torch.Tensor):
    R = torch.as_tensor(camera.rotation, dtype=_f64)
    t = torch.as_tensor(camera.translation, dtype=_f64)
    pc = points @ R.T + t
    z = pc[:, 2]
    x = camera.fx * pc[:, 0] / z + camera.cx
    y = camera.fy * pc[:, 1] / z + camera.cy
    return torch.stack([x, y], dim=1), z


def silhouette_loss(vertices: torch.Tensor, mesh: TriangleMesh, camera: Camera, mask,
                    sdt: np.ndarray | None = None) -> torch.Tensor:
    """Mean squared signed distance (in image widths) of contour vertices.

    ``mesh`` supplies the connectivity; front/back classification uses the
    current vertex positions without differentiating through it.
    """
    current = mesh.with_vertices(vertices.detach().numpy())
    ids = contour_vertices(current, camera.center)
    if sdt is None:
        sdt = signed_distance(mask)
    if not np.asarray(mask, dtype=bool).any():
        warnings.warn("silhouette loss: empty mask", RuntimeWarning, stacklevel=2)
    if len(ids) == 0:
        warnings.warn("silhouette loss: no contour vertices", RuntimeWarning, stacklevel=2)
        return _zero_like(vertices)
    xy, z = project_t(camera, vertices[torch.as_tensor(ids)])
    zn = z.detach().numpy()
    xyn = xy.detach().numpy()
    vis = (zn > 0) & (xyn[:, 0] >= 0) & (xyn[:, 0] <= camera.width) & (xyn[:, 1] >= 0) & (xyn[:, 1] <= camera.height)
    if not vis.any():
        warnings.warn("silhouette loss: no contour vertices in view", RuntimeWarning, stacklevel=2)
        return _zero_like(vertices)
    sel = torch.as_tensor(np.flatnonzero(vis))
    field_ = torch.as_tensor(sdt / camera.width, dtype=_f64)
    s = sample_bilinear(field_, xy[sel])
    return (s * s).mean()


# ---- regularisers ------------------------------------------------------------

class MeshTopology:
    """Index tensors shared by the mesh regularisers."""

    def __init__(self, mesh: TriangleMesh):
        self.faces = torch.as_tensor(mesh.faces, dtype=torch.int64)
        e = mesh.edges
        both = np.concatenate([e, e[:, ::-1]])
        self.src = torch.as_tensor(both[:, 0])
        self.dst = torch.as_tensor(both[:, 1])
        deg = np.bincount(both[:, 0], minlength=mesh.n_vertices).astype(np.float64)
        self.inv_degree = torch.as_tensor(1.0 / np.maximum(deg, 1.0))
        inner = mesh.edge_faces[mesh.edge_faces[:, 1] >= 0]
        self.f0 = torch.as_tensor(inner[:, 0])
        self.f1 = torch.as_tensor(inner[:, 1])
        self.n_vertices = mesh.n_vertices


def umbrella(vertices: torch.Tensor, topo: MeshTopology) -> torch.Tensor:
    """(1/|N(i)|) sum_j (v_j - v_i) for every vertex."""
    acc = torch.zeros_like(vertices).index_add(0, topo.src, vertices[topo.dst] - vertices[topo.src])
    return acc * topo.inv_degree[:, None]


def laplacian_loss(vertices: torch.Tensor, topo: MeshTopology) -> torch.Tensor:
    u = umbrella(vertices, topo)
    return (u * u).sum(dim=1).mean()


def face_normals_t(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    n = torch.linalg.cross(b - a, c - a)
    return n / torch.linalg.vector_norm(n, dim=1, keepdim=True)


def normal_consistency_loss(vertices: torch.Tensor, topo: MeshTopology) -> torch.Tensor:
    """Sum over interior edges of 1 - ln(1 + n1 . n2)."""
    n = face_normals_t(vertices, topo.faces)
    cos = (n[topo.f0] * n[topo.f1]).sum(dim=1).clamp(-1.0 + NC_CLAMP, 1.0)
    return (1.0 - torch.log1p(cos)).sum()


def chamfer_loss(s1, s2) -> torch.Tensor:
    """Symmetric mean of squared nearest-neighbour distances (kd-tree search)."""
    a = torch.as_tensor(s1, dtype=_f64)
    b = torch.as_tensor(s2, dtype=_f64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two nonempty point sets")
    an = a.detach().numpy()
    bn = b.detach().numpy()
    _, ab = cKDTree(bn).query(an)
    _, ba = cKDTree(an).query(bn)
    d_ab = ((a - b[torch.as_tensor(ab)]) ** 2).sum(dim=1)
    d_ba = ((b - a[torch.as_tensor(ba)]) ** 2).sum(dim=1)
    return d_ab.mean() + d_ba.mean()


def surface_samples(vertices: torch.Tensor, faces: np.ndarray, face_ids: np.ndarray, bary: np.ndarray) -> torch.Tensor:
    """Points at fixed barycentric coordinates, differentiable in the vertices."""
    f = torch.as_tensor(np.asarray(faces)[face_ids])
    w = torch.as_tensor(bary, dtype=_f64)
    return (vertices[f] * w[:, :, None]).sum(dim=1)


# ---- composition -----------------------------------------------------------

COMPONENTS = ("rgb", "corr", "ncorr", "sil", "ls", "nc", "pc")


def weighted_terms(terms: dict, weights: LossWeights) -> dict:
    w = weights
    scale = {
        "rgb": w.rgb, "corr": w.corr, "ncorr": w.ncorr, "sil": w.sil,
        "ls": w.reg * w.nested.ls, "nc": w.reg * w.nested.nc, "pc": w.reg * w.nested.pc,
    }
    return {k: scale[k] * terms[k] for k in COMPONENTS if k in terms}


def total_loss(terms: dict, weights: LossWeights | None = None) -> torch.Tensor:
    """Weighted sum of the components; a NaN component raises naming it."""
    weights = weights or LossWeights()
    unknown = set(terms) - set(COMPONENTS)
    if unknown:
        raise KeyError(f"unknown loss components: {sorted(unknown)}")
    for name in COMPONENTS:
        if name in terms and bool(torch.isnan(torch.as_tensor(terms[name])).any()):
            raise LossNaNError(name)
    total = torch.zeros((), dtype=_f64)
    for v in weighted_terms(terms, weights).values():
        total = total + v
    return total
