"""Two-bounce refraction / one-bounce reflection tracer.

Discrete choices (which triangle, which backdrop surface, TIR, texel cell)
are made in float64 numpy/numba and never differentiated. Every continuous
quantity is then recomputed in torch from the chosen face ids, so gradients
flow from colours and texture coordinates back to vertex positions through
the hit points and the interpolated normals.

The reference renderer calls exactly this code without gradients, so a
fixed-geometry forward pass reproduces the reference images bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.ndimage import distance_transform_edt

from .bvh import BVH, T_MIN
from .optics import ETA_IN, ETA_OUT, dot, fresnel_t, reflect_t, refract_t

# termination kinds of l^t2 and l^r1
NOT_TRACED = -1  # primary ray missed the object
MISS = 0
PATTERN = 1
SCENE = 2
TIR = 3
OCCLUDED = 4
TERMINATION_NAMES = {NOT_TRACED: "NotTraced", MISS: "Miss", PATTERN: "PatternPlane", SCENE: "SceneTexture",
                     TIR: "TotalInternalReflection", OCCLUDED: "Occluded"}

GRAZING_COS = 0.2
BOUNDARY_PIXELS = 7
OVEREXPOSED = 220.0 / 255.0

_f64 = torch.float64


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(_f64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def normalize(v: torch.Tensor) -> torch.Tensor:
    return v / torch.linalg.vector_norm(v, dim=-1, keepdim=True)


def vertex_normals_t(V: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    """Area-weighted vertex normals (sum of face cross products, renormalised)."""
    p0, p1, p2 = V[faces[:, 0]], V[faces[:, 1]], V[faces[:, 2]]
    c = torch.linalg.cross(p1 - p0, p2 - p0)
    acc = torch.zeros_like(V)
    for k in range(3):
        acc = acc.index_add(0, faces[:, k], c)
    return normalize(acc)


def bilinear(tex: torch.Tensor, uv: torch.Tensor):
    """Clamp-to-edge bilinear lookup; rows follow v, columns follow u.

    Returns colours and the integer texel cell (x0, y0) used, which is the
    discrete part of the lookup.
    """
    H, W = tex.shape[0], tex.shape[1]
    x = uv[:, 0] * W - 0.5
    y = uv[:, 1] * H - 0.5
    x0 = torch.floor(x.detach())
    y0 = torch.floor(y.detach())
    wx = (x - x0)[:, None]
    wy = (y - y0)[:, None]
    xi = x0.long()
    yi = y0.long()
    xa, xb = xi.clamp(0, W - 1), (xi + 1).clamp(0, W - 1)
    ya, yb = yi.clamp(0, H - 1), (yi + 1).clamp(0, H - 1)
    c = (tex[ya, xa] * (1 - wx) * (1 - wy) + tex[ya, xb] * wx * (1 - wy)
         + tex[yb, xa] * (1 - wx) * wy + tex[yb, xb] * wx * wy)
    return c, torch.stack([xi, yi], dim=1)


class Backdrop:
    """What lies behind and around the glass for one frame.

    ``plane`` is the active pattern plane (or None) with its texture; ``env``
    an inward-facing textured box (or None).
    """

    def __init__(self, plane=None, plane_texture=None, env=None, env_textures=None):
        self.plane = plane
        self.plane_texture = None if plane_texture is None else _t(plane_texture)
        self.env = env
        if env is not None and env_textures is None:
            env_textures = env.textures
        self.env_textures = None if env_textures is None else _t(env_textures)
        if plane is not None:
            self._pn = plane.normal
            self._uu = plane.u_axis / (plane.u_axis @ plane.u_axis)
            self._vv = plane.v_axis / (plane.v_axis @ plane.v_axis)

    # ---- discrete ------------------------------------------------------
    def _plane_hit(self, o: np.ndarray, d: np.ndarray):
        n = len(o)
        if self.plane is None:
            return np.full(n, np.inf)
        denom = d @ self._pn
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((self.plane.origin - o) @ self._pn) / denom
        p = o + s[:, None] * d
        rel = p - self.plane.origin
        u = rel @ self._uu
        v = rel @ self._vv
        ok = (np.abs(denom) > 1e-12) & (s > T_MIN) & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        return np.where(ok, s, np.inf)

    def _env_hit(self, o: np.ndarray, d: np.ndarray):
        n = len(o)
        if self.env is None:
            return np.full(n, np.inf), np.full(n, -1, dtype=np.int64)
        c, h = self.env.center, self.env.half_size
        with np.errstate(divide="ignore", invalid="ignore"):
            side = np.where(d >= 0, 1.0, -1.0)
            ta = (c + side * h - o) / d
        ta = np.where(np.abs(d) > 1e-300, ta, np.inf)
        ta = np.where(ta > T_MIN, ta, np.inf)
        axis = np.argmin(ta, axis=1)
        t = ta[np.arange(n), axis]
        face = 2 * axis + (d[np.arange(n), axis] >= 0)
        face = np.where(np.isfinite(t), face, -1)
        return t, face

    def intersect(self, o: np.ndarray, d: np.ndarray):
        """(kind, env face, distance) with kind in {MISS, PATTERN, SCENE}."""
        tp = self._plane_hit(o, d)
        te, face = self._env_hit(o, d)
        kind = np.full(len(o), MISS, dtype=np.int64)
        kind[np.isfinite(te)] = SCENE
        use_plane = tp < te
        kind[use_plane] = PATTERN
        t = np.where(use_plane, tp, te)
        return kind, face, t

    # ---- differentiable ------------------------------------------------
    def plane_uv(self, o: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
        pn = _t(self._pn)
        org = _t(self.plane.origin)
        s = ((org - o) @ pn) / (d @ pn)
        rel = o + s[:, None] * d - org
        return torch.stack([rel @ _t(self._uu), rel @ _t(self._vv)], dim=1)

    def env_uv(self, o: torch.Tensor, d: torch.Tensor, face: np.ndarray) -> torch.Tensor:
        c = _t(self.env.center)
        h = float(self.env.half_size)
        axis = face // 2
        sign = np.where(face % 2 == 1, 1.0, -1.0)
        rows = np.arange(len(face))
        ax = torch.as_tensor(axis)
        plane_coord = c[ax] + _t(sign) * h
        s = (plane_coord - o[rows, axis]) / d[rows, axis]
        p = o + s[:, None] * d
        others = np.stack([np.where(axis == 0, 1, 0), np.where(axis == 2, 1, 2)], axis=1)
        q = torch.stack([p[rows, others[:, 0]], p[rows, others[:, 1]]], dim=1)
        lo = c[torch.as_tensor(others)] - h
        return (q - lo) / (2 * h)

    def fetch(self, o: torch.Tensor, d: torch.Tensor, kind: np.ndarray, face: np.ndarray):
        """Colours for rays already classified by :meth:`intersect`; zero for MISS."""
        n = len(kind)
        color = torch.zeros((n, 3), dtype=_f64)
        uv = torch.zeros((n, 2), dtype=_f64)
        texel = np.full((n, 3), -1, dtype=np.int64)
        sel = np.flatnonzero(kind == PATTERN)
        if len(sel):
            idx = torch.as_tensor(sel)
            puv = self.plane_uv(o[idx], d[idx])
            c, cell = bilinear(self.plane_texture, puv)
            color = color.index_copy(0, idx, c)
            uv = uv.index_copy(0, idx, puv)
            texel[sel, 0] = 6
            texel[sel, 1:] = cell.numpy()
        sel = np.flatnonzero(kind == SCENE)
        if len(sel):
            idx = torch.as_tensor(sel)
            euv = self.env_uv(o[idx], d[idx], face[sel])
            c = torch.zeros((len(sel), 3), dtype=_f64)
            cells = np.zeros((len(sel), 2), dtype=np.int64)
            for f in np.unique(face[sel]):
                m = np.flatnonzero(face[sel] == f)
                mi = torch.as_tensor(m)
                cf, cell = bilinear(self.env_textures[f], euv[mi])
                c = c.index_copy(0, mi, cf)
                cells[m] = cell.numpy()
            color = color.index_copy(0, idx, c)
            uv = uv.index_copy(0, idx, euv)
            texel[sel, 0] = face[sel]
            texel[sel, 1:] = cells
        return color, uv, texel


def _surface(V: torch.Tensor, N: torch.Tensor, faces: torch.Tensor, fid: np.ndarray, o: torch.Tensor, d: torch.Tensor):
    """Hit point, barycentrics and interpolated unit normal on fixed faces."""
    tri = faces[torch.as_tensor(fid)]
    p0, p1, p2 = V[tri[:, 0]], V[tri[:, 1]], V[tri[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    ng = torch.linalg.cross(e1, e2)
    t = dot(p0 - o, ng) / dot(d, ng)
    x = o + t[:, None] * d
    nn = dot(ng, ng)
    r = x - p0
    b1 = dot(torch.linalg.cross(r, e2), ng) / nn
    b2 = dot(torch.linalg.cross(e1, r), ng) / nn
    b0 = 1.0 - b1 - b2
    n = b0[:, None] * N[tri[:, 0]] + b1[:, None] * N[tri[:, 1]] + b2[:, None] * N[tri[:, 2]]
    return x, torch.stack([b0, b1, b2], 1), normalize(n)


def _scatter(n: int, idx: np.ndarray, values: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
    shape = (n,) + tuple(values.shape[1:])
    out = torch.full(shape, fill, dtype=values.dtype)
    if len(idx) == 0:
        return out
    return out.index_copy(0, torch.as_tensor(idx), values)


@dataclass
class PathBatch:
    """Traced records for a batch of camera rays (rows align with the input rays)."""

    color: torch.Tensor  # (B, 3) pixel colour clamped to [0, 1]
    radiance: torch.Tensor  # (B, 3) before clamping
    hit: np.ndarray  # primary ray hits the object
    valid: np.ndarray  # membership in M^t
    term_t2: np.ndarray
    term_r1: np.ndarray
    l_in: torch.Tensor
    x1: torch.Tensor
    n1: torch.Tensor
    x2: torch.Tensor
    n2: torch.Tensor
    l_t1: torch.Tensor
    l_t2: torch.Tensor
    l_r1: torch.Tensor
    F1: torch.Tensor
    F2: torch.Tensor
    uv_t2: torch.Tensor  # texture coords where l^t2 lands (pattern or scene)
    face1: np.ndarray
    face2: np.ndarray
    decisions: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.hit)

    def decision_signature(self) -> dict:
        return self.decisions

    def record(self, i: int, pixel=None) -> dict:
        def vec(t):
            return [float(x) for x in t[i].detach().numpy()]
        rec = {
            "pixel": None if pixel is None else [int(pixel[0]), int(pixel[1])],
            "hit": bool(self.hit[i]),
            "valid": bool(self.valid[i]),
            "termination_t2": TERMINATION_NAMES[int(self.term_t2[i])],
            "termination_r1": TERMINATION_NAMES[int(self.term_r1[i])],
            "color": vec(self.color),
        }
        if self.hit[i]:
            rec.update(x1=vec(self.x1), n1=vec(self.n1), l_t1=vec(self.l_t1), l_r1=vec(self.l_r1),
                       F1=float(self.F1[i]), face1=int(self.face1[i]))
            if self.face2[i] >= 0:
                rec.update(x2=vec(self.x2), n2=vec(self.n2), face2=int(self.face2[i]))
            if self.term_t2[i] in (PATTERN, SCENE):
                rec.update(l_t2=vec(self.l_t2), F2=float(self.F2[i]), uv_t2=vec(self.uv_t2))
        return rec


def trace(
    vertices,
    faces,
    backdrop: Backdrop,
    origins,
    dirs,
    eta_in: float = ETA_IN,
    eta_out: float = ETA_OUT,
    bvh: BVH | None = None,
) -> PathBatch:
    """Trace camera rays through the glass mesh.

    ``vertices`` may be a torch tensor requiring grad; camera rays are
    treated as constants.
    """
    V = _t(vertices)
    F_np = np.asarray(faces, dtype=np.int64)
    F_t = torch.as_tensor(F_np)
    o_np = np.ascontiguousarray(origins if not isinstance(origins, torch.Tensor) else origins.numpy(), dtype=np.float64)
    d_np = np.ascontiguousarray(dirs if not isinstance(dirs, torch.Tensor) else dirs.numpy(), dtype=np.float64)
    B = len(o_np)
    o = _t(o_np)
    d = _t(d_np)
    if bvh is None:
        bvh = BVH(V.detach().numpy(), F_np)
    N = vertex_normals_t(V, F_t)
    dec: dict[str, np.ndarray] = {}

    _, f1, _, _ = bvh.intersect(o_np, d_np)
    hit = f1 >= 0
    h = np.flatnonzero(hit)
    dec["face1"] = f1
    nh = len(h)
    ht = torch.as_tensor(h)

    term_t2 = np.full(B, NOT_TRACED, dtype=np.int64)
    term_r1 = np.full(B, NOT_TRACED, dtype=np.int64)
    face2 = np.full(B, -1, dtype=np.int64)

    # direct background for rays missing the glass
    miss = np.flatnonzero(~hit)
    kind_bg, face_bg, _ = backdrop.intersect(o_np[miss], d_np[miss])
    mt = torch.as_tensor(miss)
    c_bg, _, tex_bg = backdrop.fetch(o[mt], d[mt], kind_bg, face_bg)
    dec["bg_kind"] = kind_bg
    dec["bg_texel"] = tex_bg

    if nh == 0:
        radiance = _scatter(B, miss, c_bg)
        empty = torch.zeros((B, 3), dtype=_f64)
        return PathBatch(
            color=radiance.clamp(0.0, 1.0), radiance=radiance, hit=hit, valid=np.zeros(B, bool),
            term_t2=term_t2, term_r1=term_r1, l_in=d, x1=empty, n1=empty, x2=empty, n2=empty,
            l_t1=empty, l_t2=empty, l_r1=empty, F1=torch.zeros(B, dtype=_f64), F2=torch.zeros(B, dtype=_f64),
            uv_t2=torch.zeros((B, 2), dtype=_f64), face1=f1, face2=face2, decisions=dec,
        )

    # ---- front interface -------------------------------------------------
    oh, dh = o[ht], d[ht]
    x1, _, n1 = _surface(V, N, F_t, f1[h], oh, dh)
    flip1 = (dot(dh, n1) > 0).detach().numpy()
    dec["flip1"] = flip1
    n1f = torch.where(torch.as_tensor(flip1)[:, None], -n1, n1)
    l_t1, _ = refract_t(dh, n1f, eta_out, eta_in)
    l_r1 = reflect_t(dh, n1f)
    F1 = fresnel_t(dh, l_t1, n1f, eta_out, eta_in)

    # ---- reflection ------------------------------------------------------
    x1_np = x1.detach().numpy()
    lr_np = l_r1.detach().numpy()
    _, fr, _, _ = bvh.intersect(x1_np, lr_np)
    kind_r, face_r, t_r = backdrop.intersect(x1_np, lr_np)
    tr = np.where(fr >= 0, OCCLUDED, kind_r)
    kind_r = np.where(fr >= 0, MISS, kind_r)
    c_r1, _, tex_r = backdrop.fetch(x1, l_r1, kind_r, face_r)
    term_r1[h] = tr
    dec["r1_face"] = fr
    dec["r1_kind"] = tr
    dec["r1_texel"] = tex_r

    # ---- back interface --------------------------------------------------
    lt1_np = l_t1.detach().numpy()
    _, f2, _, _ = bvh.intersect(x1_np, lt1_np)
    dec["face2"] = f2
    back = np.flatnonzero(f2 >= 0)
    bt = torch.as_tensor(back)
    face2[h[back]] = f2[back]
    x2_b, _, n2_b = _surface(V, N, F_t, f2[back], x1[bt], l_t1[bt])
    lt1_b = l_t1[bt]
    flip2 = (dot(lt1_b, n2_b) > 0).detach().numpy()
    dec["flip2"] = flip2
    n2f = torch.where(torch.as_tensor(flip2)[:, None], -n2_b, n2_b)
    l_t2_b, tir_b = refract_t(lt1_b, n2f, eta_in, eta_out)
    tir = tir_b.numpy()
    dec["tir"] = tir
    F2_b = fresnel_t(lt1_b, l_t2_b, n2f, eta_in, eta_out)

    # ---- where l^t2 lands ------------------------------------------------
    x2_np = x2_b.detach().numpy()
    lt2_np = l_t2_b.detach().numpy()
    _, f3, _, _ = bvh.intersect(x2_np, lt2_np)
    kind_t, face_t, t_t = backdrop.intersect(x2_np, lt2_np)
    occluded = f3 >= 0
    kind_t = np.where(occluded | tir, MISS, kind_t)
    c_t2_b, uv_t2_b, tex_t = backdrop.fetch(x2_b, l_t2_b, kind_t, face_t)
    term_b = np.where(tir, TIR, np.where(occluded, OCCLUDED, kind_t))
    dec["t2_face"] = f3
    dec["t2_kind"] = term_b
    dec["t2_texel"] = tex_t

    term_h = np.full(nh, MISS, dtype=np.int64)
    term_h[back] = term_b
    term_t2[h] = term_h
    ok_b = (term_b == PATTERN) | (term_b == SCENE)

    # ---- colour composition ---------------------------------------------
    F2_h = _scatter(nh, back, F2_b)
    c_t2_h = _scatter(nh, back, c_t2_b * torch.as_tensor(ok_b)[:, None])
    ratio_front = (eta_out / eta_in) ** 2
    ratio_back = (eta_in / eta_out) ** 2
    c_t1 = (1.0 - F2_h)[:, None] * ratio_back * c_t2_h
    c_in = F1[:, None] * c_r1 + (1.0 - F1)[:, None] * ratio_front * c_t1
    radiance = _scatter(B, h, c_in)
    if len(miss):
        radiance = radiance.index_copy(0, mt, c_bg)

    valid = np.zeros(B, dtype=bool)
    valid[h[back[ok_b]]] = True
    return PathBatch(
        color=radiance.clamp(0.0, 1.0),
        radiance=radiance,
        hit=hit,
        valid=valid,
        term_t2=term_t2,
        term_r1=term_r1,
        l_in=d,
        x1=_scatter(B, h, x1),
        n1=_scatter(B, h, n1f),
        x2=_scatter(B, h[back], x2_b),
        n2=_scatter(B, h[back], n2f),
        l_t1=_scatter(B, h, l_t1),
        l_t2=_scatter(B, h[back], l_t2_b),
        l_r1=_scatter(B, h, l_r1),
        F1=_scatter(B, h, F1),
        F2=_scatter(B, h[back], F2_b),
        uv_t2=_scatter(B, h[back], uv_t2_b),
        face1=f1,
        face2=face2,
        decisions=dec,
    )


def boundary_distance(mask: np.ndarray) -> np.ndarray:
    """Euclidean pixel distance to the other side of a binary mask's boundary."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        return np.full(mask.shape, np.inf)
    return np.where(mask, distance_transform_edt(mask), distance_transform_edt(~mask))


def prune_rays(paths: PathBatch, image, projected_mask, pixels=None, boundary=None) -> np.ndarray:
    """M^t after removing grazing, near-boundary and over-exposed rays.

    ``image`` and ``projected_mask`` are full images; ``pixels`` gives the
    (rows, cols) of each path (default: every pixel in row-major order).
    ``boundary`` may carry a precomputed ``boundary_distance(projected_mask)``.
    """
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    if pixels is None:
        rows, cols = np.divmod(np.arange(H * W), W)
    else:
        rows, cols = (np.asarray(p) for p in pixels)
    valid = paths.valid.copy()
    with torch.no_grad():
        cosines = [
            dot(paths.l_in, paths.n1), dot(paths.l_t1, paths.n1),
            dot(paths.l_t1, paths.n2), dot(paths.l_t2, paths.n2),
        ]
    grazing = np.zeros(len(valid), dtype=bool)
    for c in cosines:
        grazing |= np.abs(c.numpy()) < GRAZING_COS
    valid &= ~grazing
    dist = boundary_distance(projected_mask) if boundary is None else boundary
    valid &= ~(dist[rows, cols] < BOUNDARY_PIXELS)
    valid &= ~np.all(image[rows, cols] > OVEREXPOSED, axis=-1)
    return valid


def dump_paths(paths: PathBatch, fh, pixels=None) -> int:
    """Write one JSON object per path; returns the number of lines."""
    n = len(paths)
    for i in range(n):
        px = None if pixels is None else (pixels[0][i], pixels[1][i])
        fh.write(json.dumps(paths.record(i, px)) + "\n")
    return n
