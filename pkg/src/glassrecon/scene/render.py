"""Reference renderer: the no-gradient use of the differentiable tracer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from ..envmatt import CELL_BASE, INF, CorrespondenceMap
from ..trace.bvh import BVH
from ..trace.tracer import PATTERN, SCENE, Backdrop, PathBatch, trace
from .camera import Camera
from .scene import Scene

TEXELS_PER_CELL = 32
TEXTURE_SIGMA = 2.5
TEXTURE_RADIUS = 3  # 7x7 kernel


def blur_texture(tex: np.ndarray) -> np.ndarray:
    """7x7 Gaussian (sigma 2.5) with edge replication, per channel."""
    return gaussian_filter(np.asarray(tex, dtype=np.float64), sigma=(TEXTURE_SIGMA, TEXTURE_SIGMA, 0),
                           truncate=TEXTURE_RADIUS / TEXTURE_SIGMA, mode="nearest")


class TextureBank:
    """Caches pattern and environment textures, sharp or pre-blurred."""

    def __init__(self, scene: Scene, blurred: bool = False, texels_per_cell: int = TEXELS_PER_CELL):
        self.scene = scene
        self.blurred = blurred
        self.texels_per_cell = texels_per_cell
        self._patterns: dict[int, torch.Tensor] = {}
        self._env = None

    def pattern(self, i: int) -> torch.Tensor:
        if i not in self._patterns:
            tex = self.scene.patterns[i].texture(self.texels_per_cell)
            if self.blurred:
                tex = blur_texture(tex)
            self._patterns[i] = torch.from_numpy(tex)
        return self._patterns[i]

    def environment(self):
        env = self.scene.environment
        if env is None:
            return None
        if self._env is None:
            tex = env.textures
            if self.blurred:
                tex = np.stack([blur_texture(t) for t in tex])
            self._env = torch.from_numpy(np.ascontiguousarray(tex))
        return self._env

    def backdrop(self, plane: int | None, pattern: int | None) -> Backdrop:
        env = self.scene.environment
        if plane is None:
            return Backdrop(None, None, env, self.environment())
        return Backdrop(self.scene.planes[plane], self.pattern(pattern), env, self.environment())


@dataclass
class RenderResult:
    image: np.ndarray  # (H, W, 3) linear RGB
    mask: np.ndarray  # (H, W) bool, object coverage
    correspondence: CorrespondenceMap
    valid: np.ndarray  # (H, W) bool, M^t
    paths: PathBatch | None = None


def gt_correspondence(paths: PathBatch, pattern, shape) -> CorrespondenceMap:
    """Label each pixel by what its l^t2 actually reached."""
    index = np.zeros(len(paths), dtype=np.uint16)
    uv = paths.uv_t2.detach().numpy()
    on_pattern = paths.valid & (paths.term_t2 == PATTERN)
    sid = np.full(len(paths), -1)
    if pattern is not None and on_pattern.any():
        sid[on_pattern] = pattern.salient_at(uv[on_pattern])
    index[sid >= 0] = CELL_BASE + sid[sid >= 0]
    index[paths.valid & (paths.term_t2 == SCENE)] = INF
    centers = pattern.salient_centers if pattern is not None else np.zeros((5, 2))
    return CorrespondenceMap(index.reshape(shape), centers)


def render_reference(
    scene: Scene,
    camera: Camera,
    plane: int | None = None,
    pattern: int | None = None,
    seed: int = 0,
    noise_sigma: float = 0.0,
    textures: TextureBank | None = None,
    bvh: BVH | None = None,
    keep_paths: bool = False,
) -> RenderResult:
    """One primary ray per pixel centre; optional Gaussian noise per channel."""
    textures = textures or TextureBank(scene)
    backdrop = textures.backdrop(plane, pattern)
    o, d = camera.pixel_rays()
    H, W = camera.height, camera.width
    if scene.mesh is None:
        verts = np.zeros((0, 3))
        faces = np.zeros((0, 3), dtype=np.int64)
    else:
        verts, faces = scene.mesh.vertices, scene.mesh.faces
    with torch.no_grad():
        paths = trace(verts, faces, backdrop, o, d, scene.eta_in, scene.eta_out, bvh=bvh)
    image = paths.color.numpy().reshape(H, W, 3).copy()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        image = np.clip(image + rng.normal(0.0, noise_sigma, image.shape), 0.0, 1.0)
    pat = scene.patterns[pattern] if pattern is not None else None
    return RenderResult(
        image=image,
        mask=paths.hit.reshape(H, W),
        correspondence=gt_correspondence(paths, pat, (H, W)),
        valid=paths.valid.reshape(H, W),
        paths=paths if keep_paths else None,
    )


def render_frame(scene: Scene, index: int, **kw) -> RenderResult:
    fr = scene.frames[index]
    return render_reference(scene, scene.cameras[fr.camera], fr.plane, fr.pattern, **kw)


def render_mask(mesh, camera: Camera, bvh: BVH | None = None) -> np.ndarray:
    """Binary coverage of the mesh from pixel-centre rays."""
    bvh = bvh or BVH(mesh.vertices, mesh.faces)
    o, d = camera.pixel_rays()
    _, f, _, _ = bvh.intersect(o, d)
    return (f >= 0).reshape(camera.height, camera.width)
