"""Glue between the modules: synthetic captures and the initial shape."""
from __future__ import annotations

import logging

import numpy as np

from .envmatt import extract_matte
from .mesh.carve import space_carve
from .mesh.core import TriangleMesh
from .mesh.normalize import Similarity, normalize_scale
from .mesh.simplify import polish, simplify_to_edge_length
from .optim.train import CaptureView
from .scene.render import TextureBank, render_frame, render_mask
from .scene.scene import Scene
from .trace.bvh import BVH

log = logging.getLogger(__name__)

TARGET_EDGE = 0.04  # base-mesh edge length in the normalised frame


def render_captures(scene: Scene, noise_sigma: float = 0.0, seed: int = 0, matte: bool = True) -> list[CaptureView]:
    """Render every frame of ``scene`` with its ground-truth mesh.

    Correspondences come from running the matting algorithm on the rendered
    image, as they would for a real capture.
    """
    if scene.mesh is None:
        raise ValueError("scene has no mesh to render")
    textures = TextureBank(scene)
    bvh = BVH(scene.mesh.vertices, scene.mesh.faces)
    views = []
    for i, fr in enumerate(scene.frames):
        res = render_frame(scene, i, seed=seed * 100003 + i, noise_sigma=noise_sigma, textures=textures, bvh=bvh)
        corr = extract_matte(res.image, scene.patterns[fr.pattern], res.mask) if matte else res.correspondence
        views.append(CaptureView(scene.cameras[fr.camera], res.image, fr.plane, fr.pattern, res.mask, corr))
    return views


def carve_masks(mesh: TriangleMesh, cameras) -> list[np.ndarray]:
    bvh = BVH(mesh.vertices, mesh.faces)
    return [render_mask(mesh, c, bvh) for c in cameras]


def initial_shape(masks, cameras, resolution: int = 128, target_edge: float = TARGET_EDGE,
                  smooth_iterations: int = 20, polish_iterations: int = 10) -> tuple[TriangleMesh, Similarity]:
    """Carved, smoothed, simplified and polished hull in the normalised frame.

    Returns the mesh and the similarity taking input coordinates to that frame.
    """
    hull, tf = space_carve(masks, cameras, resolution, smooth_iterations=smooth_iterations, return_transform=True)
    coarse = polish(simplify_to_edge_length(hull, target_edge), hull, polish_iterations)
    mesh, tf2 = normalize_scale(coarse)
    log.info("initial shape: %d vertices, %d faces", mesh.n_vertices, mesh.n_faces)
    return mesh, tf2.compose(tf)
