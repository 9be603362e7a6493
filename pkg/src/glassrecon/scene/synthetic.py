"""Synthetic ground truth and the desk-scale capture layout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh.core import TriangleMesh, icosphere
from .camera import Camera, gen_camera_ring
from .pattern import gen_pattern
from .scene import Frame, PatternPlane, Scene, make_environment


def bump_directions(n: int = 6, seed: int = 3) -> np.ndarray:
    """Octahedron directions under a fixed random rotation (n=6), else random."""
    rng = np.random.default_rng(seed)
    if n == 6:
        dirs = np.vstack([np.eye(3), -np.eye(3)])
    else:
        dirs = rng.normal(size=(n, 3))
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    d = dirs @ R.T
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def bumpy_sphere(
    subdivisions: int = 5,
    radius: float = 0.5,
    amplitude: float = 0.03,
    n_bumps: int = 6,
    width: float = 0.35,
    seed: int = 3,
) -> TriangleMesh:
    """Sphere with smooth Gaussian bumps of the given radial amplitude.

    ``width`` is the angular standard deviation of each bump in radians.
    """
    base = icosphere(subdivisions, 1.0)
    dirs = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    centers = bump_directions(n_bumps, seed)
    ang = np.arccos(np.clip(dirs @ centers.T, -1.0, 1.0))
    r = radius + amplitude * np.exp(-0.5 * (ang / width) ** 2).sum(axis=1)
    return TriangleMesh(dirs * r[:, None], base.faces)


@dataclass
class DeskLayout:
    resolution: int = 256
    placements: int = 3
    views_per_placement: int = 24
    elevations: tuple[float, ...] = (-8.0, 8.0)
    arc_degrees: float = 40.0
    camera_distance: float = 2.2
    fov_deg: float = 40.0
    plane_size: float = 0.6
    plane_distance: float = 1.3  # from the object centre: radius 0.5 + 0.8 gap
    frames_per_pattern: int = 4
    carve_views: int = 12
    carve_elevation: float = 25.0
    env_half_size: float = 4.0


def desk_scene(mesh: TriangleMesh | None, seed: int = 0, layout: DeskLayout | None = None) -> Scene:
    """Captures around three pattern placements plus a ring of mask-only views.

    Placement p puts the pattern plane on the far side of the object at
    azimuth 120p + 180 degrees; its cameras sweep an arc centred on azimuth
    120p at each elevation.
    """
    L = layout or DeskLayout()
    target = np.zeros(3)
    planes, cameras, frames = [], [], []
    per_el = L.views_per_placement // len(L.elevations)
    for p in range(L.placements):
        az = 360.0 * p / L.placements
        a = np.radians(az)
        center = -L.plane_distance * np.array([np.cos(a), 0.0, np.sin(a)])
        planes.append(PatternPlane.facing(center, target, L.plane_size))
        for el in L.elevations:
            cams = gen_camera_ring(per_el, L.camera_distance, el, target, L.resolution, L.fov_deg,
                                   azimuth_offset=az, azimuth_span=L.arc_degrees)
            for c in cams:
                cameras.append(c)
    n_frames = len(cameras)
    per_plane = n_frames // L.placements
    n_patterns = -(-n_frames // L.frames_per_pattern)
    patterns = [gen_pattern(seed * 1009 + i) for i in range(n_patterns)]
    for i in range(n_frames):
        frames.append(Frame(camera=i, plane=min(i // per_plane, L.placements - 1), pattern=i // L.frames_per_pattern))
    half = L.carve_views // 2
    carve = gen_camera_ring(half, L.camera_distance, L.carve_elevation, target, L.resolution, L.fov_deg)
    carve += gen_camera_ring(L.carve_views - half, L.camera_distance, -L.carve_elevation, target, L.resolution,
                             L.fov_deg, azimuth_offset=180.0 / max(L.carve_views - half, 1))
    return Scene(
        mesh=mesh,
        cameras=cameras,
        planes=planes,
        patterns=patterns,
        frames=frames,
        environment=make_environment(seed, L.env_half_size),
        carve_cameras=carve,
        seed=seed,
    )


def slab_mesh(thickness: float, size: float = 2.0, center=(0.0, 0.0, 0.0), n: int = 8) -> TriangleMesh:
    """Closed box that is thin along z: a parallel-faced glass slab.

    Faces are tessellated ``n`` x ``n`` so interpolated normals are exact away
    from the rim.
    """
    from ..mesh.core import box_mesh

    b = box_mesh(n, 0.5)
    v = b.vertices * np.array([size, size, thickness]) + np.asarray(center)
    return TriangleMesh(v, b.faces)


def single_view_camera(eye, target, resolution: int = 64, fov_deg: float = 40.0) -> Camera:
    return Camera.look_at(eye, target, resolution, resolution, fov_deg)
