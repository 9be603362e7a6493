import numpy as np
import pytest

from glassrecon.mesh.carve import carve_volume, space_carve, taubin_smooth
from glassrecon.mesh.core import MeshError, box_mesh, icosphere
from glassrecon.pipeline import carve_masks
from glassrecon.scene.camera import Camera, gen_camera_ring
from glassrecon.scene.synthetic import bumpy_sphere
from glassrecon.trace.bvh import BVH


def test_cube_from_face_on_views():
    cube = box_mesh(2, 0.5)
    dirs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    # distant narrow cameras approximate orthographic views
    cams = [Camera.look_at(50 * np.array(d, float), (0, 0, 0), 200, 200, 2.0, up=(0, 1, 0) if d[1] == 0 else (1, 0, 0))
            for d in dirs]
    grid = carve_volume(carve_masks(cube, cams), cams, 96, bounds=((-0.6,) * 3, (0.6,) * 3))
    vol = grid.occupancy.sum() * np.prod(grid.voxel_size)
    assert abs(vol - 1.0) < 0.05


def test_sphere_hull_is_superset():
    # masks fine enough that pixel discretisation stays below the hull excess
    s = icosphere(4, 0.5)
    cams = gen_camera_ring(12, 3.0, 20.0, resolution=256)
    hull = space_carve(carve_masks(s, cams), cams, 96, smooth_iterations=0, normalize=False)
    assert hull.is_closed
    assert hull.volume >= s.volume


def test_hull_misses_concavity():
    dented = bumpy_sphere(4, amplitude=-0.1, n_bumps=1)
    cams = gen_camera_ring(12, 3.0, 20.0, resolution=256)
    hull = space_carve(carve_masks(dented, cams), cams, 96, normalize=False)
    # along the dent's axis the hull surface stays well outside the dent floor
    r = np.linalg.norm(dented.vertices, axis=1)
    axis = dented.vertices[np.argmin(r)] / r.min()
    t = BVH(hull.vertices, hull.faces).intersect(np.zeros((1, 3)), axis[None])[0][0]
    assert t - r.min() > 0.02


def test_inconsistent_masks():
    cams = gen_camera_ring(4, 3.0, 0.0, resolution=32)
    with pytest.raises(MeshError):
        carve_volume([np.zeros((32, 32), bool)] * 4, cams, 16, bounds=((-0.5,) * 3, (0.5,) * 3))
    with pytest.raises(ValueError):
        carve_volume([np.ones((32, 32), bool)] * 2, cams[:2], 16)


def test_taubin_keeps_volume_roughly():
    s = icosphere(3, 0.5)
    noisy = s.with_vertices(s.vertices * (1 + 0.02 * np.random.default_rng(0).normal(size=(s.n_vertices, 1))))
    sm = taubin_smooth(noisy, 20)
    assert abs(sm.volume - s.volume) / s.volume < 0.05


def test_hull_contains_ground_truth():
    gt = bumpy_sphere(4)
    cams = gen_camera_ring(12, 3.0, 20.0, resolution=256)
    grid = carve_volume(carve_masks(gt, cams), cams, 96)
    pts, _ = gt.sample_surface(20000, np.random.default_rng(0))
    assert grid.contains(pts, dilate=1).mean() >= 0.99


def test_auto_bounds_follow_the_look_at_point():
    s = icosphere(3, 0.3)
    cams = gen_camera_ring(8, 3.0, 35.0, resolution=96)
    grid = carve_volume(carve_masks(s, cams), cams, 48)
    assert np.all(grid.lo < -0.3) and np.all(grid.hi > 0.3)
