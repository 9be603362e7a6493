import numpy as np
import pytest

from glassrecon.mesh.core import icosphere
from glassrecon.scene.camera import Camera, gen_camera_ring
from glassrecon.scene.imageio import load_srgb_png, read_pfm, save_srgb_png, write_pfm
from glassrecon.scene.pattern import CELL, GRID, N_SALIENT, SALIENT_PALETTE, gen_pattern, GridPattern
from glassrecon.scene.render import TextureBank, render_frame, render_reference
from glassrecon.scene.scene import PatternPlane, load_scene, save_scene
from glassrecon.scene.synthetic import DeskLayout, bumpy_sphere, desk_scene
from glassrecon.trace.tracer import bilinear


def small_layout(**kw):
    return DeskLayout(**{"resolution": 48, "views_per_placement": 2, "carve_views": 4, **kw})


def test_camera_ring_azimuths():
    cams = gen_camera_ring(4, 2.0, 0.0)
    az = [np.degrees(np.arctan2(c.center[2], c.center[0])) % 360 for c in cams]
    assert np.allclose(az, [0, 90, 180, 270])
    assert len(gen_camera_ring(1, 2.0, 0.0)) == 1
    assert np.allclose(gen_camera_ring(1, 2.0, 0.0)[0].center, [2, 0, 0])


def test_camera_axes_hit_target():
    target = np.array([0.1, -0.2, 0.3])
    for c in gen_camera_ring(7, 3.0, 25.0, target=target):
        v = target - c.center
        off = v - (v @ c.axis) * c.axis
        assert np.linalg.norm(off) < 1e-6


def test_projection_roundtrip(rng):
    c = Camera.look_at([1.0, 0.5, 2.0], [0, 0, 0], 64, 48)
    rows, cols = rng.integers(0, 48, 20), rng.integers(0, 64, 20)
    o, d = c.pixel_rays(rows, cols)
    uv, z = c.project(o + 1.7 * d)
    assert np.allclose(uv, np.stack([cols + 0.5, rows + 0.5], 1))
    assert np.all(z > 0)
    back = Camera.from_dict(c.to_dict())
    assert np.allclose(back.rotation, c.rotation) and back.fx == c.fx


def test_camera_rejects_bad_rotation():
    with pytest.raises(ValueError):
        Camera(100, 100, 32, 32, 64, 64, np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_pattern_contract():
    for seed in range(20):
        p = gen_pattern(seed)
        assert len(p.salient) == N_SALIENT and GRID * GRID == 49
        c = p.salient_centers
        gap = np.abs(c[:, None] - c[None]).max(-1) + np.eye(N_SALIENT) * 9
        assert gap.min() >= CELL - 1e-12
        assert np.all(c - CELL / 2 >= -1e-12) and np.all(c + CELL / 2 <= 1 + 1e-12)
    a, b = gen_pattern(5), gen_pattern(5)
    assert a.to_dict() == b.to_dict()
    assert GridPattern.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_palette_distances():
    d = np.linalg.norm(SALIENT_PALETTE[:, None] - SALIENT_PALETTE[None], axis=-1)
    assert d[np.triu_indices(N_SALIENT, 1)].min() > 0.5


def test_pattern_texture_salient_color():
    p = gen_pattern(3)
    tex = p.texture(16)
    n = tex.shape[0]
    u, v = p.salient_centers[2]
    assert np.allclose(tex[int(v * n), int(u * n)], p.salient[2].color)


def test_plane_facing():
    p = PatternPlane.facing([0, 0, -1.0], [0, 0, 0], 0.5)
    assert np.allclose(p.normal, [0, 0, 1])
    assert np.allclose(p.center, [0, 0, -1])
    assert np.allclose(p.point([0.5, 0.5]), p.center)


def test_empty_scene_shows_backdrop():
    scene = desk_scene(None, layout=small_layout())
    fr = scene.frames[0]
    cam = scene.cameras[fr.camera]
    res = render_reference(scene, cam, fr.plane, fr.pattern)
    assert not res.mask.any()
    bank = TextureBank(scene)
    o, d = cam.pixel_rays()
    bd = bank.backdrop(fr.plane, fr.pattern)
    kind, face, t = bd.intersect(o, d)
    import torch
    col = bd.fetch(torch.as_tensor(o), torch.as_tensor(d), kind, face)[0].numpy().reshape(res.image.shape)
    assert np.allclose(col, res.image)


def test_render_deterministic_and_noise():
    scene = desk_scene(icosphere(3, 0.5), layout=small_layout())
    a = render_frame(scene, 0, seed=4, noise_sigma=0.05)
    b = render_frame(scene, 0, seed=4, noise_sigma=0.05)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    c = render_frame(scene, 0, seed=4)
    assert a.mask.any() and not np.array_equal(a.image, c.image)
    assert a.image.min() >= 0 and a.image.max() <= 1


def test_scene_roundtrip(tmp_path):
    scene = desk_scene(bumpy_sphere(3), seed=2, layout=small_layout())
    save_scene(scene, tmp_path)
    back = load_scene(tmp_path / "scene.json")
    assert len(back.frames) == len(scene.frames) == 6
    assert np.allclose(back.mesh.vertices, scene.mesh.vertices)
    assert np.allclose(back.cameras[3].rotation, scene.cameras[3].rotation)
    assert back.patterns[1].to_dict() == scene.patterns[1].to_dict()
    assert np.array_equal(render_frame(back, 2).image, render_frame(scene, 2).image)


def test_bumpy_sphere_shape():
    m = bumpy_sphere(4)
    r = np.linalg.norm(m.vertices, axis=1)
    assert m.is_closed and m.euler_characteristic == 2
    assert r.max() - r.min() > 0.02


def test_image_io(tmp_path, rng):
    img = rng.uniform(0, 1, (8, 9, 3))
    write_pfm(tmp_path / "a.pfm", img)
    assert np.allclose(read_pfm(tmp_path / "a.pfm"), img, atol=1e-6)
    save_srgb_png(tmp_path / "a.png", img)
    assert np.abs(load_srgb_png(tmp_path / "a.png") - img).max() < 0.02


def test_bilinear_texture_lookup():
    import torch
    tex = torch.arange(12, dtype=torch.float64).reshape(2, 2, 3)
    uv = torch.tensor([[0.25, 0.25], [0.5, 0.5]], dtype=torch.float64)
    out, cell = bilinear(tex, uv)
    assert cell[0].tolist() == [0, 0]
    assert torch.allclose(out[0], tex[0, 0]) and torch.allclose(out[1], tex.mean((0, 1)))
