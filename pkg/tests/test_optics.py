import numpy as np
import pytest
import torch

from glassrecon.trace.optics import (
    ETA_IN, ETA_OUT, TIR, attenuate_refraction, critical_angle, fresnel, fresnel_t, reflect, refract, refract_t,
)

# closed-form values evaluated with mpmath at 30 digits
F_NORMAL = 0.04252075377825325
TIR_ONSET_DEG = 41.15452770849839
ENTRY_EXIT_RATIO = 2.3090143835585703
F_41_DEG_INSIDE = 0.6442148341753875


def _incident(theta):
    """Unit direction hitting the plane z=0 from above, normal +z."""
    return np.array([np.sin(theta), 0.0, -np.cos(theta)]), np.array([0.0, 0.0, 1.0])


def test_snell_batch(rng):
    n = 100_000
    normal = rng.normal(size=(n, 3))
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d = np.where((np.einsum("ij,ij->i", d, normal) > 0)[:, None], -d, d)
    for eta_a, eta_b in ((ETA_OUT, ETA_IN), (ETA_IN, ETA_OUT)):
        t, tir = refract_t(torch.from_numpy(d), torch.from_numpy(normal), eta_a, eta_b)
        t, tir = t.numpy(), tir.numpy()
        ok = ~tir
        sin_i = np.linalg.norm(np.cross(d, normal), axis=1)
        sin_t = np.linalg.norm(np.cross(t, normal), axis=1)
        assert np.max(np.abs(eta_a * sin_i[ok] - eta_b * sin_t[ok])) < 1e-9
        assert np.allclose(np.linalg.norm(t[ok], axis=1), 1.0, atol=1e-12)
        # the refracted ray continues through the surface
        assert np.all(np.einsum("ij,ij->i", t[ok], normal[ok]) < 0)


def test_fresnel_bounded(rng):
    n = 20_000
    normal = np.tile([0.0, 0.0, 1.0], (n, 1))
    theta = rng.uniform(0, np.pi / 2 - 1e-6, n)
    d = np.stack([np.sin(theta), np.zeros(n), -np.cos(theta)], axis=1)
    for eta_a, eta_b in ((ETA_OUT, ETA_IN), (ETA_IN, ETA_OUT)):
        dt, nt = torch.from_numpy(d), torch.from_numpy(normal)
        t, tir = refract_t(dt, nt, eta_a, eta_b)
        F = fresnel_t(dt, t, nt, eta_a, eta_b).numpy()[~tir.numpy()]
        assert np.all((F >= 0) & (F <= 1))


def test_normal_incidence():
    d, n = _incident(0.0)
    t = refract(d, n, ETA_OUT, ETA_IN)
    assert np.allclose(t, d)
    assert fresnel(d, t, n, ETA_OUT, ETA_IN) == pytest.approx(F_NORMAL, abs=1e-12)
    assert fresnel(d, d, n, ETA_IN, ETA_OUT) == pytest.approx(F_NORMAL, abs=1e-12)


def test_tir_onset():
    assert np.degrees(critical_angle()) == pytest.approx(TIR_ONSET_DEG, abs=1e-9)
    below = np.radians(TIR_ONSET_DEG - 1e-6)
    above = np.radians(TIR_ONSET_DEG + 1e-6)
    d, n = _incident(below)
    assert refract(d, n, ETA_IN, ETA_OUT) is not TIR
    d, n = _incident(above)
    assert refract(d, n, ETA_IN, ETA_OUT) is TIR


def test_fresnel_rises_towards_critical_angle():
    angles = np.radians([0, 10, 20, 30, 35, 40, 41, 41.1, 41.15])
    values = []
    for th in angles:
        d, n = _incident(th)
        t = refract(d, n, ETA_IN, ETA_OUT)
        values.append(fresnel(d, t, n, ETA_IN, ETA_OUT))
    assert np.all(np.diff(values) > 0)
    assert values[6] == pytest.approx(F_41_DEG_INSIDE, abs=1e-9)
    assert values[-1] > 0.9


def test_reflect_mirror():
    d, n = _incident(np.radians(30))
    r = reflect(d, n)
    assert np.allclose(r, [d[0], d[1], -d[2]])


def test_invalid_inputs():
    d, n = _incident(0.3)
    with pytest.raises(ValueError):
        refract(2 * d, n, ETA_OUT, ETA_IN)
    with pytest.raises(ValueError):
        refract(d, -n, ETA_OUT, ETA_IN)
    with pytest.raises(ValueError):
        fresnel([1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0])


def test_attenuation_round_trip_ratio():
    c = np.array([0.2, 0.5, 1.0])
    inside = attenuate_refraction(c, 0.0, ETA_IN, ETA_OUT)
    assert np.allclose(inside / c, ENTRY_EXIT_RATIO)
    back = attenuate_refraction(inside, 0.0, ETA_OUT, ETA_IN)
    assert np.allclose(back, c)
    with pytest.raises(ValueError):
        attenuate_refraction(c, 1.5, ETA_IN, ETA_OUT)


def test_refract_gradients_match_finite_differences(rng):
    for _ in range(10):
        d = rng.normal(size=3)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        d /= np.linalg.norm(d)
        if d @ n > 0:
            d = -d
        if abs(d @ n) < 0.3:
            continue
        dt = torch.tensor(d, requires_grad=True)
        nt = torch.tensor(n, requires_grad=True)

        def f(dd, nn):
            ddn = dd / dd.norm()
            nnn = nn / nn.norm()
            t, _ = refract_t(ddn, nnn, ETA_OUT, ETA_IN)
            return (t * torch.tensor([0.3, -0.7, 0.2], dtype=torch.float64)).sum() + fresnel_t(ddn, t, nnn, ETA_OUT, ETA_IN)

        assert torch.autograd.gradcheck(f, (dt, nt), eps=1e-6, atol=1e-8, rtol=1e-4)
