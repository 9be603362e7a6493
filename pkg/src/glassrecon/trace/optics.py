"""Snell refraction, mirror reflection and dielectric Fresnel terms.

The ``*_t`` functions are batched torch versions used by the tracer (they
carry gradients); the plain-named functions are validated single-vector
wrappers returning numpy arrays.
"""
from __future__ import annotations

import numpy as np
import torch

ETA_OUT = 1.0003  # air
ETA_IN = 1.52  # glass

UNIT_TOL = 1e-9


class _TIR:
    """Marker returned by :func:`refract` under total internal reflection."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TIR"

    def __bool__(self):
        return False


TIR = _TIR()


def dot(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a * b).sum(-1)


def refract_t(d: torch.Tensor, n: torch.Tensor, eta_from: float, eta_to: float):
    """Refracted directions and a TIR mask; ``n`` must face the incoming ray.

    Under TIR the returned direction is a finite placeholder (the radicand is
    replaced by 1) so that masked-out rows never inject NaN into gradients.
    """
    cos_i = -dot(d, n)
    eta = eta_from / eta_to
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    tir = k < 0
    root = torch.sqrt(torch.where(tir, torch.ones_like(k), k))
    t = eta * d + (eta * cos_i - root)[..., None] * n
    return t, tir


def reflect_t(d: torch.Tensor, n: torch.Tensor) -> torch.Tensor:
    return d - 2.0 * dot(d, n)[..., None] * n


def fresnel_t(r_a: torch.Tensor, r_b: torch.Tensor, n: torch.Tensor, eta_a: float, eta_b: float) -> torch.Tensor:
    """Unpolarised Fresnel reflectance between ray r_a (in medium eta_a) and r_b (in eta_b).

    Absolute cosines make the value independent of which way ``n`` points.
    """
    a = dot(r_a, n).abs()
    b = dot(r_b, n).abs()
    rs = (eta_a * a - eta_b * b) / (eta_a * a + eta_b * b)
    rp = (eta_b * a - eta_a * b) / (eta_b * a + eta_a * b)
    return 0.5 * (rs * rs + rp * rp)


def _unit(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    if abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} is not unit length")
    return x


def refract(direction, normal, eta_from: float, eta_to: float):
    """Refracted unit direction, or ``TIR``. ``normal`` must oppose ``direction``."""
    d = _unit(direction, "direction")
    n = _unit(normal, "normal")
    if d @ n >= 0:
        raise ValueError("normal must face the incoming ray (dir . normal < 0)")
    t, tir = refract_t(torch.from_numpy(d), torch.from_numpy(n), eta_from, eta_to)
    if bool(tir):
        return TIR
    return t.numpy()


def reflect(direction, normal) -> np.ndarray:
    d = _unit(direction, "direction")
    n = _unit(normal, "normal")
    return reflect_t(torch.from_numpy(d), torch.from_numpy(n)).numpy()


def fresnel(r_t1, r_t2, n2, eta_i: float = ETA_IN, eta_o: float = ETA_OUT) -> float:
    """Fresnel term between r_t1 (travelling in eta_i) and r_t2 (in eta_o) at normal n2."""
    a = _unit(r_t1, "r_t1")
    b = _unit(r_t2, "r_t2")
    n = _unit(n2, "n2")
    if a @ n == 0 or b @ n == 0:
        raise ValueError("grazing configuration: zero dot product with the normal")
    F = fresnel_t(torch.from_numpy(a), torch.from_numpy(b), torch.from_numpy(n), eta_i, eta_o)
    return float(F)


def attenuate_refraction(c_t2, F, eta_from: float, eta_to: float):
    """Colour carried back across one interface; no clamping here."""
    ratio = (eta_from / eta_to) ** 2
    if isinstance(c_t2, torch.Tensor):
        F = torch.as_tensor(F, dtype=c_t2.dtype)
        if F.ndim:
            F = F[..., None]
        return (1.0 - F) * ratio * c_t2
    F = np.asarray(F, dtype=np.float64)
    if np.any(F < 0) or np.any(F > 1):
        raise ValueError("Fresnel term outside [0, 1]")
    if F.ndim:
        F = F[..., None]
    return (1.0 - F) * ratio * np.asarray(c_t2, dtype=np.float64)


def critical_angle(eta_in: float = ETA_IN, eta_out: float = ETA_OUT) -> float:
    """Critical incidence angle (radians) for light leaving the denser medium."""
    return float(np.arcsin(eta_out / eta_in))
