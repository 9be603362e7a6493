"""Pinhole cameras in the OpenCV convention (x right, y down, z forward)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, fov_deg: float = 40.0, up=(0.0, 1.0, 0.0)) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2.0, height / 2.0, width, height, R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def axis(self) -> np.ndarray:
        return self.rotation[2].copy()

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (x, y) and depth; pixel centres sit at half-integers."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = self.fx * pc[..., 0] / z + self.cx
            y = self.fy * pc[..., 1] / z + self.cy
        return np.stack([x, y], axis=-1), z

    def pixel_rays(self, rows=None, cols=None) -> tuple[np.ndarray, np.ndarray]:
        """World-space origins and unit directions through pixel centres.

        Without arguments, all pixels in row-major order.
        """
        if rows is None:
            rows, cols = np.divmod(np.arange(self.width * self.height), self.width)
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        d = np.stack(
            [(cols + 0.5 - self.cx) / self.fx, (rows + 0.5 - self.cy) / self.fy, np.ones(rows.shape)], axis=-1
        )
        d = d @ self.rotation
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(self.center, d.shape).copy()
        return o, d

    def transformed(self, scale: float, translation) -> "Camera":
        """Camera seeing the scene after x -> scale * x + translation."""
        c = scale * self.center + np.asarray(translation)
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.rotation, -self.rotation @ c)

    def crop(self, x0: int, y0: int, w: int, h: int) -> "Camera":
        return Camera(self.fx, self.fy, self.cx - x0, self.cy - y0, w, h, self.rotation, self.translation)

    def to_dict(self) -> dict:
        P = np.hstack([self.rotation, self.translation[:, None]])
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "world_to_camera": [float(x) for x in P.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        P = np.asarray(d["world_to_camera"], dtype=np.float64).reshape(3, 4)
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"], P[:, :3], P[:, 3])


def gen_camera_ring(
    n: int,
    radius: float,
    elevation: float,
    target=(0.0, 0.0, 0.0),
    resolution=(256, 256),
    fov_deg: float = 40.0,
    azimuth_offset: float = 0.0,
    azimuth_span: float = 360.0,
) -> list[Camera]:
    """Cameras evenly spaced in azimuth, all looking at ``target``.

    Angles are in degrees; azimuth 0 lies on +x, elevation lifts towards +y.
    A span below 360 spreads the cameras over a closed arc instead.
    """
    if n < 1 or not radius > 0:
        raise ValueError("need n >= 1 and radius > 0")
    target = np.asarray(target, dtype=np.float64)
    w, h = (resolution, resolution) if np.isscalar(resolution) else resolution
    if azimuth_span >= 360.0:
        az = azimuth_offset + 360.0 * np.arange(n) / n
    elif n == 1:
        az = np.array([azimuth_offset])
    else:
        az = azimuth_offset - azimuth_span / 2 + azimuth_span * np.arange(n) / (n - 1)
    el = np.radians(elevation)
    cams = []
    for a in np.radians(az):
        eye = target + radius * np.array([np.cos(el) * np.cos(a), np.sin(el), np.cos(el) * np.sin(a)])
        cams.append(Camera.look_at(eye, target, w, h, fov_deg))
    return cams
