"""Scene assembly: glass object, pattern planes, environment box, frames."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from ..mesh.core import TriangleMesh
from ..mesh.io import load_mesh, save_mesh
from ..mesh.normalize import Similarity
from ..trace.optics import ETA_IN, ETA_OUT
from .camera import Camera
from .pattern import SALIENT_PALETTE, GridPattern


@dataclass(frozen=True, eq=False)
class PatternPlane:
    """Rectangle origin + s*u_axis + t*v_axis for (s, t) in [0, 1]^2."""

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray

    def __post_init__(self):
        o, u, v = (np.asarray(x, dtype=np.float64).reshape(3) for x in (self.origin, self.u_axis, self.v_axis))
        if np.linalg.norm(u) == 0 or np.linalg.norm(v) == 0:
            raise ValueError("plane axes must be nonzero")
        if abs(u @ v) > 1e-6 * np.linalg.norm(u) * np.linalg.norm(v):
            raise ValueError("plane axes must be orthogonal")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "v_axis", v)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u_axis, self.v_axis)
        return n / np.linalg.norm(n)

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * (self.u_axis + self.v_axis)

    def point(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return self.origin + uv[..., :1] * self.u_axis + uv[..., 1:2] * self.v_axis

    @classmethod
    def facing(cls, center, towards, size: float = 0.6) -> "PatternPlane":
        """Square plane centred at ``center`` whose normal points at ``towards``."""
        center = np.asarray(center, dtype=np.float64)
        n = np.asarray(towards, dtype=np.float64) - center
        n /= np.linalg.norm(n)
        up = np.array([0.0, 1.0, 0.0])
        u = np.cross(up, n)
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(np.array([1.0, 0.0, 0.0]), n)
        u = u / np.linalg.norm(u) * size
        v = np.cross(n, u)
        v = v / np.linalg.norm(v) * size
        # ensure cross(u, v) points towards the object
        if np.cross(u, v) @ n < 0:
            v = -v
        return cls(center - 0.5 * (u + v), u, v)

    def transformed(self, tf: Similarity) -> "PatternPlane":
        return PatternPlane(tf.apply(self.origin), tf.scale * self.u_axis, tf.scale * self.v_axis)

    def to_dict(self) -> dict:
        return {k: [float(x) for x in getattr(self, k)] for k in ("origin", "u_axis", "v_axis")}

    @classmethod
    def from_dict(cls, d: dict) -> "PatternPlane":
        return cls(d["origin"], d["u_axis"], d["v_axis"])


ENV_LOW, ENV_HIGH = 0.35, 0.62


def gen_environment_textures(seed: int, resolution: int = 64) -> np.ndarray:
    """Six muted, smoothly varying textures, one per box face.

    Values stay within [0.35, 0.62] so that no environment colour is close to
    the black/white checker or the saturated salient palette.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((6, resolution, resolution, 3))
    base = resolution // 8
    for f in range(6):
        noise = rng.random((base, base, 3))
        field_ = zoom(noise, (resolution / base, resolution / base, 1), order=3, mode="grid-wrap", grid_mode=True)
        field_ = gaussian_filter(field_, sigma=(1.0, 1.0, 0))
        # low saturation: mix each channel towards the per-texel mean
        mean = field_.mean(axis=2, keepdims=True)
        field_ = 0.6 * mean + 0.4 * field_
        lo, hi = field_.min(), field_.max()
        field_ = (field_ - lo) / max(hi - lo, 1e-12)
        out[f] = ENV_LOW + (ENV_HIGH - ENV_LOW) * field_
    return out


@dataclass(frozen=True, eq=False)
class EnvironmentBox:
    """Axis-aligned inward-facing textured box surrounding the scene.

    Face ``2 * axis + (0 for the -side, 1 for the +side)``; on each face the
    texture is parameterised by the two remaining axes in increasing order.
    """

    center: np.ndarray
    half_size: float
    textures: np.ndarray  # (6, R, R, 3)
    seed: int = 0

    def transformed(self, tf: Similarity) -> "EnvironmentBox":
        return EnvironmentBox(tf.apply(self.center), tf.scale * self.half_size, self.textures, self.seed)


@dataclass(frozen=True)
class Frame:
    camera: int
    plane: int
    pattern: int


@dataclass(eq=False)
class Scene:
    mesh: TriangleMesh | None
    cameras: list[Camera]
    planes: list[PatternPlane]
    patterns: list[GridPattern]
    frames: list[Frame]
    environment: EnvironmentBox | None = None
    eta_in: float = ETA_IN
    eta_out: float = ETA_OUT
    carve_cameras: list[Camera] = field(default_factory=list)
    env_seed: int = 0
    env_resolution: int = 64
    seed: int = 0

    def __post_init__(self):
        if not (self.eta_in > 0 and self.eta_out > 0):
            raise ValueError("indices of refraction must be positive")
        for fr in self.frames:
            if not (0 <= fr.plane < len(self.planes)):
                raise ValueError(f"frame {fr} has no active pattern plane")

    def transformed(self, tf: Similarity) -> "Scene":
        """The same scene expressed in the frame x -> tf(x)."""
        return replace(
            self,
            mesh=None if self.mesh is None else self.mesh.with_vertices(tf.apply(self.mesh.vertices)),
            cameras=[c.transformed(tf.scale, tf.translation) for c in self.cameras],
            carve_cameras=[c.transformed(tf.scale, tf.translation) for c in self.carve_cameras],
            planes=[p.transformed(tf) for p in self.planes],
            environment=None if self.environment is None else self.environment.transformed(tf),
        )

    def with_mesh(self, mesh: TriangleMesh | None) -> "Scene":
        return replace(self, mesh=mesh)

    def to_dict(self, mesh_path: str | None = None) -> dict:
        env = self.environment
        return {
            "eta_in": self.eta_in,
            "eta_out": self.eta_out,
            "seed": self.seed,
            "mesh": mesh_path,
            "cameras": [c.to_dict() for c in self.cameras],
            "carve_cameras": [c.to_dict() for c in self.carve_cameras],
            "planes": [p.to_dict() for p in self.planes],
            "patterns": [dict(p.to_dict(), palette=SALIENT_PALETTE.tolist()) for p in self.patterns],
            "frames": [{"camera": f.camera, "plane": f.plane, "pattern": f.pattern} for f in self.frames],
            "environment": None if env is None else {
                "center": [float(x) for x in env.center],
                "half_size": float(env.half_size),
                "seed": int(env.seed),
                "resolution": int(env.textures.shape[1]),
            },
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "Scene":
        mesh = None
        if d.get("mesh"):
            p = Path(d["mesh"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            mesh = load_mesh(p)
        env = None
        if d.get("environment"):
            e = d["environment"]
            env = EnvironmentBox(
                np.asarray(e["center"], dtype=np.float64), float(e["half_size"]),
                gen_environment_textures(int(e["seed"]), int(e["resolution"])), int(e["seed"]),
            )
        return cls(
            mesh=mesh,
            cameras=[Camera.from_dict(c) for c in d["cameras"]],
            planes=[PatternPlane.from_dict(p) for p in d["planes"]],
            patterns=[GridPattern.from_dict(p) for p in d["patterns"]],
            frames=[Frame(int(f["camera"]), int(f["plane"]), int(f["pattern"])) for f in d["frames"]],
            environment=env,
            eta_in=float(d.get("eta_in", ETA_IN)),
            eta_out=float(d.get("eta_out", ETA_OUT)),
            carve_cameras=[Camera.from_dict(c) for c in d.get("carve_cameras", [])],
            seed=int(d.get("seed", 0)),
        )


def save_scene(scene: Scene, directory, mesh_name: str = "object.obj") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mesh_path = None
    if scene.mesh is not None:
        save_mesh(scene.mesh, directory / mesh_name)
        mesh_path = mesh_name
    path = directory / "scene.json"
    path.write_text(json.dumps(scene.to_dict(mesh_path), indent=1))
    return path


def load_scene(path) -> Scene:
    path = Path(path)
    if path.is_dir():
        path = path / "scene.json"
    return Scene.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def make_environment(seed: int = 0, half_size: float = 4.0, center=(0.0, 0.0, 0.0), resolution: int = 64) -> EnvironmentBox:
    return EnvironmentBox(np.asarray(center, dtype=np.float64), half_size,
                          gen_environment_textures(seed, resolution), seed)

