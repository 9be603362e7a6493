"""Grid-based single-image environment matting.

Each pixel inside the object mask is labelled with the salient cell whose
colour it matches (within gamma1), Inf when it is far from every pattern
colour (beyond gamma2), or None otherwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .scene.pattern import GridPattern

GAMMA1 = 0.3
GAMMA2 = 0.4

NONE = 0
INF = 1
CELL_BASE = 2  # index image value for salient cell i is CELL_BASE + i


@dataclass(frozen=True)
class Cell:
    cell_id: int
    u: tuple[float, float]


class _Inf:
    def __repr__(self):
        return "Inf"


Inf = _Inf()


@dataclass
class CorrespondenceMap:
    """Per-pixel labels stored as an index image plus the frame's cell centres."""

    index: np.ndarray  # (H, W) uint16
    centers: np.ndarray  # (5, 2) texture-space salient centres
    gamma1: float = GAMMA1
    gamma2: float = GAMMA2

    @property
    def shape(self):
        return self.index.shape

    def cell_mask(self) -> np.ndarray:
        return self.index >= CELL_BASE

    def inf_mask(self) -> np.ndarray:
        return self.index == INF

    def cell_ids(self) -> np.ndarray:
        """Salient id per pixel, -1 where the pixel is not a Cell."""
        return np.where(self.index >= CELL_BASE, self.index.astype(np.int64) - CELL_BASE, -1)

    def targets(self) -> np.ndarray:
        """(H, W, 2) cell centre per pixel, NaN where not a Cell."""
        ids = self.cell_ids()
        out = np.full(ids.shape + (2,), np.nan)
        m = ids >= 0
        out[m] = self.centers[ids[m]]
        return out

    def entry(self, row: int, col: int):
        v = int(self.index[row, col])
        if v == NONE:
            return None
        if v == INF:
            return Inf
        i = v - CELL_BASE
        return Cell(i, tuple(float(x) for x in self.centers[i]))

    def save(self, png_path, sidecar_path=None) -> None:
        png_path = Path(png_path)
        Image.fromarray(self.index.astype(np.uint16)).save(png_path)
        sidecar_path = Path(sidecar_path) if sidecar_path else png_path.with_suffix(".json")
        sidecar_path.write_text(json.dumps({
            "centers": {str(i + CELL_BASE): [float(x) for x in c] for i, c in enumerate(self.centers)},
            "gamma1": self.gamma1, "gamma2": self.gamma2,
            "encoding": {"0": "None", "1": "Inf", "2..6": "salient cell id + 2"},
        }, indent=1))

    @classmethod
    def load(cls, png_path, sidecar_path=None) -> "CorrespondenceMap":
        png_path = Path(png_path)
        index = np.asarray(Image.open(png_path)).astype(np.uint16)
        sidecar_path = Path(sidecar_path) if sidecar_path else png_path.with_suffix(".json")
        meta = json.loads(sidecar_path.read_text())
        keys = sorted(meta["centers"], key=int)
        centers = np.array([meta["centers"][k] for k in keys], dtype=np.float64)
        return cls(index, centers, meta.get("gamma1", GAMMA1), meta.get("gamma2", GAMMA2))


def _classify(colors: np.ndarray, pattern: GridPattern, gamma1: float, gamma2: float) -> np.ndarray:
    if not gamma1 < gamma2:
        raise ValueError("gamma1 must be smaller than gamma2")
    sal = pattern.salient_colors
    d_sal = np.linalg.norm(colors[:, None, :] - sal[None], axis=2)
    d_chk = np.linalg.norm(colors[:, None, :] - pattern.checker[None], axis=2)
    best = np.argmin(d_sal, axis=1)  # first minimum: ties go to the lowest id
    dmin_sal = d_sal[np.arange(len(colors)), best]
    dmin_all = np.minimum(dmin_sal, d_chk.min(axis=1))
    out = np.full(len(colors), NONE, dtype=np.uint16)
    is_cell = dmin_sal < gamma1
    out[is_cell] = CELL_BASE + best[is_cell]
    out[~is_cell & (dmin_all > gamma2)] = INF
    return out


def classify_pixel(c_p, pattern: GridPattern, gamma1: float = GAMMA1, gamma2: float = GAMMA2):
    """Cell(center), Inf or None for one linear RGB colour."""
    v = int(_classify(np.asarray(c_p, dtype=np.float64).reshape(1, 3), pattern, gamma1, gamma2)[0])
    if v == NONE:
        return None
    if v == INF:
        return Inf
    i = v - CELL_BASE
    return Cell(i, tuple(float(x) for x in pattern.salient_centers[i]))


def extract_matte(image, pattern: GridPattern, mask, gamma1: float = GAMMA1, gamma2: float = GAMMA2) -> CorrespondenceMap:
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} resolutions differ")
    index = np.zeros(mask.shape, dtype=np.uint16)
    if mask.any():
        index[mask] = _classify(image[mask].reshape(-1, 3), pattern, gamma1, gamma2)
    return CorrespondenceMap(index, pattern.salient_centers, gamma1, gamma2)
