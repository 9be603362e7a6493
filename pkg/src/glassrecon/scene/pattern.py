"""7x7 checkerboard backdrop with five randomly placed salient cells."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRID = 7
CELL = 1.0 / GRID
N_SALIENT = 5
MAX_OFFSET = 0.4
MAX_TRIES = 1000

SALIENT_PALETTE = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
    ]
)
CHECKER_COLORS = np.array([[0.05, 0.05, 0.05], [0.95, 0.95, 0.95]])
GRID_CENTER = np.array([0.5, 0.5])


@dataclass(frozen=True)
class SalientCell:
    row: int
    col: int
    offset: tuple[float, float]  # (du, dv) in cell units
    color: tuple[float, float, float]

    @property
    def center(self) -> np.ndarray:
        """Texture-space (u, v) centre after the offset."""
        return np.array([(self.col + 0.5 + self.offset[0]) * CELL, (self.row + 0.5 + self.offset[1]) * CELL])


@dataclass(frozen=True)
class GridPattern:
    seed: int
    salient: tuple[SalientCell, ...]
    checker: np.ndarray = field(default_factory=lambda: CHECKER_COLORS.copy())
    cell_size: float = CELL

    @property
    def salient_colors(self) -> np.ndarray:
        return np.array([s.color for s in self.salient])

    @property
    def salient_centers(self) -> np.ndarray:
        return np.array([s.center for s in self.salient])

    @property
    def all_colors(self) -> np.ndarray:
        return np.vstack([self.checker, self.salient_colors])

    def salient_at(self, uv) -> np.ndarray:
        """Salient id under each texture point, -1 where none."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        out = np.full(len(uv), -1, dtype=np.int64)
        for i, c in enumerate(self.salient_centers):
            inside = np.all(np.abs(uv - c) < 0.5 * self.cell_size, axis=1)
            out[inside & (out < 0)] = i
        return out

    def texture(self, texels_per_cell: int = 32) -> np.ndarray:
        """Sharp RGB texture, rows indexed by v and columns by u."""
        n = GRID * texels_per_cell
        t = (np.arange(n) + 0.5) / n
        uu, vv = np.meshgrid(t, t)
        col = np.minimum((uu * GRID).astype(int), GRID - 1)
        row = np.minimum((vv * GRID).astype(int), GRID - 1)
        img = self.checker[(row + col) % 2].copy()
        ids = self.salient_at(np.stack([uu.ravel(), vv.ravel()], 1)).reshape(n, n)
        for i, s in enumerate(self.salient):
            img[ids == i] = s.color
        return img

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "checker": self.checker.tolist(),
            "salient": [
                {"row": s.row, "col": s.col, "offset": list(s.offset), "color": list(s.color)} for s in self.salient
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridPattern":
        cells = tuple(
            SalientCell(int(s["row"]), int(s["col"]), tuple(s["offset"]), tuple(s["color"])) for s in d["salient"]
        )
        return cls(int(d["seed"]), cells, np.asarray(d["checker"], dtype=np.float64))


def _valid_layout(rows, cols, offsets) -> bool:
    cu = cols + 0.5 + offsets[:, 0]
    cv = rows + 0.5 + offsets[:, 1]
    # the whole salient square (one cell wide) must stay inside the grid
    if np.any(cu < 0.5) or np.any(cu > GRID - 0.5) or np.any(cv < 0.5) or np.any(cv > GRID - 0.5):
        return False
    for i in range(len(cu)):
        for j in range(i + 1, len(cu)):
            if max(abs(cu[i] - cu[j]), abs(cv[i] - cv[j])) < 1.0:
                return False
    return True


def gen_pattern(seed: int, palette=SALIENT_PALETTE) -> GridPattern:
    """Deterministic pattern: five distinct cells, jittered by up to 0.4 cell."""
    palette = np.asarray(palette, dtype=np.float64)
    if len(palette) != N_SALIENT:
        raise ValueError(f"palette must have {N_SALIENT} colours")
    rng = np.random.default_rng(seed)
    cells = rng.choice(GRID * GRID, size=N_SALIENT, replace=False)
    rows, cols = np.divmod(cells, GRID)
    for _ in range(MAX_TRIES):
        offsets = rng.uniform(-MAX_OFFSET, MAX_OFFSET, size=(N_SALIENT, 2))
        if _valid_layout(rows, cols, offsets):
            break
    else:
        offsets = np.zeros((N_SALIENT, 2))
    salient = tuple(
        SalientCell(int(r), int(c), (float(o[0]), float(o[1])), tuple(float(x) for x in col))
        for r, c, o, col in zip(rows, cols, offsets, palette)
    )
    return GridPattern(int(seed), salient)
