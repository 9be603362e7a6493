"""8-bit sRGB PNG, binary masks and PFM float images."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def save_srgb_png(path, image: np.ndarray) -> None:
    """Linear [0, 1] RGB -> 8-bit sRGB PNG."""
    q = np.round(linear_to_srgb(image) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def load_srgb_png(path) -> np.ndarray:
    """8-bit sRGB PNG -> linear float64 RGB."""
    q = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(q)


def save_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM; rows are stored bottom-to-top as the format requires."""
    data = np.asarray(data, dtype=np.float32)
    color = data.ndim == 3 and data.shape[2] == 3
    if not color and data.ndim != 2:
        raise ValueError("PFM holds (H, W) or (H, W, 3) arrays")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if color else b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
