"""Frequency positional encoding of 3D points."""
from __future__ import annotations

import numpy as np
import torch

DEFAULT_FREQUENCIES = 16


def encoded_dim(L: int) -> int:
    return 6 * L + 3


def positional_encode(x, L: int = DEFAULT_FREQUENCIES):
    """[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)].

    Works on numpy arrays or torch tensors of shape (..., 3).
    """
    if L < 0:
        raise ValueError("frequency count must be >= 0")
    is_torch = isinstance(x, torch.Tensor)
    lib = torch if is_torch else np
    x = x if is_torch else np.asarray(x, dtype=np.float64)
    parts = [x]
    for k in range(L):
        s = (2.0 ** k) * np.pi * x
        parts.append(lib.sin(s))
        parts.append(lib.cos(s))
    if is_torch:
        return torch.cat(parts, dim=-1)
    return np.concatenate(parts, axis=-1)
