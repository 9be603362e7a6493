"""Single-file binary checkpoints for both representations.

Layout (all little-endian):

    magic        8 bytes   b"GRVDF\\x00\\x01\\x00"
    version      uint32    1
    kind         uint32    0 = local-mlp, 1 = vert-baseline
    k            uint32    cluster count (0 for vert-baseline)
    L            uint32    encoding frequencies
    d_in         uint32    6 L + 3
    hidden       uint32
    d_out        uint32    3
    n_vertices   uint32
    nnz          uint64    fusion weight count (0 for vert-baseline)
    -- local-mlp --
    k blocks of float32: v1 (hidden*d_in), g1 (hidden), b1 (hidden),
                         v2 (d_out*hidden), g2 (d_out), b2 (d_out)
    cluster_of_vertex    int32  (n_vertices)
    fusion indptr        int64  (n_vertices + 1)
    fusion indices       int32  (nnz)
    fusion data          float32 (nnz)
    fusion sigma, radius float64 x 2
    -- vert-baseline --
    offsets              float32 (n_vertices * 3)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from ..mesh.core import TriangleMesh
from ..mesh.vsa import Clustering
from .fusion import FusionWeights
from .network import Representation, VdfNetwork, VertexOffsets

MAGIC = b"GRVDF\x00\x01\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIIIQ")

_MLP_FIELDS = ("v1", "g1", "b1", "v2", "g2", "b2")


def _f32(t: torch.Tensor) -> bytes:
    return t.detach().numpy().astype("<f4").tobytes()


def save_checkpoint(rep: Representation, path) -> None:
    path = Path(path)
    n = rep.base.n_vertices
    with open(path, "wb") as fh:
        if isinstance(rep, VdfNetwork):
            bank = rep.bank
            fw = rep.fusion
            fh.write(_HEADER.pack(MAGIC, VERSION, 0, bank.k, rep.frequencies, bank.d_in, bank.hidden,
                                  bank.d_out, n, fw.nnz))
            for c in range(bank.k):
                for name in _MLP_FIELDS:
                    fh.write(_f32(getattr(bank, name)[c]))
            fh.write(rep.cluster_of_vertex.astype("<i4").tobytes())
            fh.write(np.asarray(fw.indptr, dtype="<i8").tobytes())
            fh.write(np.asarray(fw.indices, dtype="<i4").tobytes())
            fh.write(np.asarray(fw.data, dtype="<f4").tobytes())
            fh.write(struct.pack("<dd", fw.sigma, fw.radius))
        elif isinstance(rep, VertexOffsets):
            fh.write(_HEADER.pack(MAGIC, VERSION, 1, 0, 0, 0, 0, 3, n, 0))
            fh.write(_f32(rep.offsets))
        else:
            raise TypeError(f"cannot checkpoint {type(rep).__name__}")


def load_checkpoint(path, base: TriangleMesh) -> Representation:
    """Rebuild a representation on ``base`` (parameters come back as float64)."""
    data = Path(path).read_bytes()
    magic, version, kind, k, L, d_in, hidden, d_out, n, nnz = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a checkpoint of a supported version")
    if n != base.n_vertices:
        raise ValueError(f"{path}: checkpoint has {n} vertices, base mesh has {base.n_vertices}")
    off = _HEADER.size

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    if kind == 1:
        rep = VertexOffsets(base)
        with torch.no_grad():
            rep.offsets.copy_(torch.as_tensor(take("<f4", n * 3).astype(np.float64).reshape(n, 3)))
        return rep
    shapes = {"v1": (hidden, d_in), "g1": (hidden,), "b1": (hidden,), "v2": (d_out, hidden), "g2": (d_out,),
              "b2": (d_out,)}
    blocks = {name: [] for name in _MLP_FIELDS}
    for _ in range(k):
        for name in _MLP_FIELDS:
            shp = shapes[name]
            blocks[name].append(take("<f4", int(np.prod(shp))).reshape(shp))
    cov = take("<i4", n).astype(np.int64)
    indptr = take("<i8", n + 1).astype(np.int64)
    indices = take("<i4", nnz).astype(np.int64)
    w = take("<f4", nnz).astype(np.float64)
    sigma, radius = struct.unpack_from("<dd", data, off)
    fusion = FusionWeights(indptr, indices, w, sigma, radius)
    cof = _faces_from_vertices(base, cov, k)
    clustering = Clustering(cluster_of_face=cof, cluster_of_vertex=cov, k=k,
                            proxy_points=np.zeros((k, 3)), proxy_normals=np.zeros((k, 3)), energy_history=[])
    net = VdfNetwork(base, clustering, fusion, frequencies=L, hidden=hidden)
    with torch.no_grad():
        for name in _MLP_FIELDS:
            getattr(net.bank, name).copy_(torch.as_tensor(np.stack(blocks[name]).astype(np.float64)))
    return net


def _faces_from_vertices(base: TriangleMesh, cov: np.ndarray, k: int) -> np.ndarray:
    """Face labels by majority of their vertices' labels (ties to the lowest id)."""
    lab = cov[base.faces]
    out = np.empty(base.n_faces, dtype=np.int64)
    for i, row in enumerate(lab):
        vals, counts = np.unique(row, return_counts=True)
        out[i] = vals[np.argmax(counts)]
    return out
