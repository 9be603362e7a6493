"""Per-cluster local MLPs fused into one vertex displacement field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..mesh.core import TriangleMesh
from ..mesh.vsa import Clustering
from .encoding import DEFAULT_FREQUENCIES, encoded_dim, positional_encode
from .fusion import FusionWeights

HIDDEN = 128


class MlpBank(nn.Module):
    """k independent two-layer MLPs (d_in -> 128 -> 3) evaluated in one batch.

    Both layers use weight normalisation, W = g * v / ||v|| per output unit.
    The output gain starts at zero and the output bias at zero, so every
    MLP starts out producing exactly the zero vector.
    """

    def __init__(self, k: int, d_in: int, hidden: int = HIDDEN, d_out: int = 3, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        b1 = 1.0 / np.sqrt(d_in)
        b2 = 1.0 / np.sqrt(hidden)

        def uniform(shape, bound):
            return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound

        self.k, self.d_in, self.hidden, self.d_out = k, d_in, hidden, d_out
        self.v1 = nn.Parameter(uniform((k, hidden, d_in), b1))
        self.g1 = nn.Parameter(torch.ones((k, hidden), dtype=torch.float64))
        self.b1 = nn.Parameter(uniform((k, hidden), b1))
        self.v2 = nn.Parameter(uniform((k, d_out, hidden), b2))
        self.g2 = nn.Parameter(torch.zeros((k, d_out), dtype=torch.float64))
        self.b2 = nn.Parameter(torch.zeros((k, d_out), dtype=torch.float64))

    def weights(self):
        W1 = self.g1[..., None] * self.v1 / torch.linalg.vector_norm(self.v1, dim=-1, keepdim=True)
        W2 = self.g2[..., None] * self.v2 / torch.linalg.vector_norm(self.v2, dim=-1, keepdim=True)
        return W1, W2

    def forward(self, features: torch.Tensor, groups: "ClusterGroups") -> torch.Tensor:
        """Raw displacement for each row of ``features`` using its cluster's MLP."""
        W1, W2 = self.weights()
        x = features[groups.padded]  # (k, m, d_in); padding rows repeat a valid row
        h = torch.relu(torch.bmm(x, W1.transpose(1, 2)) + self.b1[:, None, :])
        y = torch.tanh(torch.bmm(h, W2.transpose(1, 2)) + self.b2[:, None, :])
        return y.reshape(-1, self.d_out)[groups.gather]


@dataclass
class ClusterGroups:
    """Index plumbing for evaluating vertices cluster by cluster."""

    padded: torch.Tensor  # (k, m) vertex ids, rows padded by repeating the first id
    gather: torch.Tensor  # (V,) position of each vertex in the flattened (k * m) output

    @classmethod
    def build(cls, cluster_of_vertex: np.ndarray, k: int) -> "ClusterGroups":
        cov = np.asarray(cluster_of_vertex, dtype=np.int64)
        counts = np.bincount(cov, minlength=k)
        m = max(int(counts.max()), 1)
        padded = np.zeros((k, m), dtype=np.int64)
        gather = np.zeros(len(cov), dtype=np.int64)
        for c in range(k):
            ids = np.flatnonzero(cov == c)
            if len(ids):
                padded[c, : len(ids)] = ids
                padded[c, len(ids):] = ids[0]
                gather[ids] = c * m + np.arange(len(ids))
        return cls(torch.as_tensor(padded), torch.as_tensor(gather))


@dataclass
class MeshDiagnostics:
    flipped_faces: np.ndarray
    degenerate_faces: np.ndarray
    max_displacement: float

    @property
    def ok(self) -> bool:
        return len(self.flipped_faces) == 0 and len(self.degenerate_faces) == 0


def diagnose(base: TriangleMesh, vertices: np.ndarray) -> MeshDiagnostics:
    moved = base.with_vertices(vertices)
    c0, c1 = base.face_cross, moved.face_cross
    flipped = np.flatnonzero(np.einsum("ij,ij->i", c0, c1) <= 0)
    degenerate = np.flatnonzero(moved.face_areas < 1e-14)
    disp = np.linalg.norm(vertices - base.vertices, axis=1)
    return MeshDiagnostics(flipped, degenerate, float(disp.max(initial=0.0)))


class Representation(nn.Module):
    """Common interface of the learned displacement and the vertex baseline."""

    base: TriangleMesh

    def displaced_vertices(self) -> torch.Tensor:
        raise NotImplementedError

    def displaced_mesh(self) -> tuple[TriangleMesh, MeshDiagnostics]:
        with torch.no_grad():
            v = self.displaced_vertices().numpy().copy()
        return self.base.with_vertices(v), diagnose(self.base, v)


class VdfNetwork(Representation):
    """Base mesh + clustering + one local MLP per cluster + fusion weights."""

    kind = "local-mlp"

    def __init__(self, base: TriangleMesh, clustering: Clustering, fusion: FusionWeights,
                 frequencies: int = DEFAULT_FREQUENCIES, hidden: int = HIDDEN, seed: int = 0):
        super().__init__()
        if fusion.n != base.n_vertices:
            raise ValueError("fusion weights do not match the base mesh")
        if len(clustering.cluster_of_vertex) != base.n_vertices:
            raise ValueError("clustering does not match the base mesh")
        self.base = base
        self.clustering = clustering
        self.fusion = fusion
        self.frequencies = frequencies
        self.cluster_of_vertex = np.asarray(clustering.cluster_of_vertex, dtype=np.int64)
        self.bank = MlpBank(clustering.k, encoded_dim(frequencies), hidden, 3, seed)
        # inputs are the fixed base positions
        self.register_buffer("features", torch.as_tensor(positional_encode(base.vertices, frequencies)))
        self.register_buffer("base_vertices", torch.as_tensor(base.vertices.copy()))
        self.groups = ClusterGroups.build(self.cluster_of_vertex, clustering.k)
        self._fusion_ops = fusion.torch_operands()

    @property
    def k(self) -> int:
        return self.clustering.k

    def raw_displacement(self) -> torch.Tensor:
        """(V, 3) outputs of each vertex's owning MLP."""
        return self.bank(self.features, self.groups)

    def mlp_raw_displacement(self, i: int) -> torch.Tensor:
        return self.raw_displacement()[i]

    def fused_displacement(self, raw: torch.Tensor | None = None) -> torch.Tensor:
        raw = self.raw_displacement() if raw is None else raw
        return self.fusion.apply(raw, self._fusion_ops)

    def displaced_vertices(self) -> torch.Tensor:
        return self.base_vertices + self.fused_displacement()


class VertexOffsets(Representation):
    """The explicit-vertex baseline: one free offset per vertex."""

    kind = "vert-baseline"

    def __init__(self, base: TriangleMesh):
        super().__init__()
        self.base = base
        self.register_buffer("base_vertices", torch.as_tensor(base.vertices.copy()))
        self.offsets = nn.Parameter(torch.zeros((base.n_vertices, 3), dtype=torch.float64))

    def displaced_vertices(self) -> torch.Tensor:
        return self.base_vertices + self.offsets
