"""Patch-based optimisation of a displacement representation."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import losses as L
from ..envmatt import CorrespondenceMap
from ..mesh.core import TriangleMesh
from ..mesh.vsa import Clustering, vsa_cluster
from ..scene.camera import Camera
from ..scene.render import TextureBank, render_mask
from ..scene.scene import Scene
from ..trace.bvh import BVH
from ..trace.tracer import boundary_distance, prune_rays, trace
from ..vdf.checkpoint import save_checkpoint
from ..vdf.fusion import precompute_fusion_weights
from ..vdf.network import Representation, VdfNetwork, VertexOffsets
from .config import TrainConfig

log = logging.getLogger(__name__)

MAX_PATCH_TRIES = 1000


class TrainingAborted(RuntimeError):
    """Raised when a step produces NaN; ``checkpoint`` is the last one written."""

    def __init__(self, message: str, checkpoint: Path | None, component: str | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.component = component


@dataclass
class CaptureView:
    """One captured frame with everything derived from it."""

    camera: Camera
    image: np.ndarray  # (H, W, 3) linear RGB in [0, 1]
    plane: int
    pattern: int
    mask: np.ndarray | None = None
    correspondence: CorrespondenceMap | None = None


@dataclass
class Patch:
    view: int
    row: int
    col: int
    size: int

    def pixels(self):
        r, c = np.mgrid[self.row:self.row + self.size, self.col:self.col + self.size]
        return r.ravel(), c.ravel()


def project_initial_mask(mesh: TriangleMesh, camera: Camera, bvh: BVH | None = None) -> np.ndarray:
    """M^p: pixels whose centre ray meets the (initial) mesh."""
    return render_mask(mesh, camera, bvh)


def sample_patches(projected_masks, rng: np.random.Generator, n: int, size: int,
                   tries: int = MAX_PATCH_TRIES) -> list[Patch]:
    """``n`` random windows, each overlapping the projected mask of its view."""
    out = []
    n_views = len(projected_masks)
    for _ in range(n):
        for _ in range(tries):
            v = int(rng.integers(n_views))
            H, W = projected_masks[v].shape
            if size > H or size > W:
                raise ValueError(f"patch size {size} exceeds image size {W}x{H}")
            r = int(rng.integers(H - size + 1))
            c = int(rng.integers(W - size + 1))
            if projected_masks[v][r:r + size, c:c + size].any():
                out.append(Patch(v, r, c, size))
                break
        else:
            raise ValueError(f"no patch overlapping the projected mask after {tries} tries")
    return out


def cosine_lr(step: int, total: int, base: float) -> float:
    """Cosine annealing from ``base`` at step 0 to zero at ``total``."""
    if total <= 0:
        return base
    return 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total)) * base


def make_representation(base: TriangleMesh, kind: str = "local-mlp", k: int = 100, sigma: float | None = None,
                        clustering: Clustering | None = None, seed: int = 0) -> Representation:
    """Fresh zero-displacement representation on ``base``.

    ``sigma`` defaults to the median edge length of the base mesh.
    """
    if kind == "vert-baseline":
        return VertexOffsets(base)
    if kind != "local-mlp":
        raise ValueError(f"unknown representation {kind!r}")
    if clustering is None:
        clustering = vsa_cluster(base, k)
    if sigma is None:
        sigma = float(np.median(base.edge_lengths))
    fusion = precompute_fusion_weights(base, sigma)
    return VdfNetwork(base, clustering, fusion, seed=seed)


class TrainingData:
    """Captures plus the per-view quantities that stay fixed during training."""

    def __init__(self, scene: Scene, views: list[CaptureView], initial: TriangleMesh):
        if not views:
            raise ValueError("no captured views")
        self.scene = scene
        self.views = views
        self.initial = initial
        self.textures = TextureBank(scene, blurred=True)
        bvh = BVH(initial.vertices, initial.faces)
        self.projected = [project_initial_mask(initial, v.camera, bvh) for v in views]
        self.boundary = [boundary_distance(m) for m in self.projected]
        self.sdt = [None if v.mask is None else L.signed_distance(v.mask) for v in views]
        self.targets = [None if v.correspondence is None else v.correspondence.targets() for v in views]

    def backdrop(self, i: int):
        v = self.views[i]
        return self.textures.backdrop(v.plane, v.pattern)


def patch_terms(V: torch.Tensor, base: TriangleMesh, bvh: BVH, data: TrainingData, patch: Patch) -> dict:
    """Image-space loss terms of one patch (rgb, corr, ncorr, sil)."""
    view = data.views[patch.view]
    rows, cols = patch.pixels()
    o, d = view.camera.pixel_rays(rows, cols)
    paths = trace(V, base.faces, data.backdrop(patch.view), o, d, data.scene.eta_in, data.scene.eta_out, bvh=bvh)
    valid = prune_rays(paths, view.image, data.projected[patch.view], (rows, cols), boundary=data.boundary[patch.view])
    s = patch.size
    rendered = paths.color.reshape(s, s, 3)
    captured = view.image[patch.row:patch.row + s, patch.col:patch.col + s]
    terms = {"rgb": L.rgb_loss(rendered, captured, valid.reshape(s, s))}
    corr = view.correspondence
    if corr is not None:
        plane = data.scene.planes[view.plane]
        tp = L.project_to_texture(paths.x2, paths.l_t2, plane)
        terms["corr"] = L.corr_loss(tp, data.targets[patch.view][rows, cols], corr.cell_mask()[rows, cols], valid)
        terms["ncorr"] = L.ncorr_loss(tp, corr.inf_mask()[rows, cols], valid)
    if view.mask is not None:
        terms["sil"] = L.silhouette_loss(V, base, view.camera, view.mask, sdt=data.sdt[patch.view])
    return terms


@dataclass
class TrainResult:
    representation: Representation
    history: list[dict] = field(default_factory=list)  # one row per epoch
    step_totals: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    best_epoch: int | None = None


def _check_grads(rep: Representation) -> None:
    for name, p in rep.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient in parameter '{name}'")


class Trainer:
    """Owns the parameters and the optimiser; one ``step`` per patch batch."""

    def __init__(self, rep: Representation, data: TrainingData, cfg: TrainConfig):
        self.rep = rep
        self.data = data
        self.cfg = cfg
        self.base = rep.base
        self.topo = L.MeshTopology(self.base)
        self.rng = np.random.default_rng(cfg.seed)
        self.params = [p for p in rep.parameters() if p.requires_grad]
        self.opt = torch.optim.Adam(self.params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
        self.steps_per_epoch = cfg.steps_for(len(data.views))
        self.total_steps = cfg.epochs * self.steps_per_epoch
        self.step_count = 0
        init_rng = np.random.default_rng([cfg.seed, 1])
        self.initial_samples = torch.as_tensor(data.initial.sample_surface(cfg.chamfer_samples, init_rng)[0])

    def regularisers(self, V: torch.Tensor) -> dict:
        current = self.base.with_vertices(V.detach().numpy())
        fid, bary = current.sample_barycentric(self.cfg.chamfer_samples, self.rng)
        s1 = L.surface_samples(V, self.base.faces, fid, bary)
        return {
            "ls": L.laplacian_loss(V, self.topo),
            "nc": L.normal_consistency_loss(V, self.topo),
            "pc": L.chamfer_loss(s1, self.initial_samples),
        }

    def step(self) -> tuple[float, dict]:
        """One optimiser update; returns the total and the raw terms."""
        cfg = self.cfg
        patches = sample_patches(self.data.projected, self.rng, cfg.patches_per_step, cfg.patch_size)
        for g in self.opt.param_groups:
            g["lr"] = cosine_lr(self.step_count, self.total_steps, cfg.lr)
        self.opt.zero_grad(set_to_none=False)
        V = self.rep.displaced_vertices()
        bvh = BVH(V.detach().numpy(), self.base.faces)
        sums: dict[str, torch.Tensor] = {}
        for p in patches:  # fixed patch order keeps the reduction deterministic
            for k, v in patch_terms(V, self.base, bvh, self.data, p).items():
                sums[k] = sums[k] + v if k in sums else v
        terms = {k: v / len(patches) for k, v in sums.items()}
        terms.update(self.regularisers(V))
        total = L.total_loss(terms, cfg.weights)
        total.backward()
        _check_grads(self.rep)
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.params, cfg.grad_clip)
        self.opt.step()
        self.step_count += 1
        return float(total.detach()), {k: float(v.detach()) for k, v in terms.items()}


def _history_row(epoch: int, lr: float, totals: list[float], raws: list[dict], weights) -> dict:
    row = {"epoch": epoch, "lr": lr}
    for k in L.COMPONENTS:
        vals = [r[k] for r in raws if k in r]
        row[k] = float(np.mean(vals)) if vals else 0.0
    weighted = L.weighted_terms({k: row[k] for k in L.COMPONENTS}, weights)
    for k in L.COMPONENTS:
        row[f"{k}_w"] = float(weighted[k])
    row["total"] = float(np.mean(totals))
    return row


CSV_FIELDS = ["epoch", "lr"] + list(L.COMPONENTS) + [f"{k}_w" for k in L.COMPONENTS] + ["total"]


def train(rep: Representation, data: TrainingData, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs; writes losses.csv and checkpoints when ``out_dir`` is set.

    A NaN loss or gradient stops training with :class:`TrainingAborted`; the
    last checkpoint on disk is left untouched.
    """
    torch.manual_seed(cfg.seed)
    result = TrainResult(rep)
    if cfg.epochs == 0:
        return result
    trainer = Trainer(rep, data, cfg)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        with open(out / "losses.csv", "w", newline="") as fh:
            csv.DictWriter(fh, CSV_FIELDS).writeheader()
    best = math.inf
    last_ckpt = None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        totals, raws = [], []
        lr = cosine_lr(trainer.step_count, trainer.total_steps, cfg.lr)
        for _ in range(trainer.steps_per_epoch):
            try:
                total, raw = trainer.step()
            except L.LossNaNError as exc:
                raise TrainingAborted(f"epoch {epoch}: {exc}", last_ckpt, exc.component) from exc
            except FloatingPointError as exc:
                raise TrainingAborted(f"epoch {epoch}: {exc}", last_ckpt) from exc
            totals.append(total)
            raws.append(raw)
        result.step_totals.extend(totals)
        row = _history_row(epoch, lr, totals, raws, cfg.weights)
        result.history.append(row)
        log.info("epoch %d total %.6g (%.1fs)", epoch, row["total"], time.perf_counter() - t0)
        if progress is not None:
            progress(row)
        if out is not None:
            with open(out / "losses.csv", "a", newline="") as fh:
                csv.DictWriter(fh, CSV_FIELDS).writerow(row)
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                last_ckpt = out / "checkpoints" / f"epoch_{epoch:04d}.grvdf"
                save_checkpoint(rep, last_ckpt)
                result.checkpoints.append(last_ckpt)
            if row["total"] < best:
                save_checkpoint(rep, out / "checkpoints" / "best.grvdf")
        if row["total"] < best:
            best = row["total"]
            result.best_epoch = epoch
    if out is not None:
        save_checkpoint(rep, out / "final.grvdf")
    return result
