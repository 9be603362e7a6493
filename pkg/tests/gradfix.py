"""A 20-triangle glass object seen by one 64x64 camera, for finite-difference checks."""
import numpy as np
import torch

from glassrecon import losses as L
from glassrecon.mesh.core import icosphere
from glassrecon.mesh.vsa import vsa_cluster
from glassrecon.optim.train import CaptureView, Patch, TrainingData, patch_terms
from glassrecon.scene.render import render_frame
from glassrecon.scene.synthetic import DeskLayout, desk_scene
from glassrecon.trace.bvh import BVH
from glassrecon.vdf.fusion import precompute_fusion_weights
from glassrecon.vdf.network import VdfNetwork

RES = 64


class GradFixture:
    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        base = icosphere(0, 0.5)  # icosahedron, 20 faces
        assert base.n_faces == 20
        gt = base.with_vertices(base.vertices * (1 + 0.08 * rng.uniform(-1, 1, (12, 1))))
        layout = DeskLayout(resolution=RES, views_per_placement=2, carve_views=4, fov_deg=30.0)
        scene = desk_scene(gt, seed=seed, layout=layout)
        r = render_frame(scene, 0)
        fr = scene.frames[0]
        view = CaptureView(scene.cameras[fr.camera], r.image, fr.plane, fr.pattern, r.mask, r.correspondence)
        self.base = base
        self.data = TrainingData(scene.with_mesh(None), [view], base)
        self.patch = Patch(0, 0, 0, RES)
        self.topo = L.MeshTopology(base)
        fid, bary = base.sample_barycentric(200, rng)
        self.fid, self.bary = fid, bary
        self.target = torch.as_tensor(gt.sample_surface(200, rng)[0])
        clus = vsa_cluster(base, 2)
        fusion = precompute_fusion_weights(base, float(np.median(base.edge_lengths)))
        self.net = VdfNetwork(base, clus, fusion, frequencies=2, hidden=8, seed=seed)
        with torch.no_grad():
            # move away from the zero initialisation so every weight matters
            for p in self.net.parameters():
                p.add_(0.05 * torch.as_tensor(rng.normal(size=p.shape)))
        self.params = [p for p in self.net.parameters()]

    def evaluate(self, with_signature: bool = False):
        V = self.net.displaced_vertices()
        bvh = BVH(V.detach().numpy(), self.base.faces)
        terms = patch_terms(V, self.base, bvh, self.data, self.patch)
        terms["ls"] = L.laplacian_loss(V, self.topo)
        terms["nc"] = L.normal_consistency_loss(V, self.topo)
        s1 = L.surface_samples(V, self.base.faces, self.fid, self.bary)
        terms["pc"] = L.chamfer_loss(s1, self.target)
        total = L.total_loss(terms)
        if not with_signature:
            return total
        return total, self.signature(V)

    def signature(self, V):
        """Every discrete choice the loss depends on."""
        from glassrecon.trace.tracer import prune_rays, trace
        view = self.data.views[0]
        rows, cols = self.patch.pixels()
        o, d = view.camera.pixel_rays(rows, cols)
        Vn = V.detach()
        with torch.no_grad():
            p = trace(Vn, self.base.faces, self.data.backdrop(0), o, d, bvh=BVH(Vn.numpy(), self.base.faces))
        valid = prune_rays(p, view.image, self.data.projected[0], (rows, cols))
        tp = L.project_to_texture(p.x2, p.l_t2, self.data.scene.planes[view.plane])
        cur = self.base.with_vertices(Vn.numpy())
        s1 = L.surface_samples(Vn, self.base.faces, self.fid, self.bary).numpy()
        from scipy.spatial import cKDTree
        uv = tp.uv.numpy()
        tgt = self.data.targets[0][rows, cols]
        far = np.abs(uv.clip(0, 1) - tgt).max(-1) > L.CELL / 2
        inside = np.abs(uv - 0.5).max(-1) < 0.5
        parts = [np.concatenate([np.asarray(v).ravel() for v in p.decisions.values()]), valid, tp.hit,
                 np.nan_to_num(far), inside, L.contour_vertices(cur, view.camera.center),
                 cKDTree(self.target.numpy()).query(s1)[1], cKDTree(s1).query(self.target.numpy())[1]]
        return tuple(np.asarray(x).tobytes() for x in parts)


def fd_check(fix: GradFixture, n_params: int = 50, h: float = 1e-4, seed: int = 0, max_tries: int = 400):
    """(relative errors, number skipped) over ``n_params`` random scalar
    parameters whose +-h perturbation leaves every discrete decision intact."""
    rng = np.random.default_rng(seed)
    for p in fix.params:
        p.grad = None
    total, sig0 = fix.evaluate(True)
    total.backward()
    grads = [p.grad.clone() for p in fix.params]
    sizes = np.array([p.numel() for p in fix.params])
    errs, skipped = [], 0
    for _ in range(max_tries):
        if len(errs) == n_params:
            break
        which = int(rng.choice(len(sizes), p=sizes / sizes.sum()))
        p = fix.params[which]
        j = int(rng.integers(p.numel()))
        flat = p.data.view(-1)
        orig = float(flat[j])
        with torch.no_grad():
            flat[j] = orig + h
            fp, sp = fix.evaluate(True)
            flat[j] = orig - h
            fm, sm = fix.evaluate(True)
            flat[j] = orig
        if sp != sig0 or sm != sig0:
            skipped += 1
            continue
        fd = (float(fp) - float(fm)) / (2 * h)
        an = float(grads[which].view(-1)[j])
        scale = max(abs(fd), abs(an))
        errs.append(0.0 if scale < 1e-9 else abs(fd - an) / scale)
    return np.array(errs), skipped
