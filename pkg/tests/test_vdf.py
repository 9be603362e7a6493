import numpy as np
import pytest
import torch

from glassrecon.mesh.core import icosphere
from glassrecon.mesh.geodesic import geodesic_distances
from glassrecon.mesh.vsa import vsa_cluster
from glassrecon.optim.train import make_representation
from glassrecon.vdf.checkpoint import load_checkpoint, save_checkpoint
from glassrecon.vdf.encoding import encoded_dim, positional_encode
from glassrecon.vdf.fusion import DEFAULT_SIGMA, FusionWeights, precompute_fusion_weights
from glassrecon.vdf.network import VdfNetwork


@pytest.fixture(scope="module")
def net():
    base = icosphere(2, 0.5)
    clus = vsa_cluster(base, 8)
    fusion = precompute_fusion_weights(base, float(np.median(base.edge_lengths)))
    return VdfNetwork(base, clus, fusion, seed=1)


def test_encoding_dimensions():
    assert encoded_dim(16) == 99
    assert positional_encode(np.zeros(3), 16).shape[-1] == 99
    f = positional_encode(np.zeros((1, 3)), 4)[0]
    assert np.all(f[:3] == 0)
    assert np.sum(f == 1) == 12 and np.sum(f == 0) == 15
    x = np.array([[0.1, -0.2, 0.3]])
    assert np.array_equal(positional_encode(x, 0), x)
    t = positional_encode(torch.tensor(x), 3)
    assert torch.allclose(t, torch.as_tensor(positional_encode(x, 3)))


def test_zero_init_exact(net):
    assert torch.count_nonzero(net.raw_displacement()) == 0
    V = net.displaced_vertices().detach().numpy()
    assert np.array_equal(V, net.base.vertices)
    m, diag = net.displaced_mesh()
    assert np.array_equal(m.faces, net.base.faces) and diag.ok


def test_output_range_and_cluster_independence(net):
    with torch.no_grad():
        net.bank.g2.fill_(3.0)
        net.bank.b2.normal_()
        raw = net.raw_displacement()
        assert raw.abs().max() < 1
        # identical inputs in two clusters give different outputs
        feats = net.features[:1].repeat(net.base.n_vertices, 1)
        out = net.bank(feats, net.groups)
        a = int(np.flatnonzero(net.cluster_of_vertex == 0)[0])
        b = int(np.flatnonzero(net.cluster_of_vertex == 1)[0])
        assert not torch.allclose(out[a], out[b])
        net.bank.g2.zero_()
        net.bank.b2.zero_()


def test_fusion_rows_and_ratio():
    base = icosphere(3, 0.5)
    sigma = 0.03
    fw = precompute_fusion_weights(base, sigma)
    M = fw.matrix()
    assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), 1.0)
    assert np.all(M.diagonal() > 0)
    # weight ratio neighbour/self is exp(-d/sigma)
    i = 0
    cols, w = fw.row(i)
    self_w = w[cols == i][0]
    d = geodesic_distances(base, cols).distances[:, i]
    d2 = geodesic_distances(base, [i]).distances[0, cols]
    assert np.allclose(w / self_w, np.exp(-0.5 * (d + d2) / sigma), rtol=1e-9)
    assert fw.sigma == sigma and DEFAULT_SIGMA == 0.005


def test_isolated_support_and_constant_field():
    base = icosphere(2, 0.5)
    iso = precompute_fusion_weights(base, 0.01, radius=0.0)
    raw = torch.as_tensor(np.random.default_rng(0).normal(size=(base.n_vertices, 3)))
    assert torch.equal(iso.apply(raw), raw)
    assert torch.equal(FusionWeights.identity(base.n_vertices).apply(raw), raw)
    fw = precompute_fusion_weights(base, 0.05)
    v = torch.tensor([0.3, -0.1, 0.7], dtype=torch.float64)
    fused = fw.apply(v.expand(base.n_vertices, 3))
    assert (fused - v).abs().max() < 1e-9


def test_constant_field_translates_mesh(net):
    v = torch.tensor([0.01, 0.02, -0.03], dtype=torch.float64)
    fused = net.fused_displacement(v.expand(net.base.n_vertices, 3))
    V = net.base_vertices + fused
    assert np.allclose(V.numpy(), net.base.vertices + v.numpy(), atol=1e-12)


def test_cross_cluster_adjoints(net):
    with torch.no_grad():
        net.bank.g2.fill_(0.1)
    for p in net.parameters():
        p.grad = None
    cov = net.cluster_of_vertex
    # a vertex whose fusion support reaches into another cluster
    M = net.fusion.matrix().tocoo()
    cross = M.row[(cov[M.row] != cov[M.col])]
    i = int(cross[0])
    other = int(cov[M.col[(M.row == i) & (cov[M.col] != cov[i])][0]])
    net.displaced_vertices()[i].sum().backward()
    assert net.bank.v1.grad[other].abs().sum() > 0
    assert net.bank.g2.grad[other].abs().sum() > 0
    with torch.no_grad():
        net.bank.g2.zero_()


def test_checkpoint_roundtrip(tmp_path, net):
    with torch.no_grad():
        net.bank.g2.normal_()
    save_checkpoint(net, tmp_path / "a.grvdf")
    back = load_checkpoint(tmp_path / "a.grvdf", net.base)
    a = net.displaced_vertices().detach()
    b = back.displaced_vertices().detach()
    assert (a - b).abs().max() < 1e-6
    save_checkpoint(back, tmp_path / "b.grvdf")
    assert (tmp_path / "a.grvdf").read_bytes() == (tmp_path / "b.grvdf").read_bytes()
    vb = make_representation(net.base, "vert-baseline")
    with torch.no_grad():
        vb.offsets.normal_()
    save_checkpoint(vb, tmp_path / "v.grvdf")
    vb2 = load_checkpoint(tmp_path / "v.grvdf", net.base)
    assert (vb.offsets - vb2.offsets).abs().max() < 1e-6
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "v.grvdf", icosphere(1))
    (tmp_path / "bad").write_bytes(b"nope" * 20)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad", net.base)
    with torch.no_grad():
        net.bank.g2.zero_()
