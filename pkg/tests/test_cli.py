import json

import numpy as np
import pytest

from glassrecon.cli import main
from glassrecon.mesh.io import load_mesh


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene = root / "scene"
    assert main(["--seed", "7", "gen-scene", "-o", str(scene), "--resolution", "64", "--placements", "2",
                 "--views-per-placement", "2", "--carve-views", "6"]) == 0
    assert main(["render", str(scene)]) == 0
    assert main(["envmatt", str(scene)]) == 0
    assert main(["init-shape", str(scene), "--resolution", "48", "--target-edge", "0.1"]) == 0
    out = root / "run"
    assert main(["optimize", str(scene), "-o", str(out), "--epochs", "5", "--patch-size", "64", "-k", "6",
                 "--checkpoint-every", "2", "--lr", "1e-4"]) == 0
    return root, scene, out


def test_pipeline_artifacts(workspace):
    root, scene, out = workspace
    cap = scene / "captures"
    manifest = json.loads((cap / "manifest.json").read_text())
    assert manifest["frames"] == 4 and manifest["carve_views"] == 6
    for i in range(4):
        for name in (f"frame_{i:04d}.png", f"frame_{i:04d}.pfm", f"mask_{i:04d}.png", f"gtcorr_{i:04d}.png",
                     f"gtcorr_{i:04d}.json", f"corr_{i:04d}.png", f"corr_{i:04d}.json"):
            assert (cap / name).exists(), name
    assert (scene / "init" / "initial.obj").exists() and (scene / "init" / "transform.json").exists()
    for name in ("config.toml", "base.obj", "losses.csv", "recon.obj", "recon_normalized.obj", "summary.json",
                 "final.grvdf", "checkpoints/best.grvdf", "checkpoints/epoch_0002.grvdf",
                 "checkpoints/epoch_0004.grvdf", "checkpoints/epoch_0005.grvdf"):
        assert (out / name).exists(), name
    assert len((out / "losses.csv").read_text().splitlines()) == 6
    recon = load_mesh(out / "recon.obj")
    gt = load_mesh(scene / "object.obj")
    # the world-frame reconstruction overlaps the ground truth
    assert np.linalg.norm(recon.vertices.mean(0) - gt.vertices.mean(0)) < 0.1


def test_render_is_deterministic(workspace, tmp_path):
    _, scene, _ = workspace
    assert main(["render", str(scene), "-o", str(tmp_path / "again")]) == 0
    a = (scene / "captures" / "frame_0002.pfm").read_bytes()
    assert (tmp_path / "again" / "frame_0002.pfm").read_bytes() == a


def test_eval_json(workspace, capsys):
    _, scene, out = workspace
    capsys.readouterr()
    assert main(["eval", str(out / "recon.obj"), str(scene / "object.obj"), "--samples", "2000",
                 "--scene", str(scene)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["chamfer"] > 0 and 0 <= rep["mask_diff"] <= 1 and rep["samples"] == 2000


def test_cluster_and_dump(workspace, tmp_path, capsys):
    _, scene, _ = workspace
    assert main(["cluster", str(scene / "init" / "initial.obj"), "-k", "5", "-o", str(tmp_path / "c.json")]) == 0
    c = json.loads((tmp_path / "c.json").read_text())
    assert c["k"] == 5 and len(set(c["cluster_of_face"])) == 5
    assert main(["dump-paths", str(scene), "--frame", "1", "--pixel", "32,32", "--pixel", "0,0",
                 "-o", str(tmp_path / "p.jsonl")]) == 0
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["pixel"] == [32, 32]


def test_vert_baseline_run(workspace, tmp_path):
    _, scene, _ = workspace
    assert main(["optimize", str(scene), "-o", str(tmp_path), "--representation", "vert-baseline", "--epochs", "1",
                 "--patch-size", "64", "--no-grad-clip"]) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["representation"] == "vert-baseline"
    assert "grad_clip = 0.0" in (tmp_path / "config.toml").read_text()


def test_exit_codes(workspace, tmp_path):
    _, scene, _ = workspace
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["eval", "only-one-arg"]) == 1
    assert main(["optimize", str(scene), "-o", str(tmp_path), "--epochs", "-3"]) == 2
    assert main(["eval", str(tmp_path / "missing.obj"), str(scene / "object.obj")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nrepresentation = 'nope'\n")
    assert main(["--config", str(bad), "optimize", str(scene), "-o", str(tmp_path / "x")]) == 2
