"""Command-line pipeline: scene generation through evaluation.

Exit status: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
LOG_ENV = "GLASSRECON_LOG"

log = logging.getLogger("glassrecon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---- file layout -----------------------------------------------------------

def _captures_dir(scene_dir: Path, captures) -> Path:
    return Path(captures) if captures else scene_dir / "captures"


def _frame_name(prefix: str, i: int, ext: str) -> str:
    return f"{prefix}_{i:04d}.{ext}"


def _load_scene(path):
    from .scene.scene import load_scene
    return load_scene(path)


def _scene_dir(path) -> Path:
    p = Path(path)
    return p.parent if p.is_file() else p


# ---- subcommands -------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    from .mesh.io import load_mesh
    from .scene.scene import save_scene
    from .scene.synthetic import DeskLayout, bumpy_sphere, desk_scene

    mesh = load_mesh(args.mesh) if args.mesh else bumpy_sphere()
    layout = DeskLayout()
    if args.resolution:
        layout.resolution = args.resolution
    if args.views_per_placement:
        layout.views_per_placement = args.views_per_placement
    if args.placements:
        layout.placements = args.placements
    if args.carve_views:
        layout.carve_views = args.carve_views
    scene = desk_scene(mesh, seed=args.seed, layout=layout)
    path = save_scene(scene, args.output)
    print(path)
    return EXIT_OK


def cmd_render(args) -> int:
    from .scene.imageio import ensure_dir, save_mask_png, save_srgb_png, write_pfm
    from .scene.render import TextureBank, render_frame, render_mask
    from .trace.bvh import BVH

    scene = _load_scene(args.scene)
    if scene.mesh is None:
        raise ValueError("scene has no ground-truth mesh to render")
    out = ensure_dir(_captures_dir(_scene_dir(args.scene), args.output))
    textures = TextureBank(scene)
    bvh = BVH(scene.mesh.vertices, scene.mesh.faces)
    for i in range(len(scene.frames)):
        res = render_frame(scene, i, seed=args.seed * 100003 + i, noise_sigma=args.noise, textures=textures, bvh=bvh)
        save_srgb_png(out / _frame_name("frame", i, "png"), res.image)
        write_pfm(out / _frame_name("frame", i, "pfm"), res.image)
        save_mask_png(out / _frame_name("mask", i, "png"), res.mask)
        res.correspondence.save(out / _frame_name("gtcorr", i, "png"))
    for j, cam in enumerate(scene.carve_cameras):
        save_mask_png(out / f"carve_{j:02d}.png", render_mask(scene.mesh, cam, bvh))
    (out / "manifest.json").write_text(json.dumps({
        "frames": len(scene.frames), "carve_views": len(scene.carve_cameras), "noise_sigma": args.noise,
        "seed": args.seed,
    }, indent=1))
    print(out)
    return EXIT_OK


def _load_image(cap: Path, i: int):
    from .scene.imageio import load_srgb_png, read_pfm

    pfm = cap / _frame_name("frame", i, "pfm")
    if pfm.exists():
        return read_pfm(pfm).astype(np.float64)
    return load_srgb_png(cap / _frame_name("frame", i, "png"))


def cmd_envmatt(args) -> int:
    from .envmatt import extract_matte
    from .scene.imageio import load_mask_png, load_srgb_png

    scene = _load_scene(args.scene)
    cap = _captures_dir(_scene_dir(args.scene), args.captures)
    frames = range(len(scene.frames)) if args.frame is None else [args.frame]
    for i in frames:
        image = load_srgb_png(cap / _frame_name("frame", i, "png"))
        mask = load_mask_png(cap / _frame_name("mask", i, "png"))
        pattern = scene.patterns[scene.frames[i].pattern]
        cm = extract_matte(image, pattern, mask, args.gamma1, args.gamma2)
        cm.save(cap / _frame_name("corr", i, "png"))
    print(cap)
    return EXIT_OK


def cmd_init_shape(args) -> int:
    from .mesh.io import save_mesh
    from .pipeline import initial_shape
    from .scene.imageio import ensure_dir, load_mask_png

    scene = _load_scene(args.scene)
    cap = _captures_dir(_scene_dir(args.scene), args.captures)
    if not scene.carve_cameras:
        raise ValueError("scene has no carving views")
    masks = [load_mask_png(cap / f"carve_{j:02d}.png") for j in range(len(scene.carve_cameras))]
    mesh, tf = initial_shape(masks, scene.carve_cameras, args.resolution, args.target_edge)
    out = ensure_dir(args.output or _scene_dir(args.scene) / "init")
    save_mesh(mesh, out / "initial.obj")
    (out / "transform.json").write_text(json.dumps(tf.to_dict(), indent=1))
    print(out / "initial.obj")
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .mesh.io import load_mesh
    from .mesh.vsa import vsa_cluster

    mesh = load_mesh(args.mesh)
    cl = vsa_cluster(mesh, args.k)
    payload = {
        "k": cl.k,
        "cluster_of_face": cl.cluster_of_face.tolist(),
        "cluster_of_vertex": cl.cluster_of_vertex.tolist(),
        "proxy_points": cl.proxy_points.tolist(),
        "proxy_normals": cl.proxy_normals.tolist(),
        "energy_history": [float(e) for e in cl.energy_history],
    }
    Path(args.output).write_text(json.dumps(payload))
    print(args.output)
    return EXIT_OK


def _load_clustering(path):
    from .mesh.vsa import Clustering

    d = json.loads(Path(path).read_text())
    return Clustering(np.asarray(d["cluster_of_face"]), np.asarray(d["cluster_of_vertex"]), int(d["k"]),
                      np.asarray(d["proxy_points"]), np.asarray(d["proxy_normals"]), d.get("energy_history", []))


def _load_transform(path):
    from .mesh.normalize import Similarity
    return Similarity.from_dict(json.loads(Path(path).read_text()))


def _train_config(args):
    from .optim.config import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    over = {k: getattr(args, k, None) for k in (
        "epochs", "lr", "patch_size", "patches_per_step", "steps_per_epoch", "representation",
        "rgb", "corr", "ncorr", "sil", "reg", "ls", "nc", "pc", "checkpoint_every")}
    if args.seed_given:
        over["seed"] = args.seed
    cfg = cfg.updated(**over)
    if getattr(args, "no_grad_clip", False):
        cfg = replace(cfg, grad_clip=None)
    return cfg


def cmd_optimize(args) -> int:
    from .envmatt import CorrespondenceMap
    from .mesh.io import load_mesh, save_mesh
    from .optim.config import save_config
    from .optim.train import CaptureView, TrainingData, make_representation, train
    from .scene.imageio import ensure_dir, load_mask_png

    cfg = _train_config(args)
    scene_dir = _scene_dir(args.scene)
    init_dir = scene_dir / "init"
    initial = load_mesh(args.initial or init_dir / "initial.obj")
    tf = _load_transform(args.transform or init_dir / "transform.json")
    scene = _load_scene(args.scene).transformed(tf)
    cap = _captures_dir(scene_dir, args.captures)
    views = []
    for i, fr in enumerate(scene.frames):
        corr_path = cap / _frame_name("corr", i, "png")
        views.append(CaptureView(
            scene.cameras[fr.camera], _load_image(cap, i), fr.plane, fr.pattern,
            load_mask_png(cap / _frame_name("mask", i, "png")),
            CorrespondenceMap.load(corr_path) if corr_path.exists() else None,
        ))
    if args.max_views:
        views = views[: args.max_views]
    clustering = _load_clustering(args.clusters) if args.clusters else None
    rep = make_representation(initial, cfg.representation, k=args.k, sigma=args.sigma, clustering=clustering,
                              seed=cfg.seed)
    out = ensure_dir(args.output)
    save_config(cfg, out / "config.toml")
    save_mesh(initial, out / "base.obj")
    data = TrainingData(scene, views, initial)
    result = train(rep, data, cfg, out_dir=out)
    mesh, diag = rep.displaced_mesh()
    save_mesh(mesh, out / "recon_normalized.obj")
    save_mesh(mesh.with_vertices(tf.inverse().apply(mesh.vertices)), out / "recon.obj")
    summary = {
        "epochs": cfg.epochs, "representation": cfg.representation, "best_epoch": result.best_epoch,
        "final_total": result.history[-1]["total"] if result.history else None,
        "flipped_faces": int(len(diag.flipped_faces)), "degenerate_faces": int(len(diag.degenerate_faces)),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .mesh.io import load_mesh

    recon = load_mesh(args.recon)
    gt = load_mesh(args.gt)
    cameras = masks = None
    if args.scene:
        from .scene.imageio import load_mask_png
        scene = _load_scene(args.scene)
        cap = _captures_dir(_scene_dir(args.scene), args.captures)
        cameras = [scene.cameras[f.camera] for f in scene.frames]
        masks = [load_mask_png(cap / _frame_name("mask", i, "png")) for i in range(len(scene.frames))]
    report = evaluate(recon, gt, cameras, masks, samples=args.samples, icp=args.icp, seed=args.seed)
    print(report.to_json())
    return EXIT_OK


def cmd_dump_paths(args) -> int:
    from .mesh.io import load_mesh
    from .scene.render import TextureBank
    from .trace.tracer import dump_paths, trace

    scene = _load_scene(args.scene)
    mesh = load_mesh(args.mesh) if args.mesh else scene.mesh
    if mesh is None:
        raise ValueError("no mesh to trace")
    if not 0 <= args.frame < len(scene.frames):
        raise ValueError(f"frame {args.frame} out of range (scene has {len(scene.frames)})")
    fr = scene.frames[args.frame]
    cam = scene.cameras[fr.camera]
    if args.pixel:
        rows = np.array([p[0] for p in args.pixel])
        cols = np.array([p[1] for p in args.pixel])
    else:
        rows, cols = np.divmod(np.arange(cam.width * cam.height), cam.width)
    if np.any((rows < 0) | (rows >= cam.height) | (cols < 0) | (cols >= cam.width)):
        raise ValueError("pixel outside the image")
    o, d = cam.pixel_rays(rows, cols)
    backdrop = TextureBank(scene).backdrop(fr.plane, fr.pattern)
    import torch
    with torch.no_grad():
        paths = trace(mesh.vertices, mesh.faces, backdrop, o, d, scene.eta_in, scene.eta_out)
    if args.output:
        with open(args.output, "w") as fh:
            n = dump_paths(paths, fh, (rows, cols))
        print(f"{n} paths -> {args.output}")
    else:
        dump_paths(paths, sys.stdout, (rows, cols))
    return EXIT_OK


# ---- parser ----------------------------------------------------------------

def _pixel(text: str):
    try:
        r, c = text.split(",")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROW,COL, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glassrecon", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", type=Path, help="TOML training config")
    p.add_argument("--threads", type=int, default=None, help="worker thread cap")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-scene", help="write a synthetic desk scene")
    s.add_argument("-o", "--output", type=Path, required=True)
    s.add_argument("--mesh", type=Path, help="ground-truth mesh (default: bumpy sphere)")
    s.add_argument("--resolution", type=int)
    s.add_argument("--views-per-placement", type=int)
    s.add_argument("--placements", type=int)
    s.add_argument("--carve-views", type=int)
    s.set_defaults(func=cmd_gen_scene)

    s = sub.add_parser("render", help="render captures, masks and ground-truth correspondences")
    s.add_argument("scene", type=Path)
    s.add_argument("-o", "--output", type=Path)
    s.add_argument("--noise", type=float, default=0.0)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("envmatt", help="extract ray-cell correspondences from captures")
    s.add_argument("scene", type=Path)
    s.add_argument("--captures", type=Path)
    s.add_argument("--frame", type=int)
    s.add_argument("--gamma1", type=float, default=0.3)
    s.add_argument("--gamma2", type=float, default=0.4)
    s.set_defaults(func=cmd_envmatt)

    s = sub.add_parser("init-shape", help="space-carve the initial shape")
    s.add_argument("scene", type=Path)
    s.add_argument("--captures", type=Path)
    s.add_argument("-o", "--output", type=Path)
    s.add_argument("--resolution", type=int, default=128)
    s.add_argument("--target-edge", type=float, default=0.04)
    s.set_defaults(func=cmd_init_shape)

    s = sub.add_parser("cluster", help="VSA clustering of a mesh")
    s.add_argument("mesh", type=Path)
    s.add_argument("-k", type=int, default=100)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("optimize", help="optimise the displacement field")
    s.add_argument("scene", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.add_argument("--captures", type=Path)
    s.add_argument("--initial", type=Path)
    s.add_argument("--transform", type=Path)
    s.add_argument("--clusters", type=Path)
    s.add_argument("-k", type=int, default=100)
    s.add_argument("--sigma", type=float)
    s.add_argument("--max-views", type=int)
    s.add_argument("--representation", choices=["local-mlp", "vert-baseline"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patch-size", type=int)
    s.add_argument("--patches-per-step", type=int)
    s.add_argument("--steps-per-epoch", type=int)
    s.add_argument("--checkpoint-every", type=int)
    for name in ("rgb", "corr", "ncorr", "sil", "reg", "ls", "nc", "pc"):
        s.add_argument(f"--w-{name}", dest=name, type=float, help=f"weight of the {name} term")
    s.add_argument("--no-grad-clip", action="store_true")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("eval", help="compare a reconstruction with ground truth")
    s.add_argument("recon", type=Path)
    s.add_argument("gt", type=Path)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--icp", action="store_true")
    s.add_argument("--scene", type=Path, help="scene for the mask difference")
    s.add_argument("--captures", type=Path)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("dump-paths", help="write traced light paths as JSON lines")
    s.add_argument("scene", type=Path)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--mesh", type=Path)
    s.add_argument("--pixel", type=_pixel, action="append", help="ROW,COL (repeatable)")
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_dump_paths)
    return p


def _setup_logging(verbose: int) -> None:
    level = os.environ.get(LOG_ENV, "").upper() or ("DEBUG" if verbose > 1 else "INFO" if verbose else "WARNING")
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.verbose)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads:
        import torch
        import numba
        torch.set_num_threads(args.threads)
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"glassrecon {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        from .optim.train import TrainingAborted
        if isinstance(exc, TrainingAborted):
            print(f"glassrecon {args.command}: {exc} (last checkpoint: {exc.checkpoint})", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
