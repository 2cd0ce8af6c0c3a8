"""Command-line entry point: ``stylesplat <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error (missing or invalid
input files), 3 numerical failure (non-finite loss or parameters).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import set_num_threads

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stylesplat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    from .config import TrainConfig, load_config
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _out_dir(args, default):
    out = Path(args.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_pairs(scene, split="train"):
    return [(f.image, f.camera) for f in scene.split(split)]


# --- subcommands -------------------------------------------------------------

def cmd_synth(args):
    from .synthetic import SyntheticSceneSpec, generate_synthetic, recolor_pool, render_synthetic
    from .dataio import save_image, write_manifest
    seed = args.seed if args.seed is not None else 0
    spec = SyntheticSceneSpec(layout=args.spec, n_points=args.points, color_scheme=args.color_scheme,
                              width=args.size, height=args.size, focal=args.focal,
                              n_train=args.train_views, n_test=args.test_views, seed=seed)
    out = _out_dir(args, f"synth_{args.spec}")
    _, manifest = generate_synthetic(spec, out)
    if args.recolor:
        scene = render_synthetic(spec)
        train, test = scene.indices("train"), scene.indices("test")
        rp = recolor_pool([scene.images[i] for i in train], args.recolor,
                          [scene.images[i] for i in test])
        (out / "real").mkdir(exist_ok=True)
        (out / "target").mkdir(exist_ok=True)
        pool_names = []
        for i, img in enumerate(rp.pool):
            pool_names.append(f"real/{i:04d}.png")
            save_image(out / pool_names[-1], img)
        for i, img in zip(test, rp.heldout):
            save_image(out / "target" / f"{i:04d}.png", img)
        n = len(scene.cameras)
        manifest = write_manifest(out, scene.cameras, scene.splits,
                                  [f"images/{i:04d}.png" for i in range(n)],
                                  [f"depth/{i:04d}.f32d" for i in range(n)], pool_names)
    print(manifest)
    return EXIT_OK


def cmd_reconstruct(args):
    from .dataio import load_checkpoint, load_scene, save_checkpoint
    from .pipelines import init_cloud, random_init, reconstruct
    cfg = _config(args)
    scene = load_scene(args.scene)
    train, test = _train_pairs(scene, "train"), _train_pairs(scene, "test")
    if len(train) == 0:
        raise UsageError("scene has no training frames")
    rng = np.random.default_rng(cfg.seed)
    if args.init_checkpoint:
        seed_pts = load_checkpoint(args.init_checkpoint).positions
        pts = seed_pts + rng.normal(0.0, args.init_noise, seed_pts.shape)
        init = init_cloud(pts, sh_degree=cfg.phase1.sh_degree)
    else:
        init = random_init([c for _, c in train], args.init_points, (args.near, args.far), cfg.seed,
                           cfg.phase1.sh_degree)
    result = reconstruct(train, init, cfg, test, log_every=args.log_every)
    out = _out_dir(args, "reconstruct")
    save_checkpoint(result.cloud, out / "cloud.ssgc",
                    {"phase": "reconstruct", "iteration": cfg.phase1.iterations, "seed": cfg.seed,
                     "config": cfg.digest()})
    report = {"train_psnr": result.train_psnr, "test_psnr": result.test_psnr,
              "points": len(result.cloud), "pruned": result.pruned, "densified": result.densified}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return EXIT_OK


def cmd_train_depth(args):
    from .dataio import load_checkpoint, load_scene
    from .nets import save_weights
    from .pipelines import prepare_nets
    cfg = _config(args)
    scene = load_scene(args.scene)
    cloud = load_checkpoint(args.cloud)
    nets = prepare_nets(cloud, [f.camera for f in scene.split("train")], cfg)
    out = _out_dir(args, "depthnet")
    save_weights(nets.depthnet, out / "depthnet.ssnw")
    losses = nets.depthnet.train_losses
    print(json.dumps({"first_loss": losses[0], "final_loss": float(np.mean(losses[-20:]))}))
    return EXIT_OK


def _load_pool(args, scene):
    from .dataio import load_image_folder
    if args.pool:
        pool, _ = load_image_folder(args.pool)
    else:
        pool = scene.real_pool
    if not pool:
        raise ValueError("real pool is empty (pass --pool or list real_pool in the manifest)")
    return pool


def _nets(args, cfg, cloud, cameras):
    from .nets import load_weights
    from .pipelines import prepare_nets
    depthnet = load_weights(args.depthnet) if args.depthnet else None
    return prepare_nets(cloud, cameras, cfg, depthnet)


def cmd_transfer(args):
    from .dataio import load_checkpoint, load_scene, save_checkpoint
    from .pipelines import structure_digest, transfer
    cfg = _config(args)
    scene = load_scene(args.scene)
    cloud = load_checkpoint(args.cloud)
    pool = _load_pool(args, scene)
    cameras = [f.camera for f in scene.split("train")]
    nets = _nets(args, cfg, cloud, cameras)
    out = _out_dir(args, "transfer")
    run = transfer(cloud, pool, cameras, nets, cfg, out_dir=out, log_every=args.log_every)
    save_checkpoint(run.stylized, out / "stylized.ssgc",
                    {"phase": "transfer", "iteration": cfg.phase2.iterations, "seed": cfg.seed,
                     "config": cfg.digest()})
    run.write_history(out / "history.csv")
    (out / "timings.json").write_text(json.dumps(run.timings, indent=2) + "\n")
    last = run.history[-1]
    print(json.dumps({"final_total": last["total"], "structure_sha256": structure_digest(run.stylized)}))
    return EXIT_OK


def cmd_render(args):
    from .dataio import load_checkpoint, load_scene, save_depth, save_image
    from .rasterizer import depth_from_state, rasterize
    scene = load_scene(args.scene)
    cloud = load_checkpoint(args.cloud)
    out = _out_dir(args, "renders")
    for i, fr in enumerate(scene.frames):
        if args.split not in ("all", fr.split):
            continue
        state = rasterize(cloud, fr.camera)
        save_image(out / f"{i:04d}.png", np.clip(state.image, 0.0, 1.0))
        if args.depth:
            save_depth(out / f"{i:04d}.f32d", depth_from_state(state))
    print(out)
    return EXIT_OK


def cmd_eval(args):
    from .dataio import load_image_folder
    from .metrics import evaluate
    preds, pnames = load_image_folder(args.pred)
    targets, tnames = load_image_folder(args.target)
    common = sorted(set(pnames) & set(tnames))
    if not common:
        raise ValueError("no image names in common between the two folders")
    pmap, tmap = dict(zip(pnames, preds)), dict(zip(tnames, targets))
    report = evaluate([pmap[n] for n in common], [tmap[n] for n in common], common,
                      with_features=args.features)
    print(report.table())
    if args.out_dir:
        _out_dir(args, "").joinpath("metrics.json").write_text(report.to_json() + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import check_layers, check_losses, check_renderer
    seed = args.seed if args.seed is not None else 0
    suites = {"render": check_renderer, "layers": check_layers, "losses": check_losses}
    chosen = list(suites) if args.suite == "all" else [args.suite]
    results = [r for name in chosen for r in suites[name](seed)]
    for r in results:
        print(r)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_ablate(args):
    from .dataio import load_checkpoint, load_scene
    from .pipelines import ablation_matrix, ablation_table
    cfg = _config(args)
    scene = load_scene(args.scene)
    cloud = load_checkpoint(args.cloud)
    pool = _load_pool(args, scene)
    cameras = [f.camera for f in scene.split("train")]
    nets = _nets(args, cfg, cloud, cameras)
    rows = ablation_matrix(cloud, pool, cameras, nets, cfg)
    table = ablation_table(rows)
    print(table)
    out = _out_dir(args, "ablation")
    (out / "ablation.txt").write_text(table + "\n")
    for r in rows:
        r.run.write_history(out / f"history_{r.name.replace('/', '').replace(' ', '_').replace('+', '_')}.csv")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser():
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file overriding training defaults")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--threads", type=int, help="worker threads for rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="stylesplat", description="Two-phase stylized Gaussian splatting.",
                parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.set_defaults(config=None, seed=None, out_dir=None, threads=None, verbose=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    s.add_argument("--spec", choices=("tube", "sphere"), default="tube")
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--color-scheme", default="virtual")
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--focal", type=float, default=80.0)
    s.add_argument("--train-views", type=int, default=20)
    s.add_argument("--test-views", type=int, default=5)
    s.add_argument("--recolor", default=None, help="also write a 10-image recolored real pool")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("reconstruct", parents=[common], help="phase 1: fit a cloud to a scene")
    s.add_argument("--scene", required=True, help="manifest.json or its directory")
    s.add_argument("--init-checkpoint", help="seed point positions from this cloud")
    s.add_argument("--init-noise", type=float, default=0.05)
    s.add_argument("--init-points", type=int, default=200)
    s.add_argument("--near", type=float, default=1.0)
    s.add_argument("--far", type=float, default=5.0)
    s.add_argument("--log-every", type=int, default=0)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("train-depth", parents=[common], help="fit the depth network to renders")
    s.add_argument("--scene", required=True)
    s.add_argument("--cloud", required=True)
    s.set_defaults(func=cmd_train_depth)

    for name, func, helptext in (("transfer", cmd_transfer, "phase 2: appearance-only style transfer"),
                                 ("ablate", cmd_ablate, "loss ablation matrix")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--scene", required=True)
        s.add_argument("--cloud", required=True)
        s.add_argument("--pool", help="folder of real-domain PNGs (default: manifest real_pool)")
        s.add_argument("--depthnet", help="SSNW weights from train-depth (default: train now)")
        if name == "transfer":
            s.add_argument("--log-every", type=int, default=0)
        s.set_defaults(func=func)

    s = sub.add_parser("render", parents=[common], help="render a cloud at scene poses")
    s.add_argument("--scene", required=True)
    s.add_argument("--cloud", required=True)
    s.add_argument("--split", choices=("train", "test", "all"), default="all")
    s.add_argument("--depth", action="store_true", help="also write f32d depth maps")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM between two image folders")
    s.add_argument("--pred", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--features", action="store_true", help="also report the feature distance")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    s.add_argument("--suite", choices=("all", "render", "layers", "losses"), default="all")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    from .dataio import SceneError
    from .pipelines import NumericalError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        set_num_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stylesplat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"stylesplat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SceneError as exc:
        print("stylesplat: invalid scene:", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, ValueError, KeyError, TypeError) as exc:
        print(f"stylesplat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
