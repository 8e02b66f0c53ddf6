"""Command-line entry point.

Subcommands: synth, ingest-validate, render-lidar, train-painter, paint,
train, eval. Exit codes: 0 success, 1 validation/usage errors, 2 runtime
errors. `--threads` (or LIDARPAINT_THREADS) caps BLAS worker counts; the
cap is applied before numpy loads, so this module and the package root
import no numeric code at module scope.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _requested_threads(argv) -> str:
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--threads="):
            return arg.split("=", 1)[1]
    return os.environ.get("LIDARPAINT_THREADS", "1")


def _apply_thread_cap(argv) -> None:
    raw = _requested_threads(argv)
    try:
        n = max(int(raw), 1)
    except ValueError:
        return  # argparse will report the bad value
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (default 1; env LIDARPAINT_THREADS)")
    common.add_argument("--overwrite", action="store_true",
                        help="allow replacing existing outputs")

    parser = _Parser(prog="lidarpaint",
                     description="LiDAR-conditioned scene reconstruction pipeline")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                              parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic ground-truth bundle")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("ingest-validate", parents=[common],
                       help="load a bundle and run all validation")
    p.add_argument("--bundle", required=True)

    p = sub.add_parser("render-lidar", parents=[common],
                       help="write the LiDAR intensity/depth/condition images")
    p.add_argument("--bundle", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True, help="intensity PPM path")
    p.add_argument("--depth-out", help="raw <f4 depth path (default OUT.depth.f32)")
    p.add_argument("--condition-out", help="optional 3-channel network-input PPM")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--splat-radius", type=int, default=1)

    p = sub.add_parser("train-painter", parents=[common],
                       help="train the one-step painter on corrupted pairs")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output .lpm checkpoint")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=4)

    p = sub.add_parser("paint", parents=[common],
                       help="repair one artifact image")
    p.add_argument("--model", required=True)
    p.add_argument("--artifact", required=True)
    p.add_argument("--lidar", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common],
                       help="reconstruct a scene with painted guidance")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--painter", help=".lpm checkpoint; omitted = identity painter")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", parents=[common],
                       help="PSNR/SSIM/L1 between two images, as JSON")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    return parser


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _print_json(obj) -> None:
    def clean(v):
        if isinstance(v, float) and not (v == v and abs(v) != float("inf")):
            return None
        return v
    print(json.dumps({k: clean(v) for k, v in obj.items()}, sort_keys=True))


def _ensure_dir_output(path, overwrite) -> None:
    if os.path.exists(path) and not overwrite:
        raise ValueError(f"output {path} exists; pass --overwrite to replace it")
    os.makedirs(path, exist_ok=True)


def _cmd_synth(args) -> int:
    from .synth import SynthConfig, write_generated

    fields = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        fields["seed"] = args.seed
    if "holdout_offsets" in fields:
        fields["holdout_offsets"] = tuple(tuple(o) for o in fields["holdout_offsets"])
    cfg = SynthConfig(**fields)
    _ensure_dir_output(args.out, args.overwrite)
    write_generated(args.out, cfg)
    _print_json({"bundle": args.out, "frames": cfg.frames, "actors": cfg.actors,
                 "holdout_views": len(cfg.holdout_offsets) * cfg.frames})
    return 0


def _cmd_ingest_validate(args) -> int:
    from .scene_data import load_bundle

    bundle = load_bundle(args.bundle)
    points = int(sum(f.points.shape[0] for f in bundle.lidar))
    _print_json({"ok": True, "frames": bundle.frame_count,
                 "actors": bundle.actor_count, "boxes": len(bundle.boxes),
                 "lidar_points": points})
    return 0


def _cmd_render_lidar(args) -> int:
    import numpy as np

    from .image_io import ensure_output, write_f32, write_ppm
    from .lidar_raster import condition_image, render_lidar_image
    from .scene_data import load_bundle

    bundle = load_bundle(args.bundle)
    if not 0 <= args.frame < bundle.frame_count:
        raise ValueError(f"frame {args.frame} outside 0..{bundle.frame_count - 1}")
    depth_out = args.depth_out or os.path.splitext(args.out)[0] + ".depth.f32"
    ensure_output(args.out, args.overwrite)
    ensure_output(depth_out, args.overwrite)
    lidar = render_lidar_image(bundle, args.frame, bundle.cameras[args.frame],
                               window=args.window, splat_radius=args.splat_radius)
    write_ppm(args.out, np.repeat(lidar.intensity[:, :, None], 3, axis=2))
    write_f32(depth_out, lidar.depth)
    if args.condition_out:
        ensure_output(args.condition_out, args.overwrite)
        write_ppm(args.condition_out, condition_image(lidar))
    _print_json({"out": args.out, "depth_out": depth_out, "frame": args.frame,
                 "valid_pixels": int(lidar.validity().sum())})
    return 0


def _painter_dataset(bundle, seed):
    from .lidar_raster import condition_image, render_lidar_image
    from .synth import corrupt

    severities = (0.4, 0.55, 0.7, 0.85)
    dataset = []
    for i in range(bundle.frame_count):
        target = bundle.image(i)
        cond = condition_image(render_lidar_image(bundle, i, bundle.cameras[i]))
        for k, severity in enumerate(severities):
            artifact = corrupt(target, seed * 1000 + i * 10 + k, severity)
            dataset.append((artifact, cond, target))
    return dataset


def _cmd_train_painter(args) -> int:
    from .fusion_net import PainterModel, save_painter, train_painter
    from .image_io import ensure_output
    from .scene_data import load_bundle

    bundle = load_bundle(args.bundle)
    ensure_output(args.out, args.overwrite)
    dataset = _painter_dataset(bundle, args.seed)
    model = PainterModel.build(seed=args.seed)
    trace = train_painter(model, dataset, args.steps, batch_size=args.batch,
                          seed=args.seed)
    save_painter(args.out, model)
    _print_json({"out": args.out, "steps": args.steps, "pairs": len(dataset),
                 "initial_loss": trace[0] if trace else None,
                 "final_loss": trace[-1] if trace else None})
    return 0


def _cmd_paint(args) -> int:
    from .fusion_net import load_painter, paint
    from .image_io import ensure_output, read_ppm, write_ppm

    model = load_painter(args.model)
    artifact = read_ppm(args.artifact)
    lidar = read_ppm(args.lidar)
    ensure_output(args.out, args.overwrite)
    write_ppm(args.out, paint(model, artifact, lidar))
    _print_json({"out": args.out})
    return 0


def _cmd_train(args) -> int:
    from .fusion_net import load_painter
    from .gaussian_scene import init_from_bundle, save_scene
    from .scene_data import load_bundle
    from .trainer import TrainConfig, run_rounds

    fields = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        fields["seed"] = args.seed
    if "offsets" in fields:
        fields["offsets"] = tuple(tuple(o) for o in fields["offsets"])
    cfg = TrainConfig(**fields)
    bundle = load_bundle(args.bundle)
    painter = load_painter(args.painter) if args.painter else None
    _ensure_dir_output(args.out, args.overwrite)
    scene = init_from_bundle(bundle, seed=cfg.seed)
    scene, trainer = run_rounds(scene, bundle, painter, cfg, out_dir=args.out)
    save_scene(os.path.join(args.out, "scene.gsb"), scene)
    last = trainer.metrics[-1] if trainer.metrics else {}
    _print_json({"out": args.out, "iterations": trainer.iteration,
                 "rounds": cfg.rounds, "gaussians": scene.total_count(),
                 "final_loss": last.get("loss"), "final_psnr": last.get("psnr")})
    return 0


def _cmd_eval(args) -> int:
    from .image_io import read_ppm
    from .losses import image_metrics

    _print_json(image_metrics(read_ppm(args.a), read_ppm(args.b)))
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "ingest-validate": _cmd_ingest_validate,
    "render-lidar": _cmd_render_lidar,
    "train-painter": _cmd_train_painter,
    "paint": _cmd_paint,
    "train": _cmd_train,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except ValueError as exc:
        print(f"lidarpaint {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"lidarpaint {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
