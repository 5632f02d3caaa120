"""Command-line entry point wiring the pipeline end to end.

Exit codes: 0 success, 1 flag/input validation error, 2 runtime error.
All randomness derives from --seed, so any fixed-seed pipeline run is
byte-reproducible artifact by artifact.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import errors
from .data import (
    SyntheticSpec,
    gen_synthetic,
    ordered_map,
    procedural_teacher,
    read_manifest,
    teacher_projection,
    write_tkd,
)
from .distill import (
    DistillConfig,
    DistillMode,
    EmptyViewPolicy,
    ViewSchedule,
    evaluate,
    load_dataset,
    make_pipeline_loss,
    train,
    write_metrics,
)
from .geometry import (
    CameraPose,
    make_classification_rig,
    make_reduced_rig,
    make_segmentation_rig,
    normalize_cloud,
    read_rig,
    read_xyz,
    write_rig,
)
from .render import Shading, SplatConfig, render_splat, write_ppm
from .tape import grad_check, load_checkpoint, save_checkpoint
from .visibility import compute_rig_masks, write_masks

RIG_PRESETS = {
    "classification": make_classification_rig,
    "segmentation": make_segmentation_rig,
    "redu6": lambda: make_reduced_rig(6),
    "redu4": lambda: make_reduced_rig(4),
}


class CliError(Exception):
    """Input validation failure: exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_rig(value: str):
    if value in RIG_PRESETS:
        return RIG_PRESETS[value]()
    path = Path(value)
    if not path.exists():
        raise CliError(f"--rig {value!r} is neither a preset {sorted(RIG_PRESETS)} nor a file")
    return read_rig(path)


def _require_file(path, flag: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{flag}: no such file: {p}")
    return p


def _splat_config(args) -> SplatConfig:
    try:
        return SplatConfig(
            image_size=args.size,
            splat_radius=args.splat_radius,
            field_of_view=args.fov,
            background=args.background,
            shading=Shading(args.shading),
        )
    except ValueError as exc:
        raise CliError(str(exc))


def _add_splat_flags(sub, size=224, splat_radius=2, fov=0.6):
    sub.add_argument("--size", type=int, default=size, help="square image size in pixels")
    sub.add_argument("--splat-radius", type=int, default=splat_radius, help="splat disc radius in pixels")
    sub.add_argument("--fov", type=float, default=fov, help="field of view in radians")
    sub.add_argument("--background", type=int, default=255, help="background intensity 0..255")
    sub.add_argument(
        "--shading", choices=[s.value for s in Shading], default="depth",
        help="constant silhouette or depth-mapped intensity",
    )


def cmd_gen(args) -> int:
    classes = tuple(c.strip() for c in args.classes.split(",") if c.strip())
    try:
        spec = SyntheticSpec(
            classes=classes, per_class=args.per_class, points=args.points,
            jitter=args.jitter, seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(str(exc))
    manifest = gen_synthetic(spec, args.out)
    print(f"wrote {len(manifest)} clouds to {args.out}")
    return 0


def cmd_rig(args) -> int:
    if args.preset not in RIG_PRESETS:
        raise CliError(f"unknown preset {args.preset!r}; choose from {sorted(RIG_PRESETS)}")
    write_rig(RIG_PRESETS[args.preset](), args.out)
    print(f"wrote rig {args.preset} to {args.out}")
    return 0


def cmd_visible(args) -> int:
    cloud = normalize_cloud(read_xyz(_require_file(args.cloud, "--cloud")))
    rig = _resolve_rig(args.rig)
    masks = compute_rig_masks(cloud, rig, args.flip_factor)
    write_masks(masks, args.out)
    counts = ",".join(str(len(m)) for m in masks)
    print(f"wrote {len(masks)} masks ({counts} visible) to {args.out}")
    return 0


def cmd_render(args) -> int:
    cloud = normalize_cloud(read_xyz(_require_file(args.cloud, "--cloud")))
    config = _splat_config(args)
    if args.rig is not None:
        rig = _resolve_rig(args.rig)
        if not 0 <= args.view < len(rig):
            raise CliError(f"--view {args.view} out of range for a {len(rig)}-view rig")
        pose = rig.poses[args.view]
    else:
        try:
            pose = CameraPose(args.azimuth, args.elevation, args.distance)
        except ValueError as exc:
            raise CliError(str(exc))
    mask = None
    if args.visible_only:
        mask = compute_rig_masks(cloud, make_single_view_rig(pose), args.flip_factor)[0]
    image = render_splat(cloud, pose, config, visible_only=args.visible_only, mask=mask)
    write_ppm(image, args.out)
    print(f"wrote {image.width}x{image.height} render to {args.out}")
    return 0


def make_single_view_rig(pose: CameraPose):
    from .geometry import ViewRig

    return ViewRig((pose,))


def cmd_teacher_proc(args) -> int:
    manifest_path = _require_file(args.manifest, "--manifest")
    manifest = read_manifest(manifest_path)
    rig = _resolve_rig(args.rig)
    config = _splat_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    root = manifest_path.parent
    projection = teacher_projection(args.ct, args.seed)

    def export(entry):
        rel, _ = entry
        cloud = normalize_cloud(read_xyz(root / rel))
        sid = Path(rel).stem
        masks = compute_rig_masks(cloud, rig, args.flip_factor)
        tk = procedural_teacher(
            cloud, rig, args.ct, args.seed, config, shape_id=sid, masks=masks,
            logits_classes=len(manifest.class_names) if args.logits else None,
            projection=projection,
        )
        write_tkd(tk, out / f"{sid}.tkd")
        write_masks(masks, out / f"{sid}.mvmk")
        return sid

    sids = ordered_map(export, manifest.entries, args.threads)
    print(f"wrote {len(sids)} teacher files to {out}")
    return 0


def _distill_config(args, mode: DistillMode) -> DistillConfig:
    return DistillConfig(
        mode=mode,
        omega_task=args.wt,
        omega_dist=args.wd,
        view_schedule=ViewSchedule(args.views),
        empty_view_policy=(
            EmptyViewPolicy.GLOBAL_FALLBACK if args.empty_view == "fallback"
            else EmptyViewPolicy.SKIP_RENORMALIZE
        ),
        normalize_descriptors=args.normalize_descriptors,
    )


def cmd_train(args) -> int:
    manifest_path = _require_file(args.manifest, "--manifest")
    manifest = read_manifest(manifest_path)
    rig = _resolve_rig(args.rig)
    try:
        mode = DistillMode(args.mode)
    except ValueError:
        raise CliError(f"unknown mode {args.mode!r}")
    if mode is not DistillMode.NONE and args.teacher is None:
        raise CliError(f"--teacher is required for mode {mode.value}")
    if args.wt < 0 or (args.wd is not None and args.wd < 0):
        raise CliError("loss weights must be non-negative")
    cfg = _distill_config(args, mode)
    shapes = load_dataset(
        manifest,
        manifest_path.parent,
        rig,
        args.teacher,
        need_teacher=mode is not DistillMode.NONE,
        need_masks=mode is DistillMode.VAFP,
        flip_factor=args.flip_factor,
    )
    result = train(
        shapes,
        rig,
        cfg,
        num_classes=len(manifest.class_names),
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        log=sys.stderr if args.verbose else None,
    )
    save_checkpoint(result.store, args.out)
    if args.metrics is not None:
        write_metrics(result.metrics, args.metrics)
    last = result.metrics[-1]
    print(
        f"trained {args.epochs} epochs: task={last.task_loss:.6f} "
        f"dist={last.dist_loss:.6f} acc={last.train_acc:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    ckpt = _require_file(args.checkpoint, "--checkpoint")
    manifest_path = _require_file(args.manifest, "--manifest")
    manifest = read_manifest(manifest_path)
    store = load_checkpoint(ckpt)
    shapes = load_dataset(manifest, manifest_path.parent)
    acc = evaluate(store, shapes)
    print(f"accuracy {acc:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    loss_fn, store = make_pipeline_loss(
        seed=args.seed, n_clouds=args.clouds, n_points=args.points,
        num_classes=args.classes, k_views=args.views, c_t=args.ct,
    )
    report = grad_check(
        loss_fn, store, h=args.h, tolerance=args.tolerance,
        samples_per_tensor=args.samples, seed=args.seed,
    )
    for line in report.lines():
        print(line)
    return 0 if report.passed else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="mvdistill", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=7, help="master random seed")
    common.add_argument("--threads", type=int, default=1, help="workers for per-shape stages")
    common.add_argument("--verbose", action="store_true", help="progress logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default="sphere,cube,cylinder,cone")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--jitter", type=float, default=0.01)
    p.set_defaults(fn=cmd_gen)

    p = add_parser("rig", help="write a rig preset to a file")
    p.add_argument("--preset", required=True, choices=sorted(RIG_PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rig)

    p = add_parser("visible", help="hidden-point-removal masks for a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--rig", default="classification")
    p.add_argument("--flip-factor", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_visible)

    p = add_parser("render", help="splat-render a cloud to a PPM image")
    p.add_argument("--cloud", required=True)
    p.add_argument("--rig", default=None, help="rig preset or file (with --view)")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--azimuth", type=float, default=0.5)
    p.add_argument("--elevation", type=float, default=0.5235987755982988)
    p.add_argument("--distance", type=float, default=2.2)
    p.add_argument("--visible-only", action="store_true")
    p.add_argument("--flip-factor", type=float, default=100.0)
    p.add_argument("--out", required=True)
    _add_splat_flags(p)
    p.set_defaults(fn=cmd_render)

    p = add_parser("teacher-proc", help="export procedural teacher knowledge")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rig", default="classification")
    p.add_argument("--ct", type=int, default=64, help="descriptor channels")
    p.add_argument("--flip-factor", type=float, default=100.0)
    p.add_argument("--logits", action="store_true", help="also emit deterministic logits")
    p.add_argument("--out", required=True)
    # teacher framing: wide fov + fat splats give solid silhouettes
    _add_splat_flags(p, size=112, splat_radius=6, fov=1.0)
    p.set_defaults(fn=cmd_teacher_proc)

    p = add_parser("train", help="train the point encoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--teacher", default=None)
    p.add_argument("--rig", default="classification")
    p.add_argument("--mode", default="vafp", choices=[m.value for m in DistillMode])
    p.add_argument("--views", default="all", choices=[s.value for s in ViewSchedule])
    p.add_argument("--empty-view", default="skip", choices=["skip", "fallback"])
    p.add_argument("--wt", type=float, default=0.1, help="task loss weight")
    p.add_argument("--wd", type=float, default=None, help="distill weight (default 1/K)")
    p.add_argument("--normalize-descriptors", action="store_true")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--flip-factor", type=float, default=100.0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="per-epoch metrics log path")
    p.set_defaults(fn=cmd_train)

    p = add_parser("eval", help="overall accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_eval)

    p = add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--clouds", type=int, default=4)
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--ct", type=int, default=16)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=200)
    # default batch seed 42: a generic point where no central difference
    # straddles a ReLU/max/L1 kink at the default h
    p.set_defaults(fn=cmd_gradcheck, seed=42)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"mvdistill: {exc}", file=sys.stderr)
        return 1
    except errors.ParseError as exc:
        print(f"mvdistill: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # invalid pose/config values loaded from user files
        print(f"mvdistill: {exc}", file=sys.stderr)
        return 1
    except errors.MvdError as exc:
        print(f"mvdistill: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mvdistill: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
