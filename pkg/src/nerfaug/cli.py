"""Command-line entry point: ``nerfaug <group> <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 I/O error.
Diagnostics go to stderr; ``--json`` puts one JSON document on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import imageio
from . import scene as S
from .field import FieldFormatError, VoxelRadianceField, load_field, save_field
from .geometry import PinholeCamera, PoseError, Se3Pose, camera_to_object_at, look_at
from .parallel import default_threads
from .pipeline import (AugmentConfig, NoiseConfig, TrajectoryError, augment_trajectory, evaluate_augmentation,
                       read_trajectory, write_trajectory)
from .render import RenderConfig, opacity_to_mask, render_image
from .segment import iou
from .train import (DatasetError, TrainConfig, evaluate_psnr, read_dataset, split_holdout, train_field,
                    write_dataset)

log = logging.getLogger("nerfaug")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- benchmark -----------------------------------------------------------------


def bench_render(field: VoxelRadianceField, cam: PinholeCamera, n_frames: int, threads=None,
                 samples_per_ray: int = 128, thread_counts=None) -> dict:
    """Wall-clock throughput of ``render_image`` over ``n_frames`` orbit poses.

    With ``thread_counts`` the run is repeated per count, and outputs are
    checked to be bitwise identical across counts.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    threads = default_threads() if threads is None else threads
    center = 0.5 * (field.bbox_min + field.bbox_max)
    radius = 1.5 * float(np.max(field.bbox_max - field.bbox_min))
    poses = []
    for k in range(n_frames):
        az = 2 * np.pi * k / n_frames
        eye = center + radius * np.array([np.cos(az) * 0.8, np.sin(az) * 0.8, 0.6])
        poses.append(look_at(eye, center))
    rcfg = RenderConfig(samples_per_ray=samples_per_ray, t_near=0.05, t_far=3.0 * radius)

    def run(n_threads):
        render_image(field, cam, poses[0], rcfg, threads=n_threads)  # warm-up, also compiles
        t0 = time.perf_counter()
        outs = [render_image(field, cam, p, rcfg, threads=n_threads) for p in poses]
        return time.perf_counter() - t0, outs

    counts = sorted(set(thread_counts or [])) or [threads]
    if threads not in counts:
        counts.append(threads)
    curve, reference, identical = [], None, True
    for n in counts:
        wall, outs = run(n)
        ms = 1000.0 * wall / n_frames
        curve.append({"threads": n, "ms_per_frame": ms, "frames_per_second": 1000.0 / ms})
        if reference is None:
            reference = outs
        else:
            identical &= all(np.array_equal(a.rgb, b.rgb) and np.array_equal(a.opacity, b.opacity)
                             for a, b in zip(reference, outs))
    main = next(c for c in curve if c["threads"] == threads)
    base = curve[0]["ms_per_frame"]
    for c in curve:
        c["speedup_vs_first"] = base / c["ms_per_frame"]
    return {
        "schema_version": SCHEMA_VERSION,
        "frames_per_second": main["frames_per_second"],
        "ms_per_frame": main["ms_per_frame"],
        "threads": threads,
        "hardware_threads": default_threads(),
        "n_frames": n_frames,
        "grid_resolution": list(field.resolution),
        "samples_per_ray": samples_per_ray,
        "image_size": [cam.width, cam.height],
        "thread_scaling": curve,
        "bitwise_identical_across_threads": bool(identical),
    }


def bench_field(resolution: int = 64) -> VoxelRadianceField:
    """A 64^3 sphere-like field used when no field file is given."""
    f = VoxelRadianceField.filled(resolution, (-0.15,) * 3, (0.15,) * 3)
    idx = np.indices((resolution,) * 3).transpose(1, 2, 3, 0)
    pts = -0.15 + idx * (0.3 / (resolution - 1))
    inside = np.linalg.norm(pts, axis=-1) < 0.1
    f.raw_density[inside] = 200.0
    f.raw_rgb[inside] = (1.5, -0.5, -1.0)
    return f


# --- helpers -------------------------------------------------------------------


def _emit(args, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    if args.json:
        sys.stdout.write(json.dumps(payload) + "\n")
    else:
        for k, v in payload.items():
            if k != "schema_version" and not isinstance(v, (list, dict)):
                print(f"{k}: {v}", file=sys.stderr)


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required flag(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _camera(args) -> PinholeCamera:
    return PinholeCamera.from_fov(args.size, args.size, args.fov)


def _scene(args) -> S.AnalyticScene:
    if getattr(args, "scene", None):
        return S.load_scene(args.scene)
    return S.preset(args.preset)


def _load_pose(path) -> Se3Pose:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("camera_to_world", data.get("pose"))
    return Se3Pose.from_list(np.asarray(data, dtype=float).ravel())


# --- commands ------------------------------------------------------------------


def cmd_scene_gen(args):
    _need(args, "out")
    sc = _scene(args)
    if args.without_object:
        center = tuple(sc.centroid(S.OBJECT))
        sc = sc.without(S.OBJECT)
    else:
        center = None
    orbit = S.Orbit(tuple(args.radii), tuple(args.elevations), center, args.azimuth_jitter)
    ds = S.generate_posed_dataset(sc, _camera(args), args.views, orbit, args.seed)
    write_dataset(ds, args.out)
    _emit(args, {"command": "scene gen", "out": str(args.out), "frames": len(ds)})


def cmd_scene_demo(args):
    _need(args, "out")
    sc = _scene(args)
    if args.spec:
        spec = S.DemoSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = S.default_demo_spec(args.timesteps, args.t_grasp)
    traj = S.generate_demo_trajectory(sc, spec, _camera(args))
    write_trajectory(traj, args.out)
    _emit(args, {"command": "scene demo", "out": str(args.out), "steps": len(traj), "t_grasp": traj.t_grasp})


def cmd_field_train(args):
    _need(args, "data", "out")
    ds = read_dataset(args.data)
    bbox = (args.bbox[:3], args.bbox[3:])
    cfg = TrainConfig(iterations=args.iters, rays_per_batch=args.batch, learning_rate=args.lr,
                      tv_weight=args.tv_weight, seed=args.seed, holdout_fraction=args.holdout_fraction,
                      samples_per_ray=args.samples, checkpoint_every=args.checkpoint_every,
                      threads=args.threads)
    fld, report = train_field(ds, bbox, args.res, cfg,
                              progress=lambda e: log.info("iter %d  holdout %.2f dB", e["iteration"],
                                                          e["holdout_psnr_db"]))
    save_field(fld, args.out)
    if args.report:
        report.write_jsonl(args.report)
    _emit(args, {"command": "field train", "out": str(args.out), "holdout_psnr_db": report.final_psnr,
                 "holdout_frames": report.holdout_frames, "checkpoints": report.checkpoints})


def cmd_field_render(args):
    _need(args, "field", "out")
    fld = load_field(args.field)
    if args.data is not None:
        ds = read_dataset(args.data)
        cam, pose = ds.cam, ds.frames[args.index].camera_to_world
    elif args.pose is not None:
        cam, pose = _camera(args), _load_pose(args.pose)
    else:
        raise UsageError("field render needs --data/--index or --pose")
    rcfg = RenderConfig(samples_per_ray=args.samples, t_near=args.t_near, t_far=args.t_far)
    out = render_image(fld, cam, pose, rcfg, threads=args.threads)
    imageio.write_rgb(args.out, out.rgb)
    if args.mask_out:
        imageio.write_gray(args.mask_out, opacity_to_mask(out.opacity, args.tau))
    _emit(args, {"command": "field render", "out": str(args.out), "mean_opacity": float(out.opacity.mean())})


def cmd_augment_run(args):
    _need(args, "demo", "object_field", "background_field", "out")
    demo = read_trajectory(args.demo)
    obj = load_field(args.object_field)
    bg = load_field(args.background_field)
    rcfg = RenderConfig(samples_per_ray=args.samples)
    cfg = AugmentConfig(
        tau=args.tau,
        noise=NoiseConfig(args.noise_mode, args.sigma_rot, args.sigma_trans, args.noise_seed),
        render=rcfg, background_render=rcfg,
        seg_threshold=args.seg_threshold, min_blob=args.min_blob, dilation=args.dilation,
        output_size=tuple(args.output_size) if args.output_size else None,
        soft_blend=args.soft, use_ground_truth_masks=not args.segment, threads=args.threads)
    out = augment_trajectory(demo, obj, bg, cfg)
    write_trajectory(out, args.out)
    _emit(args, {"command": "augment run", "out": str(args.out), "steps": len(out)})


def cmd_eval_psnr(args):
    if args.produced is not None or args.oracle is not None:
        _need(args, "produced", "oracle")
        report = evaluate_augmentation(read_trajectory(args.produced), read_trajectory(args.oracle))
        _emit(args, {"command": "eval psnr", "psnr_db": report["mean_psnr_db"], **report})
        return
    _need(args, "field", "data")
    fld = load_field(args.field)
    ds = read_dataset(args.data)
    if args.holdout:
        _, idx = split_holdout(len(ds), args.holdout_fraction, args.seed)
    else:
        idx = np.arange(len(ds))
    rcfg = RenderConfig(samples_per_ray=args.samples)
    value = evaluate_psnr(fld, ds, idx, rcfg, args.threads)
    _emit(args, {"command": "eval psnr", "psnr_db": value, "frames": [int(i) for i in idx]})


def cmd_eval_iou(args):
    if args.a is not None or args.b is not None:
        _need(args, "a", "b")
        value = iou(imageio.read_gray(args.a), imageio.read_gray(args.b))
        _emit(args, {"command": "eval iou", "iou": value})
        return
    _need(args, "produced", "oracle")
    report = evaluate_augmentation(read_trajectory(args.produced), read_trajectory(args.oracle))
    if "mean_iou" not in report:
        raise TrajectoryError("both trajectories need masks for an IoU report")
    _emit(args, {"command": "eval iou", "iou": report["mean_iou"],
                 "frames": [{"index": f["index"], "iou": f["iou"]} for f in report["frames"]]})


def cmd_eval_pose(args):
    """Pose-chain report: per-step camera-in-object poses and the post-grasp freeze residual."""
    _need(args, "demo")
    traj = read_trajectory(args.demo)
    poses = traj.gripper_poses
    chain = [camera_to_object_at(poses, traj.object_to_world, traj.camera_offset, t, traj.t_grasp)
             for t in range(len(traj))]
    frozen = chain[traj.t_grasp].as_matrix()
    residual = max(float(np.max(np.abs(c.as_matrix() - frozen))) for c in chain[traj.t_grasp:])
    payload = {"command": "eval pose", "t_grasp": traj.t_grasp, "steps": len(traj),
               "post_grasp_freeze_residual": residual,
               "camera_to_object": [c.to_list() for c in chain]}
    if args.against is not None:
        other = read_trajectory(args.against)
        if len(other) != len(traj):
            raise TrajectoryError(f"length mismatch: {len(traj)} vs {len(other)}")
        payload["max_gripper_pose_diff"] = max(
            float(np.max(np.abs(a.as_matrix() - b.as_matrix()))) for a, b in zip(poses, other.gripper_poses))
        payload["actions_identical"] = bool(np.array_equal(traj.actions, other.actions))
    _emit(args, payload)


def cmd_bench_render(args):
    fld = load_field(args.field) if args.field else bench_field(64)
    cam = PinholeCamera.from_fov(args.size, args.size, args.fov)
    counts = [int(x) for x in args.thread_counts.split(",")] if args.thread_counts else None
    report = bench_render(fld, cam, args.frames, args.threads, args.samples, counts)
    _emit(args, {"command": "bench render", **report})


# --- parser --------------------------------------------------------------------


def _common(p, camera=False):
    p.add_argument("--json", action="store_true", help="print one JSON document on stdout")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all hardware threads)")
    p.add_argument("--config", type=str, default=None, help="JSON file of flag defaults")
    p.add_argument("--verbose", action="store_true")
    if camera:
        p.add_argument("--size", type=int, default=128, help="square image side in pixels")
        p.add_argument("--fov", type=float, default=60.0, help="horizontal field of view, degrees")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="nerfaug", description=__doc__.splitlines()[0])
    groups = root.add_subparsers(dest="group", parser_class=_Parser)

    scene = groups.add_parser("scene").add_subparsers(dest="command", parser_class=_Parser)
    p = scene.add_parser("gen", help="render a posed dataset of an analytic scene")
    _common(p, camera=True)
    p.add_argument("--preset", default="sphere")
    p.add_argument("--scene", default=None, help="scene JSON, overrides --preset")
    p.add_argument("--views", type=int, default=24)
    p.add_argument("--radii", type=float, nargs="+", default=[0.5])
    p.add_argument("--elevations", type=float, nargs="+", default=[20.0, 45.0, 70.0])
    p.add_argument("--azimuth-jitter", type=float, default=0.0)
    p.add_argument("--without-object", action="store_true", help="drop the object group (background dataset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scene_gen)

    p = scene.add_parser("demo", help="record a synthetic demonstration trajectory")
    _common(p, camera=True)
    p.add_argument("--preset", default="workspace")
    p.add_argument("--scene", default=None)
    p.add_argument("--spec", default=None, help="demo spec JSON (waypoints as 16-number row-major lists)")
    p.add_argument("--timesteps", type=int, default=25)
    p.add_argument("--t-grasp", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scene_demo)

    field = groups.add_parser("field").add_subparsers(dest="command", parser_class=_Parser)
    p = field.add_parser("train", help="fit a voxel field to a posed dataset")
    _common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--iters", type=int, default=4000)
    p.add_argument("--bbox", type=float, nargs=6, default=[-0.15, -0.15, -0.15, 0.15, 0.15, 0.15],
                   metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"))
    p.add_argument("--batch", type=int, default=4096)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--tv-weight", type=float, default=TrainConfig.tv_weight)
    p.add_argument("--samples", type=int, default=TrainConfig.samples_per_ray)
    p.add_argument("--holdout-fraction", type=float, default=TrainConfig.holdout_fraction)
    p.add_argument("--checkpoint-every", type=int, default=TrainConfig.checkpoint_every)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write checkpoint history as JSON lines")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_field_train)

    p = field.add_parser("render", help="render a field to PNG")
    _common(p, camera=True)
    p.add_argument("--field", default=None)
    p.add_argument("--data", default=None, help="take camera and pose from this dataset")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--pose", default=None, help="JSON with 16 row-major numbers (camera to world)")
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--t-near", type=float, default=0.05)
    p.add_argument("--t-far", type=float, default=3.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--mask-out", default=None, help="also write the thresholded opacity mask")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_field_render)

    aug = groups.add_parser("augment").add_subparsers(dest="command", parser_class=_Parser)
    p = aug.add_parser("run", help="swap the demo's object for the one in --object-field")
    _common(p)
    p.add_argument("--demo", default=None)
    p.add_argument("--object-field", default=None)
    p.add_argument("--background-field", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--noise-mode", choices=["per-trajectory", "per-timestep"], default="per-trajectory")
    p.add_argument("--sigma-rot", type=float, default=0.0, help="radians")
    p.add_argument("--sigma-trans", type=float, default=0.0, help="meters")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--seg-threshold", type=float, default=0.05)
    p.add_argument("--min-blob", type=int, default=8)
    p.add_argument("--dilation", type=int, default=1)
    p.add_argument("--output-size", type=int, nargs=2, default=[128, 128], metavar=("W", "H"))
    p.add_argument("--soft", action="store_true", help="blend with soft opacity instead of the hard mask")
    p.add_argument("--segment", action="store_true",
                   help="segment the original object against the background field even if masks exist")
    p.set_defaults(func=cmd_augment_run)

    ev = groups.add_parser("eval").add_subparsers(dest="command", parser_class=_Parser)
    p = ev.add_parser("psnr", help="field vs dataset, or trajectory vs oracle trajectory")
    _common(p)
    p.add_argument("--field", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--holdout", action="store_true", help="only the frames train_field held out")
    p.add_argument("--holdout-fraction", type=float, default=TrainConfig.holdout_fraction)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--produced", default=None)
    p.add_argument("--oracle", default=None)
    p.set_defaults(func=cmd_eval_psnr)

    p = ev.add_parser("iou", help="two mask PNGs, or the masks of two trajectories")
    _common(p)
    p.add_argument("--a", default=None)
    p.add_argument("--b", default=None)
    p.add_argument("--produced", default=None)
    p.add_argument("--oracle", default=None)
    p.set_defaults(func=cmd_eval_iou)

    p = ev.add_parser("pose", help="pose chain of a trajectory")
    _common(p)
    p.add_argument("--demo", default=None)
    p.add_argument("--against", default=None, help="check gripper poses and actions against this trajectory")
    p.set_defaults(func=cmd_eval_pose)

    bench = groups.add_parser("bench").add_subparsers(dest="command", parser_class=_Parser)
    p = bench.add_parser("render", help="render throughput and thread scaling")
    _common(p)
    p.add_argument("--field", default=None, help="field file (default: a built-in 64^3 sphere)")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--fov", type=float, default=50.0)
    p.add_argument("--thread-counts", default=None, help="comma-separated, e.g. 1,2,4,8")
    p.set_defaults(func=cmd_bench_render)
    return root


def _subparser(parser, group, command):
    for action in parser._subparsers._group_actions:
        sub = action.choices.get(group)
        for a in sub._subparsers._group_actions:
            return a.choices.get(command)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        raise UsageError("expected <group> <command>; try --help")
    if args.config:
        # config values become defaults, so explicit flags still win
        cfg = json.loads(Path(args.config).read_text())
        sub = _subparser(parser, args.group, args.command)
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"nerfaug: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except json.JSONDecodeError as e:
        print(f"nerfaug: bad config file: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"nerfaug: cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"nerfaug: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FieldFormatError, TrajectoryError, DatasetError, PoseError, KeyError, ValueError, IndexError) as e:
        print(f"nerfaug: invalid data: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"nerfaug: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
