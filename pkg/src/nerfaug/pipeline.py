"""Trajectories, their on-disk layout, and the augmentation chain that swaps in a novel object."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import imageio
from .composite import blend, inpaint_background
from .field import VoxelRadianceField
from .geometry import (PinholeCamera, Se3Pose, camera_to_object_at, camera_to_world, compose,
                       sample_pose_noise)
from .render import RenderConfig, opacity_to_mask, render_image, render_pixels
from .segment import dilate_mask, iou, segment_by_background
from .train import PSNR_CAP_DB, psnr

log = logging.getLogger(__name__)

TRAJECTORY_SCHEMA_VERSION = 1
ACTION_COLUMNS = ["dx", "dy", "dz", "droll", "dpitch", "dyaw", "grip"]


class TrajectoryError(ValueError):
    pass


class SchemaVersionError(TrajectoryError):
    pass


class FrameCountError(TrajectoryError):
    pass


class MissingFileError(TrajectoryError, FileNotFoundError):
    pass


@dataclass
class Step:
    frame: np.ndarray  # (H, W, 3) in [0, 1]
    gripper_pose: Se3Pose
    action: np.ndarray  # (7,)
    mask: np.ndarray | None = None  # ground-truth object mask, synthetic data only


@dataclass
class Trajectory:
    cam: PinholeCamera
    camera_offset: Se3Pose
    object_to_world: Se3Pose
    t_grasp: int
    steps: list[Step]

    def __post_init__(self):
        if len(self.steps) < 2:
            raise TrajectoryError("a trajectory needs at least 2 steps")
        if not 0 <= self.t_grasp < len(self.steps):
            raise TrajectoryError(f"t_grasp {self.t_grasp} outside [0, {len(self.steps)})")
        shape = (self.cam.height, self.cam.width, 3)
        for t, s in enumerate(self.steps):
            if s.frame.shape != shape:
                raise TrajectoryError(f"frame {t} has shape {s.frame.shape}, expected {shape}")
            if s.mask is not None and s.mask.shape != shape[:2]:
                raise TrajectoryError(f"mask {t} has shape {s.mask.shape}, expected {shape[:2]}")

    def __len__(self):
        return len(self.steps)

    @property
    def gripper_poses(self) -> list[Se3Pose]:
        return [s.gripper_pose for s in self.steps]

    @property
    def actions(self) -> np.ndarray:
        return np.stack([s.action for s in self.steps])

    @property
    def has_masks(self) -> bool:
        return all(s.mask is not None for s in self.steps)


def detect_t_grasp(actions, threshold: float = 0.5) -> int:
    """First timestep whose gripper command reaches ``threshold``."""
    grip = np.asarray(actions)[:, 6]
    hits = np.flatnonzero(grip >= threshold)
    if hits.size == 0:
        raise TrajectoryError("gripper never closes; cannot infer t_grasp")
    return int(hits[0])


# --- I/O -----------------------------------------------------------------------


def write_trajectory(traj: Trajectory, root) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    if traj.has_masks:
        (root / "masks").mkdir(exist_ok=True)
    for t, s in enumerate(traj.steps):
        imageio.write_rgb(root / "frames" / f"{t:06d}.png", s.frame)
        if traj.has_masks:
            imageio.write_gray(root / "masks" / f"{t:06d}.png", s.mask)
    meta = {
        "schema_version": TRAJECTORY_SCHEMA_VERSION,
        "t_grasp": traj.t_grasp,
        "camera": traj.cam.to_dict(),
        "camera_offset": traj.camera_offset.to_list(),
        "object_to_world": traj.object_to_world.to_list(),
        "n_steps": len(traj),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1))
    poses = {"frames": [{"index": t, "gripper_to_world": s.gripper_pose.to_list()}
                        for t, s in enumerate(traj.steps)]}
    (root / "poses.json").write_text(json.dumps(poses))
    with open(root / "actions.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", *ACTION_COLUMNS])
        for t, s in enumerate(traj.steps):
            w.writerow([t, *(repr(float(a)) for a in s.action)])


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingFileError(f"missing {path}")
    return path


def read_trajectory(root) -> Trajectory:
    root = Path(root)
    meta = json.loads(_need(root / "meta.json").read_text())
    if meta.get("schema_version") != TRAJECTORY_SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported trajectory schema_version {meta.get('schema_version')!r}")
    n = int(meta["n_steps"])
    cam = PinholeCamera.from_dict(meta["camera"])
    frame_files = sorted((root / "frames").glob("*.png")) if (root / "frames").is_dir() else []
    if len(frame_files) != n:
        have = {p.stem for p in frame_files}
        missing = [t for t in range(n) if f"{t:06d}" not in have]
        where = f"; missing frame index {missing[0]}" if missing else ""
        raise FrameCountError(f"meta.json declares {n} steps but {len(frame_files)} frame files exist{where}")
    poses = json.loads(_need(root / "poses.json").read_text())["frames"]
    if len(poses) != n:
        raise FrameCountError(f"meta.json declares {n} steps but poses.json has {len(poses)}")
    with open(_need(root / "actions.csv"), newline="") as f:
        rows = list(csv.reader(f))
    if rows[0] != ["t", *ACTION_COLUMNS]:
        raise TrajectoryError(f"unexpected actions.csv header {rows[0]}")
    rows = rows[1:]
    if len(rows) != n:
        raise FrameCountError(f"meta.json declares {n} steps but actions.csv has {len(rows)} rows")
    has_masks = (root / "masks").is_dir()
    steps = []
    for t in range(n):
        frame = imageio.read_rgb(_need(root / "frames" / f"{t:06d}.png"))
        mask = imageio.read_gray(_need(root / "masks" / f"{t:06d}.png")) if has_masks else None
        pose = Se3Pose.from_list(poses[t]["gripper_to_world"])
        steps.append(Step(frame, pose, np.array([float(x) for x in rows[t][1:]]), mask))
    return Trajectory(cam, Se3Pose.from_list(meta["camera_offset"]),
                      Se3Pose.from_list(meta["object_to_world"]), int(meta["t_grasp"]), steps)


# --- augmentation --------------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    mode: str = "per-trajectory"  # or "per-timestep"
    sigma_rot: float = 0.0
    sigma_trans: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("per-trajectory", "per-timestep"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.sigma_rot < 0 or self.sigma_trans < 0:
            raise ValueError("noise scales must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.sigma_rot > 0 or self.sigma_trans > 0


@dataclass(frozen=True)
class AugmentConfig:
    tau: float = 0.5
    noise: NoiseConfig = NoiseConfig()
    render: RenderConfig = RenderConfig()
    background_render: RenderConfig = RenderConfig()
    seg_threshold: float = 0.05
    min_blob: int = 8
    dilation: int = 1
    output_size: tuple | None = (128, 128)  # (width, height)
    soft_blend: bool = False
    use_ground_truth_masks: bool = True
    threads: int | None = None


@dataclass
class FrameResult:
    final: np.ndarray
    m_nerf: np.ndarray
    original_mask: np.ndarray  # dilated
    i_nerf: np.ndarray
    i_no_object: np.ndarray
    camera_to_object: Se3Pose


def noisy_camera_to_object(demo: Trajectory, cfg: NoiseConfig) -> list[Se3Pose]:
    """Camera-in-object poses for every step, with grasp freeze and optional noise.

    Noise is only applied from ``t_grasp`` on; before the grasp the object is
    anchored in the world.
    """
    poses = demo.gripper_poses
    out = [camera_to_object_at(poses, demo.object_to_world, demo.camera_offset, t, demo.t_grasp)
           for t in range(len(poses))]
    if not cfg.enabled:
        return out
    held = sample_pose_noise(cfg.sigma_rot, cfg.sigma_trans, np.random.default_rng(cfg.seed))
    for t in range(demo.t_grasp, len(out)):
        if cfg.mode == "per-timestep":
            n = sample_pose_noise(cfg.sigma_rot, cfg.sigma_trans, np.random.default_rng([cfg.seed, t]))
        else:
            n = held
        out[t] = compose(out[t], n)
    return out


def augment_frame(step: Step, demo: Trajectory, cam_to_obj: Se3Pose, object_field: VoxelRadianceField,
                  background_field: VoxelRadianceField, cfg: AugmentConfig) -> FrameResult:
    cam = demo.cam
    nerf = render_image(object_field, cam, cam_to_obj, cfg.render, threads=cfg.threads)
    m_nerf = np.clip(nerf.opacity, 0.0, 1.0) if cfg.soft_blend else opacity_to_mask(nerf.opacity, cfg.tau)
    c2w = camera_to_world(step.gripper_pose, demo.camera_offset)
    if cfg.use_ground_truth_masks and step.mask is not None:
        original = dilate_mask(step.mask, cfg.dilation)
        bg = render_pixels(background_field, cam, c2w, cfg.background_render, original, threads=cfg.threads).rgb
    else:
        bg = render_image(background_field, cam, c2w, cfg.background_render, threads=cfg.threads).rgb
        original = dilate_mask(segment_by_background(step.frame, bg, cfg.seg_threshold, cfg.min_blob),
                               cfg.dilation)
    no_obj = inpaint_background(step.frame, original, bg)
    final = blend(nerf.rgb, m_nerf, no_obj)
    return FrameResult(final, m_nerf, original, nerf.rgb, no_obj, cam_to_obj)


def area_resize(img, width: int, height: int) -> np.ndarray:
    """Resample by exact area averaging of source pixels onto the target grid."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    if (H, W) == (height, width):
        return img.copy()

    def weights(n_src, n_dst):
        edges = np.linspace(0, n_src, n_dst + 1)
        A = np.zeros((n_dst, n_src))
        for i in range(n_dst):
            lo, hi = edges[i], edges[i + 1]
            for j in range(int(np.floor(lo)), int(np.ceil(hi))):
                A[i, j] = min(hi, j + 1) - max(lo, j)
            A[i] /= hi - lo
        return A

    Ay, Ax = weights(H, height), weights(W, width)
    return np.einsum("ih,hw...,jw->ij...", Ay, img, Ax)


def augment_trajectory(demo: Trajectory, object_field: VoxelRadianceField,
                       background_field: VoxelRadianceField, cfg: AugmentConfig = AugmentConfig(),
                       results: list | None = None) -> Trajectory:
    """Replace the demo's object with the one in ``object_field``, frame by frame.

    Gripper poses and actions are carried over untouched. The output masks are
    the novel object's M_NeRF. Pass a list as ``results`` to collect the
    per-frame intermediates.
    """
    c2o = noisy_camera_to_object(demo, cfg.noise)
    out_cam = demo.cam
    resize = cfg.output_size is not None and tuple(cfg.output_size) != (demo.cam.width, demo.cam.height)
    if resize:
        out_cam = demo.cam.scaled(*cfg.output_size)
    steps = []
    for t, step in enumerate(demo.steps):
        r = augment_frame(step, demo, c2o[t], object_field, background_field, cfg)
        if results is not None:
            results.append(r)
        frame, mask = r.final, r.m_nerf
        if resize:
            frame = area_resize(frame, out_cam.width, out_cam.height)
            mask = (area_resize(mask, out_cam.width, out_cam.height) > 0.5).astype(np.float64)
        steps.append(Step(frame, step.gripper_pose, step.action.copy(), mask))
        log.debug("augmented step %d", t)
    return Trajectory(out_cam, demo.camera_offset, demo.object_to_world, demo.t_grasp, steps)


def evaluate_augmentation(produced: Trajectory, oracle: Trajectory) -> dict:
    """Per-frame PSNR (capped at 99 dB) and mask IoU when both sides carry masks."""
    if len(produced) != len(oracle):
        raise TrajectoryError(f"length mismatch: {len(produced)} vs {len(oracle)}")
    frames = []
    with_masks = produced.has_masks and oracle.has_masks
    for t, (a, b) in enumerate(zip(produced.steps, oracle.steps)):
        if a.frame.shape != b.frame.shape:
            raise TrajectoryError(f"frame {t}: shape {a.frame.shape} vs {b.frame.shape}")
        entry = {"index": t, "psnr_db": psnr(a.frame, b.frame)}
        if with_masks:
            entry["iou"] = iou(a.mask, b.mask)
        frames.append(entry)
    report = {
        "schema_version": 1,
        "frames": frames,
        "mean_psnr_db": float(np.mean([f["psnr_db"] for f in frames])),
        "min_psnr_db": float(np.min([f["psnr_db"] for f in frames])),
        "psnr_cap_db": PSNR_CAP_DB,
    }
    if with_masks:
        report["mean_iou"] = float(np.mean([f["iou"] for f in frames]))
    return report
