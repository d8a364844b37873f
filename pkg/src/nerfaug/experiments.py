"""End-to-end experiments on the analytic scenes, shared by scripts/ and the acceptance tests."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import scene as S
from .field import VoxelRadianceField
from .geometry import PinholeCamera
from .pipeline import AugmentConfig, Trajectory, augment_trajectory, evaluate_augmentation
from .render import opacity_to_mask, render_image
from .train import TrainConfig, train_field

log = logging.getLogger(__name__)


def demo_camera(size: int = 128, fov_deg: float = 60.0) -> PinholeCamera:
    return PinholeCamera.from_fov(size, size, fov_deg)


# --- single object fit ---------------------------------------------------------


@dataclass
class SphereFitResult:
    field: VoxelRadianceField
    holdout_psnr_db: float
    mask_iou: float
    wall_seconds: float
    checkpoints: list


def sphere_fit(n_views: int = 24, resolution: int = 64, iterations: int = 4000, threads=None,
               cam: PinholeCamera | None = None, tau: float = 0.5) -> SphereFitResult:
    """Fit the "sphere" preset and score it against the analytic renders.

    The mask IoU is pooled over the holdout views: M_NeRF at ``tau`` against the
    analytic object mask.
    """
    cam = cam or PinholeCamera.from_fov(128, 128, 50)
    sc = S.preset("sphere")
    ds = S.generate_posed_dataset(sc, cam, n_views)
    cfg = TrainConfig(iterations=iterations, threads=threads, checkpoint_every=max(iterations // 8, 1))
    t0 = time.perf_counter()
    fld, report = train_field(ds, ((-0.15,) * 3, (0.15,) * 3), resolution, cfg)
    wall = time.perf_counter() - t0
    rcfg = cfg.render_config()
    inter = union = 0
    for i in report.holdout_frames:
        pose = ds.frames[i].camera_to_world
        m = opacity_to_mask(render_image(fld, cam, pose, rcfg, threads).opacity, tau) > 0.5
        gt = S.analytic_render(sc, cam, pose).masks[S.OBJECT] > 0.5
        inter += np.count_nonzero(m & gt)
        union += np.count_nonzero(m | gt)
    return SphereFitResult(fld, report.final_psnr, inter / union if union else 1.0, wall, report.checkpoints)


# --- object swap ---------------------------------------------------------------


@dataclass(frozen=True)
class SwapSetup:
    """Knobs for the workspace swap experiment."""
    cam_size: int = 128
    fov_deg: float = 60.0
    object_views: int = 24
    object_resolution: int = 64
    object_iterations: int = 2000
    object_half_extent: float = 0.07
    object_orbit: S.Orbit = S.Orbit(radii=(0.25, 0.4), elevations_deg=(20.0, 50.0, 80.0))
    background_views: int = 48
    background_resolution: tuple = (128, 128, 24)
    background_iterations: int = 3000
    background_bbox: tuple = ((-0.6, -0.6, -0.05), (0.6, 0.6, 0.17))
    background_orbit: S.Orbit = S.Orbit(radii=(0.3, 0.45), elevations_deg=(55.0, 70.0, 85.0))
    threads: int | None = None
    seed: int = 0


def fit_object_field(scene_preset: str, setup: SwapSetup) -> VoxelRadianceField:
    """Field of the preset's object group, in the object's own frame."""
    cam = demo_camera(setup.cam_size, setup.fov_deg)
    obj = S.object_scene(S.preset(scene_preset))
    ds = S.generate_posed_dataset(obj, cam, setup.object_views, setup.object_orbit, setup.seed)
    h = setup.object_half_extent
    cfg = TrainConfig(iterations=setup.object_iterations, threads=setup.threads, seed=setup.seed,
                      checkpoint_every=setup.object_iterations)
    fld, report = train_field(ds, ((-h,) * 3, (h,) * 3), setup.object_resolution, cfg)
    log.info("object field %s: holdout %.2f dB", scene_preset, report.final_psnr)
    return fld


def fit_background_field(scene_preset: str, setup: SwapSetup) -> VoxelRadianceField:
    """Field of the preset with the object group removed."""
    cam = demo_camera(setup.cam_size, setup.fov_deg)
    sc = S.preset(scene_preset)
    orbit = replace(setup.background_orbit, center=tuple(sc.centroid(S.OBJECT)))
    ds = S.generate_posed_dataset(sc.without(S.OBJECT), cam, setup.background_views, orbit, setup.seed)
    cfg = TrainConfig(iterations=setup.background_iterations, threads=setup.threads, seed=setup.seed,
                      checkpoint_every=setup.background_iterations)
    fld, report = train_field(ds, setup.background_bbox, setup.background_resolution, cfg)
    log.info("background field: holdout %.2f dB", report.final_psnr)
    return fld


@dataclass
class SwapResult:
    demo: Trajectory
    augmented: Trajectory
    oracle: Trajectory
    report: dict
    frame_results: list = dc_field(default_factory=list)
    self_augmented: Trajectory | None = None
    self_report: dict | None = None
    timings: dict = dc_field(default_factory=dict)


def swap_experiment(setup: SwapSetup = SwapSetup(), source: str = "workspace", novel: str = "workspace-novel",
                    augment: AugmentConfig | None = None, self_swap: bool = True) -> SwapResult:
    """Record a demo in ``source``, swap in ``novel``'s object, compare with a demo recorded in ``novel``.

    Both demos share the gripper path and the object pose, so the ``novel``
    recording is exactly what a perfect swap would produce.
    """
    cam = demo_camera(setup.cam_size, setup.fov_deg)
    spec = S.default_demo_spec()
    demo = S.generate_demo_trajectory(S.preset(source), spec, cam)
    oracle = S.generate_demo_trajectory(S.preset(novel), spec, cam)
    timings = {}
    t0 = time.perf_counter()
    novel_field = fit_object_field(novel, setup)
    timings["novel_object_field_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    bg_field = fit_background_field(source, setup)
    timings["background_field_s"] = time.perf_counter() - t0
    acfg = augment or AugmentConfig(threads=setup.threads)
    frames = []
    t0 = time.perf_counter()
    augmented = augment_trajectory(demo, novel_field, bg_field, acfg, results=frames)
    timings["augment_s"] = time.perf_counter() - t0
    result = SwapResult(demo, augmented, oracle, evaluate_augmentation(augmented, oracle), frames,
                        timings=timings)
    if self_swap:
        t0 = time.perf_counter()
        own_field = fit_object_field(source, setup)
        result.self_augmented = augment_trajectory(demo, own_field, bg_field, acfg)
        result.self_report = evaluate_augmentation(result.self_augmented, demo)
        timings["self_swap_s"] = time.perf_counter() - t0
    return result
