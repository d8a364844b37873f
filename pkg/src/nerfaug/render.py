"""Volumetric ray marching of a voxel field into RGB, opacity and object masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .field import VoxelRadianceField
from .geometry import PinholeCamera, Ray, Se3Pose, camera_rays
from .parallel import run_chunked


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 128
    t_near: float = 0.05
    t_far: float = 3.0
    background_rgb: tuple = (0.0, 0.0, 0.0)
    stratified: bool = False
    seed: int = 0
    # march only the part of [t_near, t_far] inside the field's box; samples
    # outside it carry zero density anyway
    clip_to_bbox: bool = True

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be < t_far")
        bg = np.asarray(self.background_rgb, float)
        if bg.shape != (3,) or np.any(bg < 0) or np.any(bg > 1):
            raise ValueError("background_rgb must be 3 values in [0, 1]")
        object.__setattr__(self, "background_rgb", tuple(float(x) for x in bg))


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3)
    opacity: np.ndarray  # (H, W)


def render_rays(field: VoxelRadianceField, origins, dirs, cfg: RenderConfig, ray_ids=None,
                t_near=None, t_far=None, threads: int | None = None):
    """Render a batch of rays; returns (rgb (N, 3), opacity (N,))."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    ray_ids = np.arange(n, dtype=np.int64) if ray_ids is None else np.asarray(ray_ids, np.int64)
    tn = np.broadcast_to(np.float64(cfg.t_near if t_near is None else t_near), (n,)).copy()
    tf = np.broadcast_to(np.float64(cfg.t_far if t_far is None else t_far), (n,)).copy()
    out_rgb = np.empty((n, 3))
    out_op = np.empty(n)
    grid, res, geo, bmin, bmax = field.kernel_args()
    bg = np.asarray(cfg.background_rgb, dtype=np.float64)

    def kernel(s, e):
        K.render_rays(grid, res, geo, bmin, bmax, origins, dirs, tn, tf,
                      cfg.samples_per_ray, bg, cfg.stratified, cfg.seed, ray_ids,
                      cfg.clip_to_bbox, out_rgb, out_op, s, e)

    run_chunked(kernel, n, threads)
    return out_rgb, out_op


def render_ray(field: VoxelRadianceField, ray: Ray, cfg: RenderConfig, ray_id: int = 0):
    """Composite one ray over the overlap of its own and the config's [t_near, t_far]."""
    tn = max(ray.t_near, cfg.t_near)
    tf = min(ray.t_far, cfg.t_far)
    if not tn < tf:
        return np.asarray(cfg.background_rgb, dtype=np.float64), 0.0
    rgb, op = render_rays(field, ray.origin[None], ray.direction[None], cfg, [ray_id], tn, tf, threads=1)
    return rgb[0], float(op[0])


def render_image(field: VoxelRadianceField, cam: PinholeCamera, camera_pose: Se3Pose,
                 cfg: RenderConfig, threads: int | None = None) -> RenderOutput:
    o, d = camera_rays(cam, camera_pose)
    rgb, op = render_rays(field, o, d, cfg, threads=threads)
    return RenderOutput(rgb.reshape(cam.height, cam.width, 3), op.reshape(cam.height, cam.width))


def opacity_to_mask(opacity, tau: float = 0.5) -> np.ndarray:
    if not 0 <= tau <= 1:
        raise ValueError("tau must be in [0, 1]")
    return (np.asarray(opacity) > tau).astype(np.float64)


def render_pixels(field: VoxelRadianceField, cam: PinholeCamera, camera_pose: Se3Pose,
                  cfg: RenderConfig, pixel_mask, threads: int | None = None) -> RenderOutput:
    """Render only where ``pixel_mask`` is set; other pixels get the background and zero opacity.

    Rendered pixels are bitwise equal to the same pixels of ``render_image``.
    """
    pixel_mask = np.asarray(pixel_mask) > 0.5
    H, W = cam.height, cam.width
    rgb = np.broadcast_to(np.asarray(cfg.background_rgb, float), (H * W, 3)).copy()
    op = np.zeros(H * W)
    sel = np.flatnonzero(pixel_mask.ravel())
    if sel.size:
        o, d = camera_rays(cam, camera_pose)
        rgb[sel], op[sel] = render_rays(field, o.reshape(-1, 3)[sel], d.reshape(-1, 3)[sel], cfg,
                                        ray_ids=sel, threads=threads)
    return RenderOutput(rgb.reshape(H, W, 3), op.reshape(H, W))
