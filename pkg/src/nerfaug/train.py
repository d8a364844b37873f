"""Fit a voxel radiance field to posed images with hand-derived gradients and Adam."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
from numba import njit

from . import _kernels as K
from . import imageio
from .field import VoxelRadianceField
from .geometry import PinholeCamera, Se3Pose, camera_rays
from .parallel import run_chunked
from .render import RenderConfig, render_image

log = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class PosedFrame:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    camera_to_world: Se3Pose


@dataclass
class PosedImageDataset:
    cam: PinholeCamera
    frames: list[PosedFrame]

    def __post_init__(self):
        if not self.frames:
            raise DatasetError("dataset has no frames")
        for i, f in enumerate(self.frames):
            if f.image.shape != (self.cam.height, self.cam.width, 3):
                raise DatasetError(
                    f"frame {i} has shape {f.image.shape}, camera is {self.cam.height}x{self.cam.width}")

    def __len__(self):
        return len(self.frames)


def write_dataset(ds: PosedImageDataset, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    frames = []
    for i, f in enumerate(ds.frames):
        name = f"images/{i:06d}.png"
        imageio.write_rgb(root / name, f.image)
        frames.append({"index": i, "file": name, "camera_to_world": f.camera_to_world.to_list()})
    meta = {"schema_version": DATASET_SCHEMA_VERSION, "camera": ds.cam.to_dict(), "frames": frames}
    (root / "dataset.json").write_text(json.dumps(meta, indent=1))


def read_dataset(root) -> PosedImageDataset:
    root = Path(root)
    meta = json.loads((root / "dataset.json").read_text())
    if meta.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise DatasetError(f"unsupported dataset schema_version {meta.get('schema_version')!r}")
    cam = PinholeCamera.from_dict(meta["camera"])
    frames = [PosedFrame(imageio.read_rgb(root / f["file"]), Se3Pose.from_list(f["camera_to_world"]))
              for f in meta["frames"]]
    return PosedImageDataset(cam, frames)


@dataclass
class TrainConfig:
    iterations: int = 4000
    rays_per_batch: int = 4096
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    tv_weight: float = 1e-9  # summed-form TV; larger weights swamp per-voxel photometric gradients
    seed: int = 0
    holdout_fraction: float = 0.125
    samples_per_ray: int = 64
    stratified: bool = True
    t_near: float = 0.05
    t_far: float = 3.0
    background_rgb: tuple = (0.0, 0.0, 0.0)
    checkpoint_every: int = 500
    # PSNR renders use this many samples per ray
    eval_samples_per_ray: int = 128
    threads: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must be in [0, 1)")
        if self.rays_per_batch < 1:
            raise ValueError("rays_per_batch must be >= 1")
        self.background_rgb = tuple(float(c) for c in self.background_rgb)

    def render_config(self, samples_per_ray=None, stratified=False) -> RenderConfig:
        return RenderConfig(samples_per_ray or self.eval_samples_per_ray, self.t_near, self.t_far,
                            tuple(self.background_rgb), stratified, self.seed)


PSNR_CAP_DB = 99.0


def psnr_from_mse(mse: float, cap: float = PSNR_CAP_DB) -> float:
    if mse <= 10 ** (-cap / 10):
        return cap
    return float(-10.0 * np.log10(mse))


def psnr(a, b, cap: float = PSNR_CAP_DB) -> float:
    """-10 log10 of the per-channel MSE for [0, 1] images, capped for identical inputs."""
    return psnr_from_mse(float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)), cap)


# --- gradients -----------------------------------------------------------------


def _loss_grad_flat(grid, res, geo, bmin, bmax, origins, dirs, targets, rcfg: RenderConfig,
                    ray_ids, threads=None):
    """Mean per-ray loss plus the flat gradient and per-voxel touched mask."""
    B = len(origins)
    n = rcfg.samples_per_ray
    tn = np.full(B, rcfg.t_near)
    tf = np.full(B, rcfg.t_far)
    bg = np.asarray(rcfg.background_rgb, dtype=np.float64)
    loss = np.empty(B)
    ts = np.empty((B, n))
    g = np.empty((B, n, 4))

    def kernel(s, e):
        K.loss_grad_rays(grid, res, geo, bmin, bmax, origins, dirs, tn, tf, n, bg,
                         rcfg.stratified, rcfg.seed, ray_ids, rcfg.clip_to_bbox, targets,
                         2.0 / B, loss, ts, g, s, e)

    run_chunked(kernel, B, threads, chunk=256)
    grad = np.zeros_like(grid)
    touched = np.zeros(len(grid) // 4, dtype=np.bool_)
    K.scatter_grads(res, geo, origins, dirs, ts, g, grad, touched)
    # fixed-order sum for the loss too
    return float(np.sum(loss) / B), grad, touched


def photometric_loss_and_grad(field: VoxelRadianceField, origins, dirs, targets,
                              cfg: RenderConfig | None = None, ray_ids=None, threads=None):
    """Mean over rays of the summed per-channel squared error, and its gradient.

    Returns ``(loss, grad_density, grad_rgb)`` with gradients shaped like the
    field's raw arrays; voxels not touched by any ray carry exactly zero.
    """
    cfg = cfg or RenderConfig()
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    targets = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(origins) == 0:
        raise ValueError("empty ray batch")
    ray_ids = np.arange(len(origins), dtype=np.int64) if ray_ids is None else np.asarray(ray_ids, np.int64)
    grid, res, geo, bmin, bmax = field.kernel_args()
    loss, grad, _ = _loss_grad_flat(grid, res, geo, bmin, bmax, origins, dirs, targets, cfg,
                                    ray_ids, threads)
    nx, ny, nz = field.resolution
    grad = grad.reshape(nz, ny, nx, 4)
    return loss, grad[..., 0].copy(), grad[..., 1:].copy()


def tv_penalty_and_grad(raw_density, weight: float):
    """weight * sum of squared differences between axis-adjacent raw densities."""
    if weight < 0:
        raise ValueError("weight must be >= 0")
    x = np.asarray(raw_density, dtype=np.float64)
    grad = np.zeros_like(x)
    if weight == 0:
        return 0.0, grad
    penalty = 0.0
    for axis in range(x.ndim):
        if x.shape[axis] < 2:
            continue
        d = np.diff(x, axis=axis)
        penalty += float(np.sum(d * d))
        lo = [slice(None)] * x.ndim
        hi = [slice(None)] * x.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        grad[tuple(hi)] += 2.0 * weight * d
        grad[tuple(lo)] -= 2.0 * weight * d
    return weight * penalty, grad


# --- optimizer -----------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64))


@njit(cache=True, nogil=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, eps, c1, c2):
    for i in range(p.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and state shapes must agree")
    state.step += 1
    t = state.step
    _adam_kernel(params.reshape(-1), np.ascontiguousarray(grads, dtype=np.float64).reshape(-1),
                 state.m.reshape(-1), state.v.reshape(-1), lr, beta1, beta2, eps,
                 1.0 - beta1 ** t, 1.0 - beta2 ** t)


# --- training loop -------------------------------------------------------------


@njit(cache=True)
def _batch_indices(seed, iteration, n_pool, out):
    for j in range(out.size):
        out[j] = int(K.uniform01(seed, iteration, j) * n_pool)


def split_holdout(n_frames: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, holdout indices), disjoint and sorted."""
    n_hold = int(round(fraction * n_frames))
    if fraction > 0:
        if n_frames < 2:
            raise DatasetError("a holdout split needs at least 2 frames")
        n_hold = min(max(n_hold, 1), n_frames - 1)
    rng = np.random.default_rng(seed)
    hold = np.sort(rng.permutation(n_frames)[:n_hold])
    train = np.setdiff1d(np.arange(n_frames), hold)
    return train, hold


@dataclass
class TrainReport:
    train_frames: list[int]
    holdout_frames: list[int]
    checkpoints: list[dict] = dc_field(default_factory=list)

    @property
    def final_psnr(self) -> float | None:
        return self.checkpoints[-1]["holdout_psnr_db"] if self.checkpoints else None

    def write_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for c in self.checkpoints:
                f.write(json.dumps(c) + "\n")


def evaluate_psnr(field: VoxelRadianceField, ds: PosedImageDataset, indices, rcfg: RenderConfig,
                  threads=None) -> float:
    """PSNR over the selected frames, pooled MSE."""
    if len(indices) == 0:
        return float("nan")
    errs = []
    for i in indices:
        f = ds.frames[i]
        out = render_image(field, ds.cam, f.camera_to_world, rcfg, threads=threads)
        errs.append(np.mean((out.rgb - f.image) ** 2))
    return psnr_from_mse(float(np.mean(errs)))


def train_field(dataset: PosedImageDataset, bbox, resolution, cfg: TrainConfig | None = None,
                init: VoxelRadianceField | None = None, progress=None):
    """Optimise a voxel field against ``dataset``; returns (field, TrainReport).

    ``bbox`` is (bbox_min, bbox_max). Holdout frames (``cfg.holdout_fraction``)
    never contribute rays to the gradient.
    """
    cfg = cfg or TrainConfig()
    if len(dataset.frames) == 0:
        raise DatasetError("empty dataset")
    bmin, bmax = (np.asarray(b, dtype=np.float64) for b in bbox)
    if bmin.shape != (3,) or not np.all(bmin < bmax):
        raise ValueError("degenerate bounding box")
    field = init.copy() if init is not None else VoxelRadianceField.filled(resolution, bmin, bmax)
    train_idx, hold_idx = split_holdout(len(dataset), cfg.holdout_fraction, cfg.seed)
    report = TrainReport([int(i) for i in train_idx], [int(i) for i in hold_idx])

    origins, dirs, targets = [], [], []
    for i in train_idx:
        fr = dataset.frames[i]
        o, d = camera_rays(dataset.cam, fr.camera_to_world)
        origins.append(o.reshape(-1, 3))
        dirs.append(d.reshape(-1, 3))
        targets.append(fr.image.reshape(-1, 3))
    origins = np.concatenate(origins)
    dirs = np.concatenate(dirs)
    targets = np.ascontiguousarray(np.concatenate(targets), dtype=np.float64)
    n_pool = len(origins)

    res = np.asarray(field.resolution, dtype=np.int64)
    geo = K.grid_geometry(res, field.bbox_min, field.bbox_max)
    params = field.packed().reshape(-1)
    state = AdamState.zeros_like(params)
    nx, ny, nz = field.resolution
    train_rcfg = cfg.render_config(cfg.samples_per_ray, cfg.stratified)
    eval_rcfg = cfg.render_config()
    idx = np.empty(cfg.rays_per_batch, dtype=np.int64)
    t0 = time.perf_counter()

    def snapshot():
        return VoxelRadianceField.from_packed(field.resolution, field.bbox_min, field.bbox_max,
                                              params.reshape(-1, 4))

    for it in range(cfg.iterations):
        _batch_indices(cfg.seed, it, n_pool, idx)
        ray_ids = it * cfg.rays_per_batch + np.arange(cfg.rays_per_batch, dtype=np.int64)
        loss, grad, _ = _loss_grad_flat(params, res, geo, field.bbox_min, field.bbox_max,
                                        origins[idx], dirs[idx], targets[idx], train_rcfg,
                                        ray_ids, cfg.threads)
        if cfg.tv_weight > 0:
            dens = params.reshape(nz, ny, nx, 4)[..., 0]
            tv, tv_grad = tv_penalty_and_grad(dens, cfg.tv_weight)
            grad.reshape(nz, ny, nx, 4)[..., 0] += tv_grad
            loss += tv
        adam_step(params, grad, state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        last = it == cfg.iterations - 1
        if last or (cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0):
            hold_psnr = evaluate_psnr(snapshot(), dataset, hold_idx, eval_rcfg, cfg.threads)
            entry = {"iteration": it + 1, "loss": loss, "holdout_psnr_db": hold_psnr,
                     "wall_seconds": time.perf_counter() - t0}
            report.checkpoints.append(entry)
            log.info("iter %d loss %.5f holdout psnr %.2f dB", it + 1, loss, hold_psnr)
            if progress:
                progress(entry)
    return snapshot(), report


def train_config_from_dict(d: dict) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    return TrainConfig(**{k: v for k, v in d.items() if k in known})


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
