"""Analytic constant-density scenes: the ground truth every learned component is checked against.

Primitives live in the local frame of a named group; each group has a world
pose. Rendering intersects rays with every primitive in closed form and
integrates transmittance exactly over the resulting constant-density pieces,
so there is no sampling error anywhere in the oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (PinholeCamera, Se3Pose, camera_rays, camera_to_object_at, camera_to_world,
                       compose, invert, look_at)
from .train import PosedFrame, PosedImageDataset

OBJECT = "object"
BACKGROUND = "background"
SCENE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Primitive:
    shape: str  # "sphere" or "box"
    params: tuple  # sphere: (cx, cy, cz, r); box: (x0, y0, z0, x1, y1, z1)
    density: float
    rgb: tuple
    group: str = BACKGROUND

    def __post_init__(self):
        p = tuple(float(x) for x in self.params)
        if self.shape == "sphere":
            if len(p) != 4 or p[3] <= 0:
                raise ValueError("sphere needs (cx, cy, cz, radius > 0)")
        elif self.shape == "box":
            if len(p) != 6 or not (p[0] < p[3] and p[1] < p[4] and p[2] < p[5]):
                raise ValueError("box needs (min, max) with min < max")
        else:
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        if self.density < 0:
            raise ValueError("density must be >= 0")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "rgb", tuple(float(c) for c in self.rgb))

    @classmethod
    def sphere(cls, center, radius, density, rgb, group=BACKGROUND):
        return cls("sphere", (*center, radius), density, rgb, group)

    @classmethod
    def box(cls, lo, hi, density, rgb, group=BACKGROUND):
        return cls("box", (*lo, *hi), density, rgb, group)

    def centroid(self) -> np.ndarray:
        p = np.asarray(self.params)
        return p[:3] if self.shape == "sphere" else (p[:3] + p[3:]) / 2

    def intersect(self, o, d):
        """Entry/exit distances (t0, t1) per ray; t0 > t1 on a miss."""
        p = self.params
        if self.shape == "sphere":
            oc = o - np.asarray(p[:3])
            b = np.einsum("ij,ij->i", oc, d)
            c = np.einsum("ij,ij->i", oc, oc) - p[3] ** 2
            disc = b * b - c
            hit = disc >= 0
            s = np.sqrt(np.where(hit, disc, 0.0))
            t0 = np.where(hit, -b - s, np.inf)
            t1 = np.where(hit, -b + s, -np.inf)
            return t0, t1
        lo, hi = np.asarray(p[:3]), np.asarray(p[3:])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (lo - o) * inv
            tb = (hi - o) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = d == 0
        inside = (o >= lo) & (o <= hi)
        ta = np.where(par, np.where(inside, -np.inf, np.inf), ta)
        tb = np.where(par, np.where(inside, np.inf, -np.inf), tb)
        t0 = np.max(np.minimum(ta, tb), axis=1)
        t1 = np.min(np.maximum(ta, tb), axis=1)
        return t0, t1

    def to_dict(self) -> dict:
        return {"shape": self.shape, "params": list(self.params), "density": self.density,
                "rgb": list(self.rgb), "group": self.group}


@dataclass
class AnalyticScene:
    primitives: list[Primitive]
    background_rgb: tuple = (0.0, 0.0, 0.0)
    group_poses: dict[str, Se3Pose] = dc_field(default_factory=dict)

    def groups(self) -> list[str]:
        return sorted({p.group for p in self.primitives})

    def pose_of(self, group: str) -> Se3Pose:
        return self.group_poses.get(group, Se3Pose.identity())

    def without(self, group: str) -> AnalyticScene:
        return replace(self, primitives=[p for p in self.primitives if p.group != group])

    def only(self, group: str) -> AnalyticScene:
        return replace(self, primitives=[p for p in self.primitives if p.group == group])

    def with_pose(self, group: str, pose: Se3Pose) -> AnalyticScene:
        return replace(self, group_poses={**self.group_poses, group: pose})

    def centroid(self, group: str | None = OBJECT) -> np.ndarray:
        prims = [p for p in self.primitives if group is None or p.group == group]
        if not prims:
            prims = self.primitives
            group = None
        if not prims:
            return np.zeros(3)
        pts = [self.pose_of(p.group).apply(p.centroid()) for p in prims]
        return np.mean(pts, axis=0)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "background_rgb": list(self.background_rgb),
            "primitives": [p.to_dict() for p in self.primitives],
            "group_poses": {g: p.to_list() for g, p in self.group_poses.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> AnalyticScene:
        if d.get("schema_version", SCENE_SCHEMA_VERSION) != SCENE_SCHEMA_VERSION:
            raise ValueError(f"unsupported scene schema_version {d.get('schema_version')!r}")
        prims = [Primitive(p["shape"], tuple(p["params"]), float(p["density"]), tuple(p["rgb"]),
                           p.get("group", BACKGROUND)) for p in d["primitives"]]
        poses = {g: Se3Pose.from_list(v) for g, v in d.get("group_poses", {}).items()}
        return cls(prims, tuple(d.get("background_rgb", (0, 0, 0))), poses)


def save_scene(scene: AnalyticScene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1))


def load_scene(path) -> AnalyticScene:
    return AnalyticScene.from_dict(json.loads(Path(path).read_text()))


@dataclass
class AnalyticRender:
    rgb: np.ndarray  # (H, W, 3)
    opacity: np.ndarray  # (H, W)
    masks: dict[str, np.ndarray]  # group -> (H, W) hard mask
    group_opacity: dict[str, np.ndarray]


def _composite(t0, t1, sigma, rgb, background_rgb):
    """Exact front-to-back compositing of constant-density intervals.

    t0, t1: (R, P) interval bounds (already clipped to t >= 0). Returns rgb (R, 3),
    opacity (R,) and per-primitive opacity contributions (R, P).
    """
    R, P = t0.shape
    hit = t1 > t0
    t0 = np.where(hit, t0, np.nan)
    t1 = np.where(hit, t1, np.nan)
    bounds = np.sort(np.concatenate([t0, t1], axis=1), axis=1)  # NaNs sort last
    lo, hi = bounds[:, :-1], bounds[:, 1:]
    length = np.nan_to_num(hi - lo, nan=0.0)
    mid = 0.5 * (lo + hi)
    with np.errstate(invalid="ignore"):
        cover = (t0[:, None, :] <= mid[:, :, None]) & (mid[:, :, None] < t1[:, None, :])
    sig_p = cover * sigma[None, None, :]  # (R, S, P)
    sig_tot = sig_p.sum(axis=2)
    tau = sig_tot * length
    alpha = -np.expm1(-tau)
    trans = np.exp(-np.concatenate([np.zeros((R, 1)), np.cumsum(tau, axis=1)[:, :-1]], axis=1))
    w = trans * alpha  # (R, S)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(sig_tot[:, :, None] > 0, sig_p / sig_tot[:, :, None], 0.0)
    contrib = np.einsum("rs,rsp->rp", w, share)
    out = contrib @ rgb + np.exp(-tau.sum(axis=1))[:, None] * np.asarray(background_rgb)[None]
    return out, -np.expm1(-tau.sum(axis=1)), contrib


def _render_local(scene: AnalyticScene, cam: PinholeCamera, cam_in_group: dict[str, Se3Pose]):
    groups = scene.groups()
    H, W = cam.height, cam.width
    R = H * W
    P = len(scene.primitives)
    if P == 0:
        rgb = np.broadcast_to(np.asarray(scene.background_rgb, float), (H, W, 3)).copy()
        return AnalyticRender(rgb, np.zeros((H, W)), {}, {})
    rays = {g: [a.reshape(-1, 3) for a in camera_rays(cam, cam_in_group[g])] for g in groups}
    t0 = np.empty((R, P))
    t1 = np.empty((R, P))
    for k, p in enumerate(scene.primitives):
        o, d = rays[p.group]
        a, b = p.intersect(o, d)
        t0[:, k] = np.maximum(a, 0.0)
        t1[:, k] = b
    sigma = np.array([p.density for p in scene.primitives], dtype=np.float64)
    colors = np.array([p.rgb for p in scene.primitives], dtype=np.float64)
    rgb, op, contrib = _composite(t0, t1, sigma, colors, scene.background_rgb)
    masks, gop = {}, {}
    for g in groups:
        sel = [k for k, p in enumerate(scene.primitives) if p.group == g]
        go = contrib[:, sel].sum(axis=1).reshape(H, W)
        gop[g] = go
        masks[g] = (go > 0.5).astype(np.float64)
    return AnalyticRender(rgb.reshape(H, W, 3), op.reshape(H, W), masks, gop)


def analytic_render(scene: AnalyticScene, cam: PinholeCamera, camera_pose: Se3Pose,
                    fine_step: float | None = None) -> AnalyticRender:
    """Exact render of ``scene`` from a camera-to-world pose.

    Integration is piecewise exact, so ``fine_step`` has no effect on the
    result; it is accepted (and validated) for interface compatibility.
    """
    if fine_step is not None and not fine_step > 0:
        raise ValueError("fine_step must be > 0")
    local = {g: compose(invert(scene.pose_of(g)), camera_pose) for g in scene.groups()}
    return _render_local(scene, cam, local)


# --- presets -------------------------------------------------------------------

OPAQUE = 2000.0


def preset(name: str) -> AnalyticScene:
    """Shipped scenes: "sphere", "mug-proxy", "workspace", "workspace-novel"."""
    if name == "sphere":
        return AnalyticScene([Primitive.sphere((0, 0, 0), 0.1, OPAQUE, (0.85, 0.35, 0.2), OBJECT)])
    if name == "mug-proxy":
        return AnalyticScene([
            Primitive.sphere((0, 0, 0), 0.07, OPAQUE, (0.8, 0.1, 0.15), OBJECT),
            Primitive.box((0.065, -0.012, -0.03), (0.11, 0.012, 0.03), OPAQUE, (0.9, 0.85, 0.8), OBJECT),
        ])
    if name in ("workspace", "workspace-novel"):
        obj = (Primitive.sphere((0, 0, 0), 0.05, OPAQUE, (0.9, 0.75, 0.1), OBJECT) if name == "workspace"
               else Primitive.sphere((0, 0, 0), 0.04, OPAQUE, (0.15, 0.3, 0.9), OBJECT))
        return AnalyticScene(
            [
                Primitive.box((-0.6, -0.6, -0.04), (0.6, 0.6, 0.0), OPAQUE, (0.55, 0.4, 0.3)),
                Primitive.box((-0.3, -0.3, 0.0), (-0.05, 0.3, 0.004), OPAQUE, (0.35, 0.5, 0.35)),
                Primitive.box((0.12, -0.35, 0.0), (0.2, -0.1, 0.12), OPAQUE, (0.7, 0.7, 0.75)),
                Primitive.box((-0.35, 0.15, 0.0), (-0.25, 0.35, 0.15), OPAQUE, (0.6, 0.65, 0.7)),
                obj,
            ],
            background_rgb=(0.0, 0.0, 0.0),
            group_poses={OBJECT: Se3Pose.from_translation((0.0, 0.0, 0.05 if name == "workspace" else 0.04))},
        )
    raise KeyError(f"unknown scene preset {name!r}")


def object_scene(scene: AnalyticScene) -> AnalyticScene:
    """The object group alone, at the origin of its own frame."""
    obj = scene.only(OBJECT)
    return replace(obj, group_poses={}, background_rgb=(0.0, 0.0, 0.0))


# --- posed datasets ------------------------------------------------------------


@dataclass(frozen=True)
class Orbit:
    radii: tuple = (0.5,)
    elevations_deg: tuple = (20.0, 45.0, 70.0)
    center: tuple | None = None
    azimuth_jitter_deg: float = 0.0

    def pose(self, k: int, n_views: int, center, jitter: float = 0.0) -> Se3Pose:
        el = np.radians(self.elevations_deg[k % len(self.elevations_deg)])
        r = self.radii[(k // len(self.elevations_deg)) % len(self.radii)]
        az = 2 * np.pi * k / n_views + np.radians(jitter)
        eye = np.asarray(center) + r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        return look_at(eye, center)


def generate_posed_dataset(scene: AnalyticScene, cam: PinholeCamera, n_views: int,
                           orbit: Orbit = Orbit(), seed: int = 0, target_group: str | None = OBJECT):
    """Render ``n_views`` look-at views on an orbit around the target group's centroid."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    center = np.asarray(orbit.center) if orbit.center is not None else scene.centroid(target_group)
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-1, 1, size=n_views) * orbit.azimuth_jitter_deg
    frames = []
    for k in range(n_views):
        pose = orbit.pose(k, n_views, center, jitter[k])
        frames.append(PosedFrame(analytic_render(scene, cam, pose).rgb, pose))
    return PosedImageDataset(cam, frames)


# --- demonstrations ------------------------------------------------------------


@dataclass
class DemoSpec:
    waypoints: list[Se3Pose]
    timesteps: int
    t_grasp: int
    camera_offset: Se3Pose
    object_to_world: Se3Pose

    def __post_init__(self):
        if self.timesteps < 2:
            raise ValueError("a demo needs at least 2 timesteps")
        if not 0 <= self.t_grasp < self.timesteps:
            raise ValueError("t_grasp must lie inside the demo")
        if not self.waypoints:
            raise ValueError("a demo needs at least one waypoint")

    def to_dict(self) -> dict:
        return {"waypoints": [w.to_list() for w in self.waypoints], "timesteps": self.timesteps,
                "t_grasp": self.t_grasp, "camera_offset": self.camera_offset.to_list(),
                "object_to_world": self.object_to_world.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> DemoSpec:
        return cls([Se3Pose.from_list(w) for w in d["waypoints"]], int(d["timesteps"]), int(d["t_grasp"]),
                   Se3Pose.from_list(d["camera_offset"]), Se3Pose.from_list(d["object_to_world"]))


def interpolate_poses(waypoints: list[Se3Pose], timesteps: int) -> list[Se3Pose]:
    """Piecewise-linear translation and shortest-arc rotation through the waypoints."""
    if len(waypoints) == 1:
        return [waypoints[0]] * timesteps
    out = []
    n_seg = len(waypoints) - 1
    for t in range(timesteps):
        s = t / (timesteps - 1) * n_seg
        k = min(int(s), n_seg - 1)
        f = s - k
        a, b = waypoints[k], waypoints[k + 1]
        if f == 0.0:
            out.append(a)
            continue
        trans = a.translation + f * (b.translation - a.translation)
        if np.array_equal(a.rotation, b.rotation):
            rot = a.rotation
        else:
            rel = Rotation.from_matrix(a.rotation.T @ b.rotation).as_rotvec()
            rot = a.rotation @ Rotation.from_rotvec(f * rel).as_matrix()
        out.append(Se3Pose(rot, trans))
    return out


def actions_from_poses(poses: list[Se3Pose], t_grasp: int) -> np.ndarray:
    """(T, 7) actions: world-frame translation delta, relative xyz-Euler delta, grip command.

    The last step repeats a zero motion. The grip command is 1 from ``t_grasp`` on.
    """
    T = len(poses)
    acts = np.zeros((T, 7))
    for t in range(T - 1):
        a, b = poses[t], poses[t + 1]
        acts[t, :3] = b.translation - a.translation
        acts[t, 3:6] = Rotation.from_matrix(a.rotation.T @ b.rotation).as_euler("xyz")
    acts[t_grasp:, 6] = 1.0
    return acts


def object_pose_at(gripper_poses: list[Se3Pose], object_to_world: Se3Pose, t: int, t_grasp: int) -> Se3Pose:
    """World pose of the object: fixed before the grasp, rigid with the gripper after."""
    if t < t_grasp:
        return object_to_world
    return compose(compose(gripper_poses[t], invert(gripper_poses[t_grasp])), object_to_world)


def generate_demo_trajectory(scene: AnalyticScene, spec: DemoSpec, cam: PinholeCamera):
    """Record a synthetic expert demo in ``scene``; returns a pipeline Trajectory."""
    from .pipeline import Step, Trajectory

    grippers = interpolate_poses(spec.waypoints, spec.timesteps)
    actions = actions_from_poses(grippers, spec.t_grasp)
    scene = scene.with_pose(OBJECT, spec.object_to_world)
    steps = []
    for t, g in enumerate(grippers):
        c2w = camera_to_world(g, spec.camera_offset)
        local = {grp: compose(invert(scene.pose_of(grp)), c2w) for grp in scene.groups()}
        if OBJECT in local:
            # the object's view of the camera freezes at the grasp
            local[OBJECT] = camera_to_object_at(grippers, spec.object_to_world, spec.camera_offset,
                                                t, spec.t_grasp)
        r = _render_local(scene, cam, local)
        mask = r.masks.get(OBJECT, np.zeros((cam.height, cam.width)))
        steps.append(Step(r.rgb, g, actions[t], mask))
    return Trajectory(cam, spec.camera_offset, spec.object_to_world, spec.t_grasp, steps)


def default_demo_spec(timesteps: int = 25, t_grasp: int = 8, object_to_world: Se3Pose | None = None) -> DemoSpec:
    """Top-down approach to the workspace object, grasp, then lift and carry sideways.

    The gripper frame is world-aligned, so its -z (and the camera's viewing
    direction) points down at the table; the camera sits 4 cm off the gripper
    axis. With the default 25 steps the lowest waypoint is reached at t = 8.
    """
    obj = object_to_world or Se3Pose.from_translation((0.0, 0.0, 0.05))
    down = np.eye(3)
    p = obj.translation
    waypoints = [
        Se3Pose(down, p + [0.0, 0.0, 0.42]),
        Se3Pose(down, p + [0.0, 0.0, 0.22]),
        Se3Pose(down @ Rotation.from_euler("z", 20, degrees=True).as_matrix(), p + [0.08, 0.04, 0.38]),
        Se3Pose(down @ Rotation.from_euler("z", 35, degrees=True).as_matrix(), p + [0.18, 0.1, 0.34]),
    ]
    return DemoSpec(waypoints, timesteps, t_grasp, Se3Pose.from_translation((0.0, 0.04, 0.0)), obj)
