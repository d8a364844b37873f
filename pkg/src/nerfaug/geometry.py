"""Rigid transforms, the pinhole camera, ray generation and the gripper/object pose chain.

Camera frame convention: +x right, +y up, camera looks down -z. Image origin is
the top-left pixel and pixel centers sit at (u + 0.5, v + 0.5). All poses are
camera-to-world (or, generally, child-to-parent) transforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

ORTHONORMAL_TOL = 1e-6


class PoseError(ValueError):
    pass


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Se3Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise PoseError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMAL_TOL:
            raise PoseError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise PoseError("rotation has det != 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Se3Pose:
        return cls()

    @classmethod
    def from_translation(cls, t) -> Se3Pose:
        return cls(np.eye(3), t)

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> Se3Pose:
        return cls(Rotation.from_rotvec(np.asarray(rotvec, float)).as_matrix(), t)

    @classmethod
    def from_matrix(cls, m) -> Se3Pose:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            m = m.reshape(4, 4)
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise PoseError("bottom row of a homogeneous transform must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        """Row-major list of the 16 entries of the homogeneous matrix."""
        return [float(x) for x in self.as_matrix().ravel()]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> Se3Pose:
        if len(values) != 16:
            raise PoseError(f"expected 16 numbers for a pose, got {len(values)}")
        return cls.from_matrix(np.asarray(values, dtype=np.float64).reshape(4, 4))

    def apply(self, points) -> np.ndarray:
        """Transform points (..., 3) from the child frame into the parent frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def __matmul__(self, other: Se3Pose) -> Se3Pose:
        return compose(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Se3Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"Se3Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: Se3Pose, b: Se3Pose) -> Se3Pose:
    """a * b as homogeneous transforms."""
    return Se3Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Se3Pose) -> Se3Pose:
    Rt = p.rotation.T
    return Se3Pose(Rt, -(Rt @ p.translation))


def camera_to_world(gripper: Se3Pose, camera_offset: Se3Pose) -> Se3Pose:
    return compose(gripper, camera_offset)


def camera_to_object(object_to_world: Se3Pose, camera_to_world: Se3Pose) -> Se3Pose:
    return compose(invert(object_to_world), camera_to_world)


def camera_to_object_at(
    trajectory_poses: Sequence[Se3Pose],
    object_to_world: Se3Pose,
    camera_offset: Se3Pose,
    t: int,
    t_grasp: int,
) -> Se3Pose:
    """Camera pose in the object frame at timestep ``t``.

    Once the object is grasped it rides with the gripper, so every query at or
    after ``t_grasp`` returns the value computed at ``t_grasp``.
    """
    n = len(trajectory_poses)
    if not 0 <= t < n:
        raise IndexError(f"timestep {t} outside trajectory of length {n}")
    if not 0 <= t_grasp < n:
        raise IndexError(f"t_grasp {t_grasp} outside trajectory of length {n}")
    k = min(t, t_grasp)
    return camera_to_object(object_to_world, camera_to_world(trajectory_poses[k], camera_offset))


def sample_pose_noise(sigma_rot: float, sigma_trans: float, rng: np.random.Generator) -> Se3Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(0.0, sigma_rot) if sigma_rot > 0 else 0.0
    trans = rng.normal(0.0, sigma_trans, size=3) if sigma_trans > 0 else np.zeros(3)
    return Se3Pose.from_rotvec(axis * angle, trans)


def perturb_pose(p: Se3Pose, sigma_rot: float, sigma_trans: float, seed: int) -> Se3Pose:
    """Right-multiply ``p`` by a random rigid perturbation.

    The rotation is an axis-angle with a uniformly random axis and a Gaussian
    angle of std ``sigma_rot``; translation components are Gaussian with std
    ``sigma_trans``.
    """
    if sigma_rot < 0 or sigma_trans < 0:
        raise ValueError("noise scales must be non-negative")
    if sigma_rot == 0 and sigma_trans == 0:
        return p
    return compose(p, sample_pose_noise(sigma_rot, sigma_trans, np.random.default_rng(seed)))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Se3Pose:
    """Camera-to-world pose at ``eye`` whose -z axis points at ``target``."""
    eye = np.asarray(eye, float)
    forward = np.asarray(target, float) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, float)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # looking along the up vector; any perpendicular works
        right = np.cross(forward, [1.0, 0.0, 0.0] if abs(forward[0]) < 0.9 else [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    R = np.stack([right, true_up, -forward], axis=1)
    return Se3Pose(R, eye)


@dataclass(frozen=True)
class PinholeCamera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> PinholeCamera:
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(width, height, f, f, width / 2, height / 2)

    def scaled(self, width: int, height: int) -> PinholeCamera:
        sx, sy = width / self.width, height / self.height
        return PinholeCamera(width, height, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)

    def project(self, points_cam) -> np.ndarray:
        """Project camera-frame points to continuous pixel coordinates (u, v)."""
        p = np.asarray(points_cam, float)
        z = -p[..., 2]
        u = self.fx * p[..., 0] / z + self.cx
        v = -self.fy * p[..., 1] / z + self.cy
        # undo the half-pixel shift so integer u, v name pixel indices
        return np.stack([u - 0.5, v - 0.5], axis=-1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("width", "height", "fx", "fy", "cx", "cy")}

    @classmethod
    def from_dict(cls, d: dict) -> PinholeCamera:
        return cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = 1e3

    def __post_init__(self):
        o = _frozen(self.origin, (3,))
        d = _frozen(self.direction, (3,))
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        if not 0 <= self.t_near < self.t_far:
            raise ValueError("need 0 <= t_near < t_far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


def camera_directions(cam: PinholeCamera, u, v) -> np.ndarray:
    """Unit camera-frame directions for pixel indices (broadcasting)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.stack(
        np.broadcast_arrays((u + 0.5 - cam.cx) / cam.fx, -(v + 0.5 - cam.cy) / cam.fy, -np.ones_like(u + v)),
        axis=-1,
    )
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_ray(cam: PinholeCamera, camera_pose: Se3Pose, u: float, v: float,
                 t_near: float = 0.0, t_far: float = 1e3) -> Ray:
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise IndexError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    d = camera_pose.rotation @ camera_directions(cam, u, v)
    d = d / np.linalg.norm(d)
    return Ray(camera_pose.translation, d, t_near, t_far)


def camera_rays(cam: PinholeCamera, camera_pose: Se3Pose) -> tuple[np.ndarray, np.ndarray]:
    """World-frame origins and unit directions for every pixel, shape (H, W, 3)."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width]
    d = camera_directions(cam, u, v) @ camera_pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera_pose.translation, d.shape).copy()
    return o, d
