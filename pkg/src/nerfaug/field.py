"""Dense voxel radiance field: raw density and raw RGB on a regular grid.

Grid vertex (x, y, z) sits at ``bbox_min + (x, y, z) / (res - 1) * (bbox_max - bbox_min)``,
so the bounding box corners coincide with the outermost voxels. Arrays are
stored z-major, ``raw_density[z, y, x]`` and ``raw_rgb[z, y, x, c]``, which makes
the flattened order identical to the on-disk order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K

MAGIC = b"NFAF"
VERSION = 1
_HEADER = struct.Struct("<4sI3I6d")


def as_resolution(res) -> tuple[int, int, int]:
    """Accept a single int for a cubic grid or an (nx, ny, nz) triple."""
    if np.isscalar(res):
        return (int(res),) * 3
    res = tuple(int(n) for n in res)
    if len(res) != 3:
        raise ValueError(f"resolution must have 3 components, got {res}")
    return res


class FieldFormatError(ValueError):
    """Bad magic bytes or an otherwise malformed field file."""


class FieldVersionError(FieldFormatError):
    pass


class FieldTruncatedError(FieldFormatError):
    pass


@dataclass(eq=False)
class VoxelRadianceField:
    resolution: tuple[int, int, int]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    raw_density: np.ndarray
    raw_rgb: np.ndarray

    def __post_init__(self):
        self.resolution = as_resolution(self.resolution)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        nx, ny, nz = self.resolution
        if min(self.resolution) < 2:
            raise ValueError("every resolution component must be >= 2")
        if not np.all(self.bbox_min < self.bbox_max):
            raise ValueError("bbox_min must be < bbox_max componentwise")
        self.raw_density = np.ascontiguousarray(self.raw_density)
        self.raw_rgb = np.ascontiguousarray(self.raw_rgb)
        if self.raw_density.shape != (nz, ny, nx):
            raise ValueError(f"raw_density shape {self.raw_density.shape} != {(nz, ny, nx)}")
        if self.raw_rgb.shape != (nz, ny, nx, 3):
            raise ValueError(f"raw_rgb shape {self.raw_rgb.shape} != {(nz, ny, nx, 3)}")
        if not (np.all(np.isfinite(self.raw_density)) and np.all(np.isfinite(self.raw_rgb))):
            raise ValueError("field values must be finite")

    @classmethod
    def filled(cls, resolution, bbox_min, bbox_max, density: float = -2.0, rgb: float = 0.0,
               dtype=np.float32) -> VoxelRadianceField:
        resolution = as_resolution(resolution)
        nx, ny, nz = resolution
        return cls(resolution, bbox_min, bbox_max,
                   np.full((nz, ny, nx), density, dtype=dtype),
                   np.full((nz, ny, nx, 3), rgb, dtype=dtype))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / (np.asarray(self.resolution) - 1)

    def voxel_center(self, x: int, y: int, z: int) -> np.ndarray:
        return self.bbox_min + np.array([x, y, z]) * self.voxel_size

    def packed(self) -> np.ndarray:
        """(n_voxels, 4) float64 array of raw density then raw rgb, file order."""
        grid = np.empty((self.n_voxels, 4))
        grid[:, 0] = self.raw_density.reshape(-1)
        grid[:, 1:] = self.raw_rgb.reshape(-1, 3)
        return grid

    @classmethod
    def from_packed(cls, resolution, bbox_min, bbox_max, grid, dtype=np.float32) -> VoxelRadianceField:
        nx, ny, nz = resolution
        grid = np.asarray(grid).astype(dtype)
        return cls(resolution, bbox_min, bbox_max,
                   grid[:, 0].reshape(nz, ny, nx).copy(), grid[:, 1:].reshape(nz, ny, nx, 3).copy())

    def kernel_args(self):
        """(flat grid, resolution, geo, bbox_min, bbox_max) as the numba kernels expect."""
        res = np.asarray(self.resolution, dtype=np.int64)
        return (self.packed().reshape(-1), res, K.grid_geometry(res, self.bbox_min, self.bbox_max),
                self.bbox_min, self.bbox_max)

    def copy(self) -> VoxelRadianceField:
        return VoxelRadianceField(self.resolution, self.bbox_min.copy(), self.bbox_max.copy(),
                                  self.raw_density.copy(), self.raw_rgb.copy())


def trilinear_sample(field: VoxelRadianceField, point) -> tuple[float, np.ndarray]:
    """Raw (density, rgb) at a world point; (-inf, [-inf]*3) outside the box.

    The -inf sentinel activates to sigma = 0 and rgb = 0.
    """
    grid, res, geo, _, _ = field.kernel_args()
    out = np.empty(4)
    p = np.asarray(point, dtype=np.float64)
    if not K.sample_raw(grid, res, geo, p[0], p[1], p[2], out):
        return -np.inf, np.full(3, -np.inf)
    return float(out[0]), out[1:].copy()


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        return np.where(x == -np.inf, 0.0, np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class FieldSample:
    sigma: float
    rgb: np.ndarray


def activate(raw_density, raw_rgb) -> FieldSample:
    return FieldSample(float(softplus(raw_density)), sigmoid(raw_rgb))


def save_field(field: VoxelRadianceField, path) -> None:
    """Write the NFAF binary format. Values are stored as float32."""
    nx, ny, nz = field.resolution
    header = _HEADER.pack(MAGIC, VERSION, nx, ny, nz, *field.bbox_min, *field.bbox_max)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(field.raw_density, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(field.raw_rgb, dtype="<f4").tobytes())


def load_field(path) -> VoxelRadianceField:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FieldFormatError(f"{path}: not a field file (bad magic {data[:4]!r})")
    if len(data) < _HEADER.size:
        raise FieldTruncatedError(
            f"{path}: header truncated: expected {_HEADER.size} bytes, got {len(data)}")
    _, version, nx, ny, nz, *bbox = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FieldVersionError(f"{path}: unsupported field version {version}")
    n = nx * ny * nz
    expected = _HEADER.size + 4 * n * 4
    if len(data) != expected:
        raise FieldTruncatedError(
            f"{path}: expected {expected} bytes for a {nx}x{ny}x{nz} grid, got {len(data)}")
    off = _HEADER.size
    density = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32)
    rgb = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off + 4 * n).astype(np.float32)
    return VoxelRadianceField((nx, ny, nz), bbox[:3], bbox[3:],
                              density.reshape(nz, ny, nx), rgb.reshape(nz, ny, nx, 3))
