"""Independent reference implementations the package is checked against.

Nothing here imports the code under test except plain data types.
"""
import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation


def hom(pose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = pose.rotation
    m[:3, 3] = pose.translation
    return m


def random_matrix(rng) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = Rotation.random(random_state=rng).as_matrix()
    m[:3, 3] = rng.uniform(-2, 2, 3)
    return m


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def corner_trilinear(density, rgb, bmin, bmax, p):
    """Eight-corner weighted sum on a vertex-aligned z-major grid; None outside."""
    nz, ny, nx = density.shape
    res = np.array([nx, ny, nz])
    g = (np.asarray(p) - bmin) / (bmax - bmin) * (res - 1)
    if np.any(g < 0) or np.any(g > res - 1):
        return None
    i0 = np.minimum(np.floor(g).astype(int), res - 2)
    f = g - i0
    d = 0.0
    c = np.zeros(3)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1]) * (f[2] if dz else 1 - f[2])
                x, y, z = i0 + (dx, dy, dz)
                d += w * density[z, y, x]
                c += w * rgb[z, y, x]
    return d, c


def box_interval(o, d, bmin, bmax):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (bmin - o) / d
        b = (bmax - o) / d
    lo = np.nanmax(np.minimum(a, b))
    hi = np.nanmin(np.maximum(a, b))
    return lo, hi


def reference_render(density, rgb, bmin, bmax, o, d, n, t_near, t_far, bg, clip=True):
    """Midpoint-quadrature render of one ray, trilinear via scipy map_coordinates."""
    density = np.asarray(density, float)
    rgb = np.asarray(rgb, float)
    bmin = np.asarray(bmin, float)
    bmax = np.asarray(bmax, float)
    a, b = t_near, t_far
    if clip:
        lo, hi = box_interval(np.asarray(o, float), np.asarray(d, float), bmin, bmax)
        a, b = max(a, lo), min(b, hi)
    if not b > a:
        return np.asarray(bg, float), 0.0
    step = (b - a) / n
    t = a + (np.arange(n) + 0.5) * step
    delta = np.append(np.diff(t), b - t[-1])
    pts = np.asarray(o) + t[:, None] * np.asarray(d)
    nz, ny, nx = density.shape
    res = np.array([nx, ny, nz])
    g = (pts - bmin) / (bmax - bmin) * (res - 1)
    inside = np.all((g >= 0) & (g <= res - 1), axis=1)
    coords = g[:, ::-1].T  # (z, y, x) order for the z-major arrays
    raw_d = ndimage.map_coordinates(density, coords, order=1, mode="nearest")
    raw_c = np.stack([ndimage.map_coordinates(rgb[..., k], coords, order=1, mode="nearest")
                      for k in range(3)], axis=1)
    sigma = np.where(inside, softplus(raw_d), 0.0)
    col = np.where(inside[:, None], sigmoid(raw_c), 0.0)
    alpha = 1.0 - np.exp(-sigma * delta)
    trans = np.concatenate([[1.0], np.cumprod(1.0 - alpha)[:-1]])
    w = trans * alpha
    out = (w[:, None] * col).sum(0) + np.prod(1.0 - alpha) * np.asarray(bg, float)
    return out, float(w.sum())


def sphere_hit_mask(cam_dirs_world, origin, center, radius):
    """Boolean ray-sphere hit test, per ray (no compositing)."""
    oc = origin - np.asarray(center)
    b = cam_dirs_world @ oc
    c = oc @ oc - radius ** 2
    disc = b * b - c
    return (disc > 0) & (-b + np.sqrt(np.maximum(disc, 0)) > 0)


def adam_unrolled(p, grads, lr, b1, b2, eps):
    """Adam written out step by step in scalar form."""
    m = v = 0.0
    for k, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** k)
        vhat = v / (1 - b2 ** k)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


def psnr(a, b):
    mse = np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)
    return float("inf") if mse == 0 else -10 * np.log10(mse)


def voxelize(primitives, bbox_min, bbox_max, res, inside_raw=60.0, outside_raw=-30.0):
    """Hand-built field: opaque at grid vertices inside any primitive, empty elsewhere.

    ``primitives`` holds (shape, params, rgb) triples in the field's frame.
    Returns (raw_density, raw_rgb) z-major arrays.
    """
    nx, ny, nz = res
    bmin, bmax = np.asarray(bbox_min, float), np.asarray(bbox_max, float)
    zs, ys, xs = np.meshgrid(*(np.linspace(bmin[k], bmax[k], n) for k, n in ((2, nz), (1, ny), (0, nx))),
                             indexing="ij")
    pts = np.stack([xs, ys, zs], axis=-1)
    dens = np.full((nz, ny, nx), outside_raw)
    rgb = np.zeros((nz, ny, nx, 3))
    for shape, params, color in primitives:
        p = np.asarray(params, float)
        if shape == "sphere":
            inside = np.linalg.norm(pts - p[:3], axis=-1) <= p[3]
        else:
            inside = np.all((pts >= p[:3]) & (pts <= p[3:]), axis=-1)
        dens[inside] = inside_raw
        c = np.clip(np.asarray(color, float), 1e-3, 1 - 1e-3)
        rgb[inside] = np.log(c / (1 - c))
    return dens, rgb
