"""numba kernels for ray marching a voxel field and backpropagating through it.

Every kernel processes a half-open range of rays ``[start, end)`` and writes
only to that slice of its outputs, so callers can split work across threads
without changing a single bit of the result. Randomness is a counter hash of
(seed, ray id, sample index), never a stateful generator.

The grid is passed flat: voxel ``i`` occupies ``grid[4*i : 4*i + 4]`` as
(raw density, raw r, raw g, raw b), with ``i = (z * ny + y) * nx + x``.
``geo`` carries ``(bmin_x, bmin_y, bmin_z, scale_x, scale_y, scale_z)`` where
``scale = (res - 1) / (bmax - bmin)`` maps world offsets to grid units.
"""
import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True, error_model="numpy")

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def grid_geometry(res, bmin, bmax) -> np.ndarray:
    res = np.asarray(res, dtype=np.float64)
    return np.concatenate([bmin, (res - 1) / (np.asarray(bmax) - np.asarray(bmin))]).astype(np.float64)


@njit(**_JIT)
def splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & MASK64
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & MASK64
    return z ^ (z >> np.uint64(31))


@njit(**_JIT)
def uniform01(seed, a, b):
    """Deterministic uniform in [0, 1) keyed by three integers."""
    h = splitmix64(np.uint64(seed) & MASK64)
    h = splitmix64(h ^ (np.uint64(a) & MASK64))
    h = splitmix64(h ^ (np.uint64(b) & MASK64))
    return (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(**_JIT)
def softplus(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(**_JIT)
def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(**_JIT)
def ray_box(ox, oy, oz, dx, dy, dz, bmin, bmax):
    """Slab test; returns (t_enter, t_exit), empty when t_enter > t_exit."""
    t0 = -np.inf
    t1 = np.inf
    for a in range(3):
        o = ox if a == 0 else (oy if a == 1 else oz)
        d = dx if a == 0 else (dy if a == 1 else dz)
        if d == 0.0:
            if o < bmin[a] or o > bmax[a]:
                return 1.0, 0.0
        else:
            inv = 1.0 / d
            ta = (bmin[a] - o) * inv
            tb = (bmax[a] - o) * inv
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    return t0, t1


@njit(**_JIT)
def grid_corner(px, py, pz, res, geo):
    """Flat index of the base voxel and the fractional offsets; index -1 outside the box."""
    nx = res[0]
    ny = res[1]
    nz = res[2]
    gx = (px - geo[0]) * geo[3]
    gy = (py - geo[1]) * geo[4]
    gz = (pz - geo[2]) * geo[5]
    if not (0.0 <= gx <= nx - 1 and 0.0 <= gy <= ny - 1 and 0.0 <= gz <= nz - 1):
        return -1, 0.0, 0.0, 0.0
    x0 = min(int(gx), nx - 2)
    y0 = min(int(gy), ny - 2)
    z0 = min(int(gz), nz - 2)
    return (z0 * ny + y0) * nx + x0, gx - x0, gy - y0, gz - z0


@njit(**_JIT)
def sample_raw(grid, res, geo, px, py, pz, out):
    """Trilinear raw values written to out[0:4]; returns False outside the box."""
    idx, fx, fy, fz = grid_corner(px, py, pz, res, geo)
    if idx < 0:
        return False
    sx = 4
    sy = 4 * res[0]
    sz = 4 * res[0] * res[1]
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    w0 = gx * gy * gz
    w1 = fx * gy * gz
    w2 = gx * fy * gz
    w3 = fx * fy * gz
    w4 = gx * gy * fz
    w5 = fx * gy * fz
    w6 = gx * fy * fz
    w7 = fx * fy * fz
    b = 4 * idx
    for ch in range(4):
        j = b + ch
        out[ch] = (w0 * grid[j] + w1 * grid[j + sx] + w2 * grid[j + sy] + w3 * grid[j + sx + sy]
                   + w4 * grid[j + sz] + w5 * grid[j + sz + sx] + w6 * grid[j + sz + sy]
                   + w7 * grid[j + sz + sy + sx])
    return True


@njit(**_JIT)
def sample_ts(a, b, n, stratified, seed, ray_id, ts):
    step = (b - a) / n
    for i in range(n):
        if stratified:
            ts[i] = a + (i + uniform01(seed, ray_id, i)) * step
        else:
            ts[i] = a + (i + 0.5) * step


@njit(**_JIT)
def ray_interval(ox, oy, oz, dx, dy, dz, t_near, t_far, bmin, bmax, clip):
    a = t_near
    b = t_far
    if clip:
        t0, t1 = ray_box(ox, oy, oz, dx, dy, dz, bmin, bmax)
        a = max(a, t0)
        b = min(b, t1)
    return a, b


@njit(**_JIT)
def render_rays(grid, res, geo, bmin, bmax, origins, dirs, t_near, t_far,
                n, bg, stratified, seed, ray_ids, clip, out_rgb, out_opacity, start, end):
    ts = np.empty(n)
    raw = np.empty(4)
    for r in range(start, end):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        a, b = ray_interval(ox, oy, oz, dx, dy, dz, t_near[r], t_far[r], bmin, bmax, clip)
        T = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        if b > a:
            sample_ts(a, b, n, stratified, seed, ray_ids[r], ts)
            for i in range(n):
                t = ts[i]
                if not sample_raw(grid, res, geo, ox + t * dx, oy + t * dy, oz + t * dz, raw):
                    continue
                delta = (ts[i + 1] if i + 1 < n else b) - t
                alpha = 1.0 - np.exp(-softplus(raw[0]) * delta)
                w = T * alpha
                c0 += w * sigmoid(raw[1])
                c1 += w * sigmoid(raw[2])
                c2 += w * sigmoid(raw[3])
                T *= 1.0 - alpha
        out_rgb[r, 0] = c0 + T * bg[0]
        out_rgb[r, 1] = c1 + T * bg[1]
        out_rgb[r, 2] = c2 + T * bg[2]
        out_opacity[r] = 1.0 - T


@njit(**_JIT)
def loss_grad_rays(grid, res, geo, bmin, bmax, origins, dirs, t_near, t_far,
                   n, bg, stratified, seed, ray_ids, clip, targets, scale,
                   out_loss, out_ts, out_g, start, end):
    """Per-ray squared error and its gradient w.r.t. the raw values at each sample.

    ``scale`` multiplies the per-ray loss gradient (2 / batch size for a mean).
    ``out_g[r, i]`` receives d loss / d (raw density, raw r, raw g, raw b) at
    sample ``i``. Samples outside the box get ts = nan so the scatter pass
    skips them.
    """
    sig = np.empty(n)
    dsig = np.empty(n)
    alpha = np.empty(n)
    trans = np.empty(n)
    delta = np.empty(n)
    col = np.empty((n, 3))
    inside = np.empty(n, dtype=np.bool_)
    raw = np.empty(4)
    for r in range(start, end):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        a, b = ray_interval(ox, oy, oz, dx, dy, dz, t_near[r], t_far[r], bmin, bmax, clip)
        ts = out_ts[r]
        g = out_g[r]
        g[:] = 0.0
        if not b > a:
            ts[:] = np.nan
            e0 = bg[0] - targets[r, 0]
            e1 = bg[1] - targets[r, 1]
            e2 = bg[2] - targets[r, 2]
            out_loss[r] = e0 * e0 + e1 * e1 + e2 * e2
            continue
        sample_ts(a, b, n, stratified, seed, ray_ids[r], ts)
        T = 1.0
        C0 = 0.0
        C1 = 0.0
        C2 = 0.0
        for i in range(n):
            t = ts[i]
            delta[i] = (ts[i + 1] if i + 1 < n else b) - t
            trans[i] = T
            inside[i] = sample_raw(grid, res, geo, ox + t * dx, oy + t * dy, oz + t * dz, raw)
            if not inside[i]:
                alpha[i] = 0.0
                continue
            sig[i] = softplus(raw[0])
            dsig[i] = sigmoid(raw[0])
            alpha[i] = 1.0 - np.exp(-sig[i] * delta[i])
            col[i, 0] = sigmoid(raw[1])
            col[i, 1] = sigmoid(raw[2])
            col[i, 2] = sigmoid(raw[3])
            w = T * alpha[i]
            C0 += w * col[i, 0]
            C1 += w * col[i, 1]
            C2 += w * col[i, 2]
            T *= 1.0 - alpha[i]
        # T is now the transmittance past the last sample
        e0 = C0 + T * bg[0] - targets[r, 0]
        e1 = C1 + T * bg[1] - targets[r, 1]
        e2 = C2 + T * bg[2] - targets[r, 2]
        out_loss[r] = e0 * e0 + e1 * e1 + e2 * e2
        g0 = scale * e0
        g1 = scale * e1
        g2 = scale * e2
        # S = colour arriving from behind sample i, background included
        S0 = T * bg[0]
        S1 = T * bg[1]
        S2 = T * bg[2]
        for i in range(n - 1, -1, -1):
            if not inside[i]:
                ts[i] = np.nan
                continue
            after = trans[i] * (1.0 - alpha[i])
            d0 = delta[i] * (after * col[i, 0] - S0)
            d1 = delta[i] * (after * col[i, 1] - S1)
            d2 = delta[i] * (after * col[i, 2] - S2)
            w = trans[i] * alpha[i]
            g[i, 0] = (g0 * d0 + g1 * d1 + g2 * d2) * dsig[i]
            g[i, 1] = g0 * w * col[i, 0] * (1.0 - col[i, 0])
            g[i, 2] = g1 * w * col[i, 1] * (1.0 - col[i, 1])
            g[i, 3] = g2 * w * col[i, 2] * (1.0 - col[i, 2])
            S0 += w * col[i, 0]
            S1 += w * col[i, 1]
            S2 += w * col[i, 2]


@njit(**_JIT)
def scatter_grads(res, geo, origins, dirs, ts, g, grad, touched):
    """Serial, fixed-order accumulation of per-sample gradients onto grid corners.

    ``grad`` is flat with the grid's packing; ``touched`` is per voxel.
    """
    sy = res[0]
    sz = res[0] * res[1]
    R, n = ts.shape
    for r in range(R):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        for i in range(n):
            t = ts[r, i]
            if np.isnan(t):
                continue
            idx, fx, fy, fz = grid_corner(ox + t * dx, oy + t * dy, oz + t * dz, res, geo)
            if idx < 0:
                continue
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            for k in range(8):
                ix = k & 1
                iy = (k >> 1) & 1
                iz = (k >> 2) & 1
                w = (fx if ix else gx) * (fy if iy else gy) * (fz if iz else gz)
                v = idx + ix + iy * sy + iz * sz
                touched[v] = True
                b = 4 * v
                grad[b] += w * g[r, i, 0]
                grad[b + 1] += w * g[r, i, 1]
                grad[b + 2] += w * g[r, i, 2]
                grad[b + 3] += w * g[r, i, 3]
