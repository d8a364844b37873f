"""Erase the original object and paste the rendered novel one."""
from __future__ import annotations

import numpy as np


def _check(a, b, what):
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what}: shapes {a.shape} and {b.shape} disagree")


def inpaint_background(frame, original_mask, background_render) -> np.ndarray:
    """Frame with the masked pixels swapped for the background render."""
    frame = np.asarray(frame)
    background_render = np.asarray(background_render)
    m = np.asarray(original_mask) > 0.5
    _check(frame, m, "inpaint mask")
    _check(frame, background_render, "inpaint background")
    if frame.shape != background_render.shape:
        raise ValueError("frame and background render must have identical shapes")
    return np.where(m[..., None], background_render, frame)


def blend(i_nerf, m_nerf, i_no_object) -> np.ndarray:
    """I_nerf * M + I_no_object * (1 - M), elementwise; M may be hard or soft."""
    i_nerf = np.asarray(i_nerf, dtype=np.float64)
    i_no_object = np.asarray(i_no_object, dtype=np.float64)
    m = np.asarray(m_nerf, dtype=np.float64)
    if i_nerf.shape != i_no_object.shape:
        raise ValueError(f"blend: image shapes {i_nerf.shape} and {i_no_object.shape} disagree")
    _check(i_nerf, m, "blend mask")
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("blend mask must lie in [0, 1]")
    m = m[..., None]
    return i_nerf * m + i_no_object * (1.0 - m)
