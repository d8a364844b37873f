"""Locate the original object by disagreement with a rendered object-free background."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)


def candidate_pixels(frame, background_render, threshold: float) -> np.ndarray:
    """Boolean map of pixels whose max-channel absolute difference exceeds ``threshold``."""
    frame = np.asarray(frame, dtype=np.float64)
    background_render = np.asarray(background_render, dtype=np.float64)
    if frame.shape != background_render.shape:
        raise ValueError(f"frame {frame.shape} and background {background_render.shape} differ in shape")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    return np.max(np.abs(frame - background_render), axis=-1) > threshold


def segment_by_background(frame, background_render, threshold: float = 0.05, min_blob: int = 8) -> np.ndarray:
    """Hard mask of the object; 8-connected blobs smaller than ``min_blob`` are dropped."""
    cand = candidate_pixels(frame, background_render, threshold)
    labels, n = ndimage.label(cand, structure=_EIGHT)
    if n == 0:
        return np.zeros(cand.shape)
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_blob
    keep[0] = False
    return keep[labels].astype(np.float64)


def dilate_mask(mask, radius: int = 1) -> np.ndarray:
    """Dilate with a (2r + 1) x (2r + 1) square."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=np.float64)
    if radius == 0:
        return mask.copy()
    return ndimage.maximum_filter(mask, size=2 * radius + 1, mode="constant", cval=0.0)


def iou(a, b) -> float:
    """Intersection over union of two hard masks; 1.0 when both are empty."""
    a = np.asarray(a) > 0.5
    b = np.asarray(b) > 0.5
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
