"""8-bit PNG conventions shared by frames, opacity maps and masks."""
from __future__ import annotations

import numpy as np
from PIL import Image


def quantize(x) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-up."""
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def dequantize(q) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / 255.0


def write_rgb(path, img) -> None:
    Image.fromarray(quantize(img), mode="RGB").save(path)


def write_gray(path, img) -> None:
    Image.fromarray(quantize(img), mode="L").save(path)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return dequantize(np.asarray(im.convert("RGB")))


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return dequantize(np.asarray(im.convert("L")))
