"""Catmull-Rom bicubic resampling as separable weight matrices.

Downscaling widens the kernel by the scale factor (anti-aliasing).  Taps that
fall outside the image are clamped to the nearest edge pixel, and each row of
weights is normalized to sum to one.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import ShapeError

CUBIC_A = -0.5


def cubic(x, a: float = CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def weight_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) float64 matrix mapping a 1-D signal to the new size."""
    scale = in_size / out_size
    support = max(scale, 1.0)
    m = np.zeros((out_size, in_size))
    for i in range(out_size):
        center = (i + 0.5) * scale - 0.5
        lo = int(np.floor(center - 2 * support))
        hi = int(np.ceil(center + 2 * support))
        taps = np.arange(lo, hi + 1)
        w = cubic((taps - center) / support)
        w /= w.sum()
        np.add.at(m[i], np.clip(taps, 0, in_size - 1), w)
    m.setflags(write=False)
    return m


def _apply(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    mh = weight_matrix(img.shape[-2], out_h)
    mw = weight_matrix(img.shape[-1], out_w)
    return mh @ np.asarray(img, dtype=np.float64) @ mw.T


def bicubic_downsample(hr: np.ndarray, factor: int) -> np.ndarray:
    """Anti-aliased bicubic reduction of the last two axes, clamped to [0, 1]."""
    h, w = hr.shape[-2:]
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if h % factor or w % factor:
        raise ShapeError(f"image {h}x{w} not divisible by factor {factor}")
    out = np.clip(_apply(hr, h // factor, w // factor), 0.0, 1.0)
    return out.astype(hr.dtype if np.issubdtype(hr.dtype, np.floating) else np.float64)


def bicubic_upsample(lr: np.ndarray, factor: int) -> np.ndarray:
    """Plain bicubic enlargement of the last two axes (no clamping).

    Evaluated in the input's own precision, matching the network head exactly.
    """
    h, w = lr.shape[-2:]
    dtype = lr.dtype if np.issubdtype(lr.dtype, np.floating) else np.float64
    mh, mw = upsample_matrices(h, w, factor, dtype)
    return mh @ np.asarray(lr, dtype=dtype) @ mw.T


def upsample_matrices(h: int, w: int, factor: int, dtype=np.float64):
    return (weight_matrix(h, h * factor).astype(dtype),
            weight_matrix(w, w * factor).astype(dtype))
