"""Separable linear resampling: Keys bicubic resize and Gaussian blur.

Both are expressed as a pair of dense 1-D operator matrices applied along
rows and columns, so the backward pass is just the transposed product.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from ddcn.core.tensor import Tensor, astensor, make
from ddcn.errors import DimensionError

KEYS_A = -0.5


def keys_kernel(x, a: float = KEYS_A):
    """Keys cubic convolution kernel."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, scale: Fraction) -> np.ndarray:
    """(n_out, n_in) operator for one axis; half-pixel centres, edge clamped."""
    n_out = math.floor(scale * n_in)
    s = float(scale)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) / s - 0.5
        base = math.floor(src)
        for k in range(-1, 3):
            idx = base + k
            m[i, min(max(idx, 0), n_in - 1)] += keys_kernel(src - idx)
    m.setflags(write=False)
    return m


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ceil(4*sigma)."""
    radius = math.ceil(4 * sigma)
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-k * k / (2 * sigma * sigma))
    return taps / taps.sum()


@lru_cache(maxsize=64)
def gaussian_matrix(n: int, sigma: float) -> np.ndarray:
    """(n, n) blur operator with reflect (edge-excluded mirror) padding."""
    taps = gaussian_taps(sigma)
    radius = len(taps) // 2
    src = np.pad(np.arange(n), radius, mode="reflect") if n > 1 else np.zeros(n + 2 * radius, int)
    m = np.zeros((n, n))
    for i in range(n):
        np.add.at(m[i], src[i:i + 2 * radius + 1], taps)
    m.setflags(write=False)
    return m


def separable(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str) -> Tensor:
    """out[c] = rows @ x[c] @ cols.T"""
    x = astensor(x)
    if x.ndim != 3:
        raise DimensionError(f"{op}: expected (C,H,W), got {x.shape}")
    out = rows @ x.data @ cols.T
    return make(out, (x,), lambda g: (rows.T @ g @ cols,), op)


def bicubic_resize(x: Tensor, scale) -> Tensor:
    """Resize (C,H,W) by a positive rational ``scale`` to (C, floor(sH), floor(sW))."""
    scale = Fraction(scale).limit_denominator(1 << 20)
    if scale <= 0:
        raise DimensionError(f"scale must be positive, got {scale}")
    x = astensor(x)
    _, h, w = x.shape
    if math.floor(scale * h) < 1 or math.floor(scale * w) < 1:
        raise DimensionError(f"scale {scale} collapses {h}x{w} to nothing")
    return separable(x, bicubic_matrix(h, scale), bicubic_matrix(w, scale), "bicubic_resize")


def gaussian_blur(x: Tensor, sigma: float) -> Tensor:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = astensor(x)
    _, h, w = x.shape
    return separable(x, gaussian_matrix(h, float(sigma)), gaussian_matrix(w, float(sigma)),
                     "gaussian_blur")
