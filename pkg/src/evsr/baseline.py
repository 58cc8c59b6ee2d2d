"""Bicubic upsampling baseline.

Catmull-Rom kernel (a = -0.5), half-pixel coordinate mapping
src = (dst + 0.5) / r - 0.5, taps clamped at the borders. The resize is
separable, so each axis is one small sparse matrix applied by matmul.

For count images the baseline divides the upsampled plane by r*r: bicubic
weights form a partition of unity per output pixel, so the raw upsample
multiplies total mass by about r*r and the division restores it (exactly in
the interior, approximately at clamped borders).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .events import EventCountImage
from .tensor import Tensor


def cubic_kernel(d: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Catmull-Rom weight at distance d (vectorized)."""
    d = np.abs(d)
    w = np.zeros_like(d)
    near = d <= 1.0
    far = (d > 1.0) & (d < 2.0)
    w[near] = (a + 2.0) * d[near] ** 3 - (a + 3.0) * d[near] ** 2 + 1.0
    w[far] = a * d[far] ** 3 - 5.0 * a * d[far] ** 2 + 8.0 * a * d[far] - 4.0 * a
    return w


def resize_matrix(n_in: int, r: int) -> np.ndarray:
    """[r*n_in, n_in] matrix mapping one axis through bicubic interpolation."""
    n_out = n_in * r
    m = np.zeros((n_out, n_in))
    dst = np.arange(n_out)
    src = (dst + 0.5) / r - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n_in - 1)
        w = cubic_kernel(frac - tap)
        np.add.at(m, (dst, idx), w)
    return m


def bicubic_upsample(plane: np.ndarray, r: int) -> np.ndarray:
    """Upsample a 2-D plane by integer factor r. Reproduces constants."""
    r = int(r)
    if r < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {r}")
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ConfigError(f"bicubic_upsample expects a 2-D plane, got {plane.shape}")
    if r == 1:
        return plane.copy()
    rows = resize_matrix(plane.shape[0], r)
    cols = resize_matrix(plane.shape[1], r)
    return rows @ plane @ cols.T


def bicubic_baseline(lr_pos: EventCountImage, lr_neg: EventCountImage,
                     r: int) -> Tensor:
    """Mass-preserving bicubic super-resolution of the two count planes."""
    if lr_pos.counts.shape != lr_neg.counts.shape:
        raise ConfigError(
            f"plane shapes differ: {lr_pos.counts.shape} vs {lr_neg.counts.shape}")
    scale = 1.0 / (r * r)
    up = np.stack([bicubic_upsample(lr_pos.counts, r) * scale,
                   bicubic_upsample(lr_neg.counts, r) * scale])
    return Tensor(up.astype(np.float32))
