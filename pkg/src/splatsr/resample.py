"""Separable bilinear / bicubic (Catmull-Rom, a = -0.5) resampling.

Output pixel i (of n_out) samples the source at fractional index
(i + 0.5) * n_src / n_out - 0.5, the pixel-center mapping shared with the
rest of the package.  Borders replicate.  Downsampling applies the plain
4-tap kernel (no prefilter); that is the documented "bicubic" baseline.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .image import ImageMeta, MultiBandImage

CUBIC_A = -0.5


def catmull_rom_weight(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5, support (-2, 2)."""
    at = np.abs(t)
    w = np.zeros_like(at)
    near = at <= 1.0
    far = (at > 1.0) & (at < 2.0)
    w[near] = ((CUBIC_A + 2.0) * at[near] - (CUBIC_A + 3.0)) * at[near] * at[near] + 1.0
    w[far] = CUBIC_A * (((at[far] - 5.0) * at[far] + 8.0) * at[far] - 4.0)
    return w


def _src_positions(n_out: int, n_src: int) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * (n_src / n_out) - 0.5


def _resize_axis(arr: np.ndarray, n_out: int, axis: int, kernel: str) -> np.ndarray:
    n_src = arr.shape[axis]
    pos = _src_positions(n_out, n_src)
    base = np.floor(pos).astype(np.int64)
    if kernel == "bilinear":
        taps, offs = (0, 1), pos - base
        weights = [1.0 - offs, offs]
    elif kernel == "bicubic":
        taps = (-1, 0, 1, 2)
        weights = [catmull_rom_weight(pos - (base + t)) for t in taps]
    else:
        raise ParameterError(f"unknown resampling kernel {kernel!r}")

    shape = [1] * arr.ndim
    shape[axis] = n_out
    out = np.zeros([n_out if ax == axis else s for ax, s in enumerate(arr.shape)])
    for t, w in zip(taps, weights):
        idx = np.clip(base + t, 0, n_src - 1)
        out += w.reshape(shape) * np.take(arr, idx, axis=axis)
    return out


def resize_array(data: np.ndarray, out_h: int, out_w: int, kernel: str = "bilinear") -> np.ndarray:
    """Resize a (bands, H, W) array to (bands, out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"target size must be >= 1, got {out_h}x{out_w}")
    out = _resize_axis(data, out_h, axis=1, kernel=kernel)
    return _resize_axis(out, out_w, axis=2, kernel=kernel)


def resize(img: MultiBandImage, out_h: int, out_w: int, kernel: str = "bilinear") -> MultiBandImage:
    data = resize_array(img.data, out_h, out_w, kernel)
    meta = ImageMeta(out_w, out_h, img.meta.bands, img.meta.value_range)
    return MultiBandImage(meta, data)
