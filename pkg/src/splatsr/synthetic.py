"""Seeded synthetic multi-band test images."""

from __future__ import annotations

import numpy as np

from .image import ImageMeta, MultiBandImage, axis_centers


def make_smooth_image(width: int, height: int, bands: int, seed: int = 0,
                      value_range=(0.0, 1.0), modes: int = 4) -> MultiBandImage:
    """Band-correlated sum of low-frequency plane waves, rescaled to sit
    comfortably inside the value range."""
    rng = np.random.default_rng(seed)
    xs = axis_centers(width)[None, :]
    ys = axis_centers(height)[:, None]
    data = np.zeros((bands, height, width))
    band_pos = np.linspace(0.0, 1.0, bands) if bands > 1 else np.zeros(1)
    for _ in range(modes):
        fx, fy = rng.uniform(-2.0, 2.0, 2) * np.pi
        phase = rng.uniform(0.0, 2.0 * np.pi)
        pattern = np.cos(fx * xs + fy * ys + phase)
        amp = rng.uniform(0.3, 1.0) * np.cos(
            np.pi * band_pos * rng.uniform(0.0, 2.0) + rng.uniform(0.0, 2.0 * np.pi))
        data += amp[:, None, None] * pattern[None, :, :]
    lo, hi = value_range
    span = hi - lo
    dmin, dmax = data.min(), data.max()
    if dmax > dmin:
        data = (data - dmin) / (dmax - dmin)
    else:
        data = np.zeros_like(data) + 0.5
    data = lo + span * (0.15 + 0.7 * data)
    meta = ImageMeta(width, height, bands, tuple(value_range))
    return MultiBandImage(meta, data)
