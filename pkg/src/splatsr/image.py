"""Multi-band raster container and the canonical pixel-center coordinate mapping.

All spatial coordinates in this package live in the normalized domain
[-1, 1]^2.  A W x H grid places pixel (column i, row j) at

    x = -1 + (2*i + 1) / W,    y = -1 + (2*j + 1) / H

so grids of every resolution share the same continuous domain and are
symmetric about the origin (half-pixel / "align corners off" convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeMismatchError


@dataclass(frozen=True)
class ImageMeta:
    """Dimensions and value range of a multi-band raster."""

    width: int
    height: int
    bands: int
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.bands < 1:
            raise ParameterError(
                f"image dims must be >= 1, got {self.width}x{self.height}x{self.bands}"
            )
        lo, hi = (float(v) for v in self.value_range)
        if not (lo < hi):
            raise ParameterError(f"value range must satisfy lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def peak(self) -> float:
        lo, hi = self.value_range
        return hi - lo

    @property
    def npixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class MultiBandImage:
    """Band-sequential raster: ``data`` has shape (bands, height, width), float64."""

    meta: ImageMeta
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.meta.bands, self.meta.height, self.meta.width)
        if self.data.shape != expected:
            raise ShapeMismatchError(
                f"data shape {self.data.shape} does not match meta {expected}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("image contains non-finite values")

    @staticmethod
    def from_array(data: np.ndarray, value_range=(0.0, 1.0)) -> "MultiBandImage":
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeMismatchError(f"expected (bands, height, width), got {data.shape}")
        b, h, w = data.shape
        return MultiBandImage(ImageMeta(w, h, b, tuple(value_range)), data)

    def same_shape(self, other: "MultiBandImage") -> bool:
        return self.data.shape == other.data.shape

    def pixel_spectra(self) -> np.ndarray:
        """Spectra as a (H*W, bands) array, pixels in row-major order."""
        b = self.meta.bands
        return self.data.reshape(b, -1).T.copy()


def axis_centers(n: int) -> np.ndarray:
    """Normalized center coordinates of n cells tiling [-1, 1]."""
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def pixel_center_coords(meta: ImageMeta) -> np.ndarray:
    """(H, W, 2) grid of normalized (x, y) pixel centers."""
    xs = axis_centers(meta.width)
    ys = axis_centers(meta.height)
    out = np.empty((meta.height, meta.width, 2))
    out[..., 0] = xs[None, :]
    out[..., 1] = ys[:, None]
    return out


def grid_coords_flat(width: int, height: int) -> np.ndarray:
    """Flat (H*W, 2) pixel-center coordinate list, row-major."""
    xs = axis_centers(width)
    ys = axis_centers(height)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)
