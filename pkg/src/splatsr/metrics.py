"""Reconstruction quality metrics for multi-band rasters.

PSNR is computed over the full band stack (peak = value-range width);
per-band values are also reported for diagnosis.  SSIM is the canonical
single-scale configuration (11x11 Gaussian window, sigma 1.5, K1 = 0.01,
K2 = 0.03) evaluated per band over valid window positions, then averaged.
SAM is the mean per-pixel angle between spectra, in radians.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeMismatchError
from .image import MultiBandImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SAM_NORM_FLOOR = 1e-12


def _check_pair(a: MultiBandImage, b: MultiBandImage):
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")


def mse(a: MultiBandImage, b: MultiBandImage) -> float:
    _check_pair(a, b)
    diff = a.data - b.data
    return float(np.mean(diff * diff))


def psnr(a: MultiBandImage, b: MultiBandImage, peak: float | None = None) -> float:
    """10*log10(peak^2 / MSE) over all entries; +inf for identical images."""
    _check_pair(a, b)
    if peak is None:
        peak = a.meta.peak
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr_per_band(a: MultiBandImage, b: MultiBandImage, peak: float | None = None) -> list[float]:
    _check_pair(a, b)
    if peak is None:
        peak = a.meta.peak
    out = []
    for band in range(a.meta.bands):
        diff = a.data[band] - b.data[band]
        err = float(np.mean(diff * diff))
        out.append(math.inf if err == 0.0 else 10.0 * math.log10(peak * peak / err))
    return out


def _ssim_window_1d() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    t = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(t * t) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


def _local_mean(img2d: np.ndarray, win: np.ndarray) -> np.ndarray:
    half = SSIM_WINDOW // 2
    out = correlate1d(img2d, win, axis=0)
    out = correlate1d(out, win, axis=1)
    return out[half:-half, half:-half]  # valid positions only


def ssim(a: MultiBandImage, b: MultiBandImage) -> float:
    """Mean single-scale SSIM over bands and valid 11x11 window positions."""
    _check_pair(a, b)
    if a.meta.height < SSIM_WINDOW or a.meta.width < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"image {a.meta.height}x{a.meta.width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    peak = a.meta.peak
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    win = _ssim_window_1d()
    total = 0.0
    for band in range(a.meta.bands):
        x = a.data[band]
        y = b.data[band]
        mu_x = _local_mean(x, win)
        mu_y = _local_mean(y, win)
        var_x = _local_mean(x * x, win) - mu_x * mu_x
        var_y = _local_mean(y * y, win) - mu_y * mu_y
        cov = _local_mean(x * y, win) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        total += float(np.mean(num / den))
    return total / a.meta.bands


def sam(a: MultiBandImage, b: MultiBandImage) -> float:
    """Mean spectral angle in radians; near-zero spectra contribute 0.

    The angle arccos(<u,v>/(|u||v|)) is evaluated as
    2*atan2(|u^ - v^|, |u^ + v^|) on the normalized spectra: arccos loses
    half the significant digits near parallel vectors, while this form is
    exact there (including sam(a, c*a) = 0).
    """
    _check_pair(a, b)
    u = a.pixel_spectra()
    v = b.pixel_spectra()
    nu = np.sqrt(np.einsum("pb,pb->p", u, u))
    nv = np.sqrt(np.einsum("pb,pb->p", v, v))
    ok = (nu > SAM_NORM_FLOOR) & (nv > SAM_NORM_FLOOR)
    un = u[ok] / nu[ok, None]
    vn = v[ok] / nv[ok, None]
    d_minus = np.sqrt(np.einsum("pb,pb->p", un - vn, un - vn))
    d_plus = np.sqrt(np.einsum("pb,pb->p", un + vn, un + vn))
    angles = np.zeros(u.shape[0])
    angles[ok] = 2.0 * np.arctan2(d_minus, d_plus)
    return float(angles.mean())


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    psnr_per_band: list[float] = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["psnr_db", repr(self.psnr)])
            w.writerow(["ssim", repr(self.ssim)])
            w.writerow(["sam_rad", repr(self.sam)])
            for i, v in enumerate(self.psnr_per_band):
                w.writerow([f"psnr_band_{i}", repr(v)])

    def format_table(self) -> str:
        rows = [("PSNR (dB)", f"{self.psnr:.4f}"),
                ("SSIM", f"{self.ssim:.6f}"),
                ("SAM (rad)", f"{self.sam:.6f}")]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {val:>12}" for name, val in rows)


def evaluate(pred: MultiBandImage, gt: MultiBandImage) -> MetricReport:
    return MetricReport(
        psnr=psnr(pred, gt),
        ssim=ssim(pred, gt),
        sam=sam(pred, gt),
        psnr_per_band=psnr_per_band(pred, gt),
    )
