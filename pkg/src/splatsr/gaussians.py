"""Anisotropic 2D Gaussian set: raw parameters, constrained form, covariance algebra.

One Gaussian per source pixel.  Unconstrained raw values map to the working
parameterization through fixed activations:

    center   X = X_init + tanh(raw),  same for Y
    scale    sigma = max(softplus(raw), SIGMA_FLOOR)
    corr     rho = clamp(tanh(raw), +/-(1 - RHO_MARGIN))
    feature  F = relu(F_base + raw)        (F_base = source pixel spectrum)
    gamma    passed through unchanged      (similarity temperature, global)

The floors keep the covariance safely invertible for any finite raw input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeMismatchError
from .image import ImageMeta, MultiBandImage, pixel_center_coords

SIGMA_FLOOR = 1e-4
RHO_MARGIN = 1e-4
TWO_PI = 2.0 * np.pi


def softplus(z):
    # log1p(exp(-|z|)) + max(z, 0) is overflow-safe for any finite z
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def sigmoid(z):
    out = np.empty_like(np.asarray(z, dtype=np.float64))
    zp = np.asarray(z) >= 0
    out[zp] = 1.0 / (1.0 + np.exp(-np.asarray(z)[zp]))
    ez = np.exp(np.asarray(z)[~zp])
    out[~zp] = ez / (1.0 + ez)
    return out


@dataclass
class RawGaussianParams:
    """Unconstrained optimizable values, one entry per Gaussian (N = H*W).

    ``feat_off`` has shape (N, bands); the rest are (N,).  ``gamma`` is the
    single global temperature of the reference-aware weighting.
    """

    x_off: np.ndarray
    y_off: np.ndarray
    sigma_x_raw: np.ndarray
    sigma_y_raw: np.ndarray
    rho_raw: np.ndarray
    feat_off: np.ndarray
    gamma: float = 0.0

    @property
    def count(self) -> int:
        return self.x_off.shape[0]

    @property
    def bands(self) -> int:
        return self.feat_off.shape[1]

    @staticmethod
    def zeros(n: int, bands: int) -> "RawGaussianParams":
        return RawGaussianParams(
            x_off=np.zeros(n),
            y_off=np.zeros(n),
            sigma_x_raw=np.zeros(n),
            sigma_y_raw=np.zeros(n),
            rho_raw=np.zeros(n),
            feat_off=np.zeros((n, bands)),
            gamma=0.0,
        )

    def copy(self) -> "RawGaussianParams":
        return RawGaussianParams(
            self.x_off.copy(), self.y_off.copy(),
            self.sigma_x_raw.copy(), self.sigma_y_raw.copy(),
            self.rho_raw.copy(), self.feat_off.copy(), float(self.gamma),
        )

    def per_gaussian_arrays(self):
        """(name, array) pairs for the per-Gaussian parameter classes."""
        return [
            ("x_off", self.x_off),
            ("y_off", self.y_off),
            ("sigma_x_raw", self.sigma_x_raw),
            ("sigma_y_raw", self.sigma_y_raw),
            ("rho_raw", self.rho_raw),
            ("feat_off", self.feat_off),
        ]

    def validate(self):
        n = self.count
        for name, arr in self.per_gaussian_arrays():
            if arr.shape[0] != n:
                raise ShapeMismatchError(f"{name} has {arr.shape[0]} rows, expected {n}")
            bad = np.flatnonzero(~np.isfinite(arr.reshape(n, -1)).all(axis=1))
            if bad.size:
                raise ParameterError(f"non-finite raw value in {name} at gaussian {bad[0]}")
        if not np.isfinite(self.gamma):
            raise ParameterError("non-finite raw value in gamma")


@dataclass(frozen=True)
class GaussianSet:
    """Constrained Gaussian set with cached covariance algebra.

    Immutable: arrays are write-protected after construction, so the set can
    be shared freely across worker threads.  Cached entries per Gaussian:
    |Sigma| (``cov_det``), the inverse entries (``inv_xx``, ``inv_xy``,
    ``inv_yy``), and the exact larger eigenvalue ``lam_max``.
    """

    meta: ImageMeta
    x: np.ndarray
    y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    rho: np.ndarray
    feat: np.ndarray          # (N, bands), componentwise >= 0
    gamma: float
    f_base: np.ndarray        # (N, bands) source pixel spectra
    cov_det: np.ndarray
    inv_xx: np.ndarray
    inv_xy: np.ndarray
    inv_yy: np.ndarray
    lam_max: np.ndarray
    raw: RawGaussianParams = field(repr=False)

    def __post_init__(self):
        for arr in (self.x, self.y, self.sigma_x, self.sigma_y, self.rho,
                    self.feat, self.f_base, self.cov_det,
                    self.inv_xx, self.inv_xy, self.inv_yy, self.lam_max):
            arr.flags.writeable = False

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def bands(self) -> int:
        return self.feat.shape[1]

    def covariance(self, n: int) -> np.ndarray:
        """The 2x2 covariance of Gaussian n, rebuilt from (sigma_x, sigma_y, rho)."""
        sx, sy, r = self.sigma_x[n], self.sigma_y[n], self.rho[n]
        off = r * sx * sy
        return np.array([[sx * sx, off], [off, sy * sy]])


def constrain(raw: RawGaussianParams, init_grid: ImageMeta, source: MultiBandImage) -> GaussianSet:
    """Map raw values to a valid GaussianSet anchored at the source pixel grid.

    Raises ParameterError (naming the first offending Gaussian) on non-finite
    input.  The zero raw vector yields Gaussians sitting exactly on the pixel
    centers with F equal to the source spectra.
    """
    if (source.meta.width, source.meta.height, source.meta.bands) != (
            init_grid.width, init_grid.height, init_grid.bands):
        raise ShapeMismatchError("source image does not match the init grid")
    return constrain_from_base(raw, init_grid, source.pixel_spectra())


def constrain_from_base(raw: RawGaussianParams, init_grid: ImageMeta,
                        f_base: np.ndarray) -> GaussianSet:
    """Same as constrain, but anchored on an explicit (N, bands) base-feature grid
    (used when reloading a set from disk)."""
    n = init_grid.npixels
    if raw.count != n:
        raise ShapeMismatchError(f"raw has {raw.count} gaussians, grid needs {n}")
    if raw.bands != init_grid.bands:
        raise ShapeMismatchError(f"raw has {raw.bands} bands, grid has {init_grid.bands}")
    if f_base.shape != (n, init_grid.bands):
        raise ShapeMismatchError(f"f_base shape {f_base.shape} != ({n}, {init_grid.bands})")
    raw.validate()

    centers = pixel_center_coords(init_grid).reshape(-1, 2)
    x = centers[:, 0] + np.tanh(raw.x_off)
    y = centers[:, 1] + np.tanh(raw.y_off)
    sigma_x = np.maximum(softplus(raw.sigma_x_raw), SIGMA_FLOOR)
    sigma_y = np.maximum(softplus(raw.sigma_y_raw), SIGMA_FLOOR)
    rho = np.clip(np.tanh(raw.rho_raw), -(1.0 - RHO_MARGIN), 1.0 - RHO_MARGIN)
    f_base = np.array(f_base, dtype=np.float64)
    feat = np.maximum(f_base + raw.feat_off, 0.0)

    a = sigma_x * sigma_x
    c = sigma_y * sigma_y
    b = rho * sigma_x * sigma_y
    det = a * c - b * b
    inv_xx = c / det
    inv_xy = -b / det
    inv_yy = a / det
    # exact eigenvalues of [[a, b], [b, c]]
    half_tr = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    lam_max = half_tr + rad

    return GaussianSet(
        meta=init_grid, x=x, y=y, sigma_x=sigma_x, sigma_y=sigma_y, rho=rho,
        feat=feat, gamma=float(raw.gamma), f_base=f_base,
        cov_det=det, inv_xx=inv_xx, inv_xy=inv_xy, inv_yy=inv_yy,
        lam_max=lam_max, raw=raw,
    )


def sq_mahalanobis(gs: GaussianSet, n, px, py):
    """Squared Mahalanobis distance of point(s) (px, py) to Gaussian(s) n.

    Broadcasts over n / px / py.  Kept as a single expression so every caller
    (batch renderer, grid index, brute-force scan) produces identical bits.
    """
    dx = px - gs.x[n]
    dy = py - gs.y[n]
    return gs.inv_xx[n] * dx * dx + 2.0 * gs.inv_xy[n] * dx * dy + gs.inv_yy[n] * dy * dy


def mahalanobis(gs: GaussianSet, n: int, point) -> float:
    """Mahalanobis distance from a point to the center of Gaussian n."""
    return float(np.sqrt(sq_mahalanobis(gs, n, point[0], point[1])))


def contribution(gs: GaussianSet, n: int, point) -> np.ndarray:
    """Feature contribution of Gaussian n at a point: F * exp(-d^2/2) / (2*pi*|Sigma|^0.5)."""
    q = sq_mahalanobis(gs, n, point[0], point[1])
    kern = np.exp(-0.5 * q) / (TWO_PI * np.sqrt(gs.cov_det[n]))
    return gs.feat[n] * kern
