"""Evaluation of the continuous representation at arbitrary coordinates.

Three aggregation strategies over the Gaussian set:

* ``Direct``       — sum of every Gaussian's contribution (O(N) per pixel);
* ``Rasterized``   — direct, but contributions beyond a Mahalanobis cutoff
                     are dropped; on grid targets each Gaussian is scattered
                     into the pixels of its cutoff ellipse;
* ``Vbgs``         — top-k Mahalanobis selection, then a similarity-weighted
                     mean: w_i = exp(gamma * cos_sim(F_i, reference at p)),
                     out = sum(w_i G_i) / sum(w_i).

In deterministic mode direct/rasterized sort the per-pixel contributions
before reduction, which makes the result invariant to Gaussian storage
order at the cost of extra memory.  The vbgs path accumulates in selection
order (ascending distance), which is already storage-order invariant away
from exact distance ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .gaussians import TWO_PI, GaussianSet
from .image import ImageMeta, MultiBandImage, axis_centers, grid_coords_flat
from .selection import GaussianGridIndex, batch_brute_force, batch_top_k

COSINE_NORM_FLOOR = 1e-12
_CHUNK_BUDGET = 4_000_000  # doubles per temporary in the direct path


@dataclass(frozen=True)
class Direct:
    pass


@dataclass(frozen=True)
class Rasterized:
    rho_cut: float = 3.0


@dataclass(frozen=True)
class Vbgs:
    k: int = 16


@dataclass
class RenderPlan:
    """Target coordinates plus aggregation strategy.

    ``grid_shape`` is (height, width) when the target is a pixel grid, in
    which case ``coords`` holds its row-major pixel centers.  For vbgs a
    reference at target resolution is required: ``reference`` for grids,
    ``reference_spectra`` (P, bands) for explicit coordinate lists.
    """

    coords: np.ndarray
    strategy: Direct | Rasterized | Vbgs
    grid_shape: tuple[int, int] | None = None
    reference: MultiBandImage | None = None
    reference_spectra: np.ndarray | None = None
    deterministic: bool = False


def plan_for_scale(meta: ImageMeta, r: float, strategy, reference: MultiBandImage | None = None,
                   deterministic: bool = False) -> RenderPlan:
    """Plan a floor(r*W) x floor(r*H) pixel-center grid over [-1, 1]^2."""
    if not (r > 0):
        raise ConfigError(f"scale factor must be positive, got {r}")
    rw, rh = int(r * meta.width), int(r * meta.height)
    if rw < 1 or rh < 1:
        raise ConfigError(f"scale {r} yields an empty grid for {meta.width}x{meta.height}")
    return RenderPlan(grid_coords_flat(rw, rh), strategy, grid_shape=(rh, rw),
                      reference=reference, deterministic=deterministic)


def plan_for_points(coords: np.ndarray, strategy, reference_spectra: np.ndarray | None = None,
                    deterministic: bool = False) -> RenderPlan:
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeMismatchError(f"coords must be (P, 2), got {coords.shape}")
    return RenderPlan(coords, strategy, reference_spectra=reference_spectra,
                      deterministic=deterministic)


def _as_image(gs: GaussianSet, plan: RenderPlan, values: np.ndarray) -> MultiBandImage:
    b = gs.bands
    if plan.grid_shape is not None:
        rh, rw = plan.grid_shape
        data = values.reshape(rh, rw, b).transpose(2, 0, 1)
        meta = ImageMeta(rw, rh, b, gs.meta.value_range)
    else:
        data = values.T.reshape(b, 1, -1)
        meta = ImageMeta(values.shape[0], 1, b, gs.meta.value_range)
    return MultiBandImage(meta, np.ascontiguousarray(data))


# ---------------------------------------------------------------------------
# direct / rasterized

def _direct_points(gs: GaussianSet, coords: np.ndarray, rho_cut: float | None,
                   deterministic: bool) -> np.ndarray:
    n, b = gs.count, gs.bands
    npts = coords.shape[0]
    out = np.empty((npts, b))
    if deterministic:
        chunk = max(1, _CHUNK_BUDGET // max(1, n * b))
    else:
        chunk = max(1, _CHUNK_BUDGET // max(1, n))
    for lo in range(0, npts, chunk):
        hi = min(npts, lo + chunk)
        dx = coords[lo:hi, 0:1] - gs.x[None, :]
        dy = coords[lo:hi, 1:2] - gs.y[None, :]
        q = gs.inv_xx[None, :] * dx * dx + 2.0 * gs.inv_xy[None, :] * dx * dy \
            + gs.inv_yy[None, :] * dy * dy
        kern = np.exp(-0.5 * q) / (TWO_PI * np.sqrt(gs.cov_det[None, :]))
        if rho_cut is not None and np.isfinite(rho_cut):
            kern[q > rho_cut * rho_cut] = 0.0
        if deterministic:
            contrib = kern[:, :, None] * gs.feat[None, :, :]
            contrib.sort(axis=1)  # canonical (value-sorted) reduction order
            out[lo:hi] = contrib.sum(axis=1)
        else:
            out[lo:hi] = kern @ gs.feat
    return out


def _rasterized_grid(gs: GaussianSet, plan: RenderPlan, rho_cut: float) -> np.ndarray:
    """Scatter each Gaussian into the grid pixels of its d <= rho_cut ellipse."""
    rh, rw = plan.grid_shape
    xs = axis_centers(rw)
    ys = axis_centers(rh)
    out = np.zeros((rh, rw, gs.bands))
    rho2 = rho_cut * rho_cut
    for ni in range(gs.count):
        if np.isfinite(rho_cut):
            # the ellipse q = rho^2 has bounding half-widths rho*sigma
            hx = rho_cut * gs.sigma_x[ni]
            hy = rho_cut * gs.sigma_y[ni]
            i0 = max(0, int(np.ceil((gs.x[ni] - hx + 1.0) * rw / 2.0 - 0.5)))
            i1 = min(rw - 1, int(np.floor((gs.x[ni] + hx + 1.0) * rw / 2.0 - 0.5)))
            j0 = max(0, int(np.ceil((gs.y[ni] - hy + 1.0) * rh / 2.0 - 0.5)))
            j1 = min(rh - 1, int(np.floor((gs.y[ni] + hy + 1.0) * rh / 2.0 - 0.5)))
            if i0 > i1 or j0 > j1:
                continue
        else:
            i0, i1, j0, j1 = 0, rw - 1, 0, rh - 1
        dx = xs[i0:i1 + 1][None, :] - gs.x[ni]
        dy = ys[j0:j1 + 1][:, None] - gs.y[ni]
        q = gs.inv_xx[ni] * dx * dx + 2.0 * gs.inv_xy[ni] * dx * dy + gs.inv_yy[ni] * dy * dy
        kern = np.exp(-0.5 * q) / (TWO_PI * np.sqrt(gs.cov_det[ni]))
        kern[q > rho2] = 0.0
        out[j0:j1 + 1, i0:i1 + 1, :] += kern[:, :, None] * gs.feat[ni]
    return out.reshape(-1, gs.bands)


def render_direct(gs: GaussianSet, plan: RenderPlan) -> MultiBandImage:
    """Aggregate every Gaussian at every target coordinate."""
    values = _direct_points(gs, plan.coords, None, plan.deterministic)
    return _as_image(gs, plan, values)


def render_rasterized(gs: GaussianSet, plan: RenderPlan) -> MultiBandImage:
    """Direct aggregation truncated at Mahalanobis distance rho_cut (inclusive)."""
    if not isinstance(plan.strategy, Rasterized):
        raise ConfigError("plan strategy is not Rasterized")
    rho_cut = plan.strategy.rho_cut
    if rho_cut < 0:
        raise ConfigError(f"rho_cut must be >= 0, got {rho_cut}")
    if plan.grid_shape is not None and not plan.deterministic:
        values = _rasterized_grid(gs, plan, rho_cut)
    else:
        values = _direct_points(gs, plan.coords, rho_cut, plan.deterministic)
    return _as_image(gs, plan, values)


# ---------------------------------------------------------------------------
# vbgs

def _reference_spectra(gs: GaussianSet, plan: RenderPlan) -> np.ndarray:
    if plan.reference is not None:
        ref = plan.reference
        if plan.grid_shape is not None and (ref.meta.height, ref.meta.width) != plan.grid_shape:
            raise ShapeMismatchError(
                f"reference is {ref.meta.height}x{ref.meta.width}, target grid is {plan.grid_shape}")
        if ref.meta.bands != gs.bands:
            raise ShapeMismatchError(
                f"reference has {ref.meta.bands} bands, Gaussian features have {gs.bands}")
        return ref.pixel_spectra()
    if plan.reference_spectra is not None:
        spectra = np.asarray(plan.reference_spectra, dtype=np.float64)
        if spectra.shape != (plan.coords.shape[0], gs.bands):
            raise ShapeMismatchError(
                f"reference spectra shape {spectra.shape} != ({plan.coords.shape[0]}, {gs.bands})")
        return spectra
    raise ConfigError("vbgs rendering requires a reference at target resolution")


def _vbgs_terms(gs: GaussianSet, idx: np.ndarray, px: np.ndarray, py: np.ndarray,
                ref: np.ndarray):
    """Per-(pixel, selected) forward intermediates, shared with the backward pass."""
    dx = px[:, None] - gs.x[idx]
    dy = py[:, None] - gs.y[idx]
    q = gs.inv_xx[idx] * dx * dx + 2.0 * gs.inv_xy[idx] * dx * dy + gs.inv_yy[idx] * dy * dy
    det = gs.cov_det[idx]
    kern = np.exp(-0.5 * q) / (TWO_PI * np.sqrt(det))
    fg = gs.feat[idx]                                  # (P, m, bands)
    dot = np.einsum("pmb,pb->pm", fg, ref)
    norm_f = np.sqrt(np.einsum("pmb,pmb->pm", fg, fg))
    norm_r = np.sqrt(np.einsum("pb,pb->p", ref, ref))
    valid = (norm_f > COSINE_NORM_FLOOR) & (norm_r[:, None] > COSINE_NORM_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(valid, dot / (norm_f * norm_r[:, None]), 0.0)
    w = np.exp(gs.gamma * sim)
    wsum = w.sum(axis=1)
    numer = np.einsum("pm,pmb->pb", w * kern, fg)
    out = numer / wsum[:, None]
    return {
        "dx": dx, "dy": dy, "q": q, "det": det, "kern": kern, "fg": fg,
        "sim": sim, "valid": valid, "norm_f": norm_f, "norm_r": norm_r,
        "w": w, "wsum": wsum, "out": out,
    }


def select_for_plan(gs: GaussianSet, index: GaussianGridIndex | None,
                    coords: np.ndarray, k: int) -> np.ndarray:
    """Selected indices (P, min(k, N)); brute force when no index is given."""
    if index is None:
        idx, _ = batch_brute_force(gs, coords, k)
    else:
        idx, _ = batch_top_k(index, gs, coords, k)
    return idx


def render_vbgs(gs: GaussianSet, index: GaussianGridIndex | None, plan: RenderPlan) -> MultiBandImage:
    """Reference-aware bilateral aggregation over the top-k selected Gaussians."""
    if not isinstance(plan.strategy, Vbgs):
        raise ConfigError("plan strategy is not Vbgs")
    ref = _reference_spectra(gs, plan)
    idx = select_for_plan(gs, index, plan.coords, plan.strategy.k)
    npts = plan.coords.shape[0]
    out = np.empty((npts, gs.bands))
    chunk = max(1, _CHUNK_BUDGET // max(1, idx.shape[1] * gs.bands))
    for lo in range(0, npts, chunk):
        hi = min(npts, lo + chunk)
        terms = _vbgs_terms(gs, idx[lo:hi], plan.coords[lo:hi, 0], plan.coords[lo:hi, 1],
                            ref[lo:hi])
        out[lo:hi] = terms["out"]
    return _as_image(gs, plan, out)


def render(gs: GaussianSet, plan: RenderPlan, index: GaussianGridIndex | None = None) -> MultiBandImage:
    if isinstance(plan.strategy, Direct):
        return render_direct(gs, plan)
    if isinstance(plan.strategy, Rasterized):
        return render_rasterized(gs, plan)
    if isinstance(plan.strategy, Vbgs):
        return render_vbgs(gs, index, plan)
    raise ConfigError(f"unknown strategy {plan.strategy!r}")


def eval_point(gs: GaussianSet, index: GaussianGridIndex | None, point, strategy,
               reference_spectrum: np.ndarray | None = None,
               deterministic: bool = False) -> np.ndarray:
    """Single-coordinate evaluation; identical arithmetic to the grid renderers."""
    spectra = None if reference_spectrum is None else np.asarray(reference_spectrum)[None, :]
    plan = plan_for_points([point], strategy, reference_spectra=spectra,
                           deterministic=deterministic)
    img = render(gs, plan, index=index)
    return img.data[:, 0, 0].copy()
