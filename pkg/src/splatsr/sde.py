"""Spectral refinement forward pass: per-pixel patch mixing.

The input feature map is bilinearly upsampled to the target resolution.
Around every output pixel a P x P patch (replicate padding) is reshaped to
P^2 spatial tokens holding one spectral vector each, then two rounds of

    token mixing   — a two-layer MLP over the P^2 axis, shared by channels,
    channel mixing — a two-layer MLP over the channel axis, shared by tokens,

are applied (rectifier between the two affine maps of each MLP, none
after).  The refined patch is flattened (token-major) and fused down to one
spectral vector per pixel by a final two-layer MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError
from .image import ImageMeta, MultiBandImage
from .resample import resize_array

DEFAULT_PATCH = 5
DEFAULT_HIDDEN = 64
_PIXEL_CHUNK = 4096  # fixed internal batch so results never depend on caller chunking


@dataclass
class Mlp:
    """Two affine maps with a rectifier between: w2 @ relu(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply along the last axis of x."""
        hidden = np.maximum(x @ self.w1.T + self.b1, 0.0)
        return hidden @ self.w2.T + self.b2

    def check(self, name: str, n_in: int, n_out: int, hidden: int):
        expect = {
            "w1": (hidden, n_in), "b1": (hidden,),
            "w2": (n_out, hidden), "b2": (n_out,),
        }
        for field_name, shape in expect.items():
            arr = getattr(self, field_name)
            if arr.shape != shape:
                raise ShapeMismatchError(
                    f"{name}.{field_name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeMismatchError(f"{name}.{field_name} contains non-finite values")


@dataclass
class SdeWeights:
    """Parameters of the two mixing layers and the fuse layer."""

    spatial: list[Mlp]   # mixing over the P^2 token axis
    spectral: list[Mlp]  # mixing over the channel axis
    fuse: Mlp            # P^2 * channels -> channels
    patch: int
    channels: int
    hidden: int

    def validate(self):
        p2 = self.patch * self.patch
        if len(self.spatial) != 2 or len(self.spectral) != 2:
            raise ShapeMismatchError("expected exactly two spatial and two spectral layers")
        for layer, mlp in enumerate(self.spatial, start=1):
            mlp.check(f"spa{layer}", p2, p2, self.hidden)
        for layer, mlp in enumerate(self.spectral, start=1):
            mlp.check(f"spe{layer}", self.channels, self.channels, self.hidden)
        self.fuse.check("fuse", p2 * self.channels, self.channels, self.hidden)


def _uniform_fan_in(rng, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[-1] if len(shape) > 1 else shape[0])
    return rng.uniform(-bound, bound, shape)


def sde_random_init(seed: int, channels: int, patch: int = DEFAULT_PATCH,
                    hidden: int = DEFAULT_HIDDEN) -> SdeWeights:
    """Uniform(+/- 1/sqrt(fan_in)) init, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    p2 = patch * patch

    def mlp(n_in, n_out):
        return Mlp(
            w1=_uniform_fan_in(rng, (hidden, n_in)),
            b1=rng.uniform(-1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_in), hidden),
            w2=_uniform_fan_in(rng, (n_out, hidden)),
            b2=rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden), n_out),
        )

    weights = SdeWeights(
        spatial=[mlp(p2, p2), mlp(p2, p2)],
        spectral=[mlp(channels, channels), mlp(channels, channels)],
        fuse=mlp(p2 * channels, channels),
        patch=patch, channels=channels, hidden=hidden,
    )
    weights.validate()
    return weights


def sde_forward(feature: MultiBandImage, r: float, weights: SdeWeights) -> MultiBandImage:
    """Upsample by r, then refine each pixel from its P x P neighborhood."""
    if weights.channels != feature.meta.bands:
        raise ShapeMismatchError(
            f"weights expect {weights.channels} channels, feature has {feature.meta.bands}")
    weights.validate()
    if not (r > 0):
        raise ShapeMismatchError(f"scale must be positive, got {r}")
    th = int(r * feature.meta.height)
    tw = int(r * feature.meta.width)
    if th < 1 or tw < 1:
        raise ShapeMismatchError(f"scale {r} yields an empty target grid")

    up = resize_array(feature.data, th, tw, kernel="bilinear")  # (C, th, tw)
    p = weights.patch
    half = p // 2
    c = weights.channels
    padded = np.pad(up, ((0, 0), (half, half), (half, half)), mode="edge")
    windows = sliding_window_view(padded, (p, p), axis=(1, 2))  # (C, th, tw, P, P)

    # fixed row-chunk policy keeps memory bounded and the result reproducible
    rows_per_chunk = max(1, _PIXEL_CHUNK // tw)
    out = np.empty((th * tw, c))
    for y0 in range(0, th, rows_per_chunk):
        y1 = min(th, y0 + rows_per_chunk)
        # (npix, P^2, C) token layout for this row block
        x = np.ascontiguousarray(windows[:, y0:y1].transpose(1, 2, 3, 4, 0)
                                 ).reshape((y1 - y0) * tw, p * p, c)
        for spa, spe in zip(weights.spatial, weights.spectral):
            x = spa.apply(x.transpose(0, 2, 1)).transpose(0, 2, 1)  # mix tokens
            x = spe.apply(x)                                        # mix channels
        flat = x.reshape((y1 - y0) * tw, p * p * c)  # token-major flatten
        out[y0 * tw:y1 * tw] = weights.fuse.apply(flat)

    data = out.T.reshape(c, th, tw)
    meta = ImageMeta(tw, th, c, feature.meta.value_range)
    return MultiBandImage(meta, np.ascontiguousarray(data))


def receptive_field(weights: SdeWeights, r: float, src_h: int, src_w: int,
                    out_x: int, out_y: int):
    """Exact set of source pixels that can influence output pixel (out_x, out_y).

    Accounts for the P x P patch, replicate padding at the upsampled borders,
    and the (clamped) 2x2 bilinear footprint of each upsampled pixel.
    Returns a boolean (src_h, src_w) mask.  Used by the locality tests.
    """
    th = int(r * src_h)
    tw = int(r * src_w)
    half = weights.patch // 2
    mask = np.zeros((src_h, src_w), dtype=bool)
    for uy in range(out_y - half, out_y + half + 1):
        for ux in range(out_x - half, out_x + half + 1):
            cy = min(max(uy, 0), th - 1)  # replicate padding clamps
            cx = min(max(ux, 0), tw - 1)
            sy = (cy + 0.5) * (src_h / th) - 0.5
            sx = (cx + 0.5) * (src_w / tw) - 0.5
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            for yy in (y0, y0 + 1):
                for xx in (x0, x0 + 1):
                    mask[min(max(yy, 0), src_h - 1), min(max(xx, 0), src_w - 1)] = True
    return mask
