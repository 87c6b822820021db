import numpy as np
import pytest

from splatsr import RawGaussianParams, constrain
from splatsr.synthetic import make_smooth_image


def random_set(seed=0, w=8, h=8, bands=3, gamma=0.7, center_spread=0.3,
               sigma_lo=-2.0, sigma_hi=0.5, feat_spread=0.1):
    """A random smooth source plus a random constrained Gaussian set over it."""
    rng = np.random.default_rng(seed)
    source = make_smooth_image(w, h, bands, seed=seed + 10_000)
    n = w * h
    raw = RawGaussianParams(
        x_off=rng.normal(0.0, center_spread, n),
        y_off=rng.normal(0.0, center_spread, n),
        sigma_x_raw=rng.uniform(sigma_lo, sigma_hi, n),
        sigma_y_raw=rng.uniform(sigma_lo, sigma_hi, n),
        rho_raw=rng.normal(0.0, 0.5, n),
        feat_off=rng.normal(0.0, feat_spread, (n, bands)),
        gamma=gamma,
    )
    return source, raw, constrain(raw, source.meta, source)


@pytest.fixture
def set_factory():
    return random_set
