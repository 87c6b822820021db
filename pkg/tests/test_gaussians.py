import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatsr import (ImageMeta, MultiBandImage, ParameterError, RawGaussianParams,
                     ShapeMismatchError, constrain, contribution, mahalanobis,
                     pixel_center_coords)
from splatsr.gaussians import (RHO_MARGIN, SIGMA_FLOOR, TWO_PI, softplus,
                               sq_mahalanobis)

from conftest import random_set


def adjugate_inverse(cov):
    """Independent 2x2 inverse: adj(A) / det(A)."""
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    return np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det


def unit_image(w, h, bands, value=1.0):
    return MultiBandImage.from_array(np.full((bands, h, w), value))


def set_with(sigma_x=1.0, sigma_y=1.0, rho=0.0, feat=1.0, w=1, h=1):
    """Single-pixel grid set with exact constrained values via inverse activations."""
    n = w * h
    raw = RawGaussianParams(
        x_off=np.zeros(n), y_off=np.zeros(n),
        sigma_x_raw=np.full(n, np.log(np.expm1(sigma_x))),
        sigma_y_raw=np.full(n, np.log(np.expm1(sigma_y))),
        rho_raw=np.full(n, np.arctanh(rho)),
        feat_off=np.zeros((n, 1)),
        gamma=0.0,
    )
    return constrain(raw, ImageMeta(w, h, 1), unit_image(w, h, 1, feat))


# ---------------------------------------------------------------------------
# pixel-center coordinates

def test_two_pixel_centers_are_symmetric():
    coords = pixel_center_coords(ImageMeta(2, 1, 1))
    assert coords[0, 0, 0] == -0.5
    assert coords[0, 1, 0] == 0.5


def test_single_pixel_center_is_origin():
    coords = pixel_center_coords(ImageMeta(1, 1, 1))
    assert coords[0, 0, 0] == 0.0
    assert coords[0, 0, 1] == 0.0


def test_lr_and_hr_grids_interleave():
    lr = pixel_center_coords(ImageMeta(4, 1, 1))[0, :, 0]
    hr = pixel_center_coords(ImageMeta(8, 1, 1))[0, :, 0]
    assert not np.intersect1d(lr, hr).size
    assert np.allclose(lr, -lr[::-1])
    assert np.allclose(hr, -hr[::-1])


# ---------------------------------------------------------------------------
# constrain

def test_softplus_at_zero_is_log_two():
    source = unit_image(1, 1, 1)
    gs = constrain(RawGaussianParams.zeros(1, 1), source.meta, source)
    assert gs.sigma_x[0] == pytest.approx(np.log(2.0), abs=1e-12)


def test_zero_offsets_keep_pixel_centers():
    source = unit_image(3, 2, 1)
    gs = constrain(RawGaussianParams.zeros(6, 1), source.meta, source)
    centers = pixel_center_coords(source.meta).reshape(-1, 2)
    assert np.array_equal(gs.x, centers[:, 0])
    assert np.array_equal(gs.y, centers[:, 1])


def test_cached_inverse_matches_adjugate_oracle():
    _, _, gs = random_set(seed=3)
    for i in range(gs.count):
        expected = adjugate_inverse(gs.covariance(i))
        cached = np.array([[gs.inv_xx[i], gs.inv_xy[i]], [gs.inv_xy[i], gs.inv_yy[i]]])
        assert np.allclose(cached, expected, rtol=1e-10)


def test_cached_inverse_reproduces_identity():
    _, _, gs = random_set(seed=4)
    for i in range(gs.count):
        inv = np.array([[gs.inv_xx[i], gs.inv_xy[i]], [gs.inv_xy[i], gs.inv_yy[i]]])
        assert np.allclose(gs.covariance(i) @ inv, np.eye(2), atol=1e-10)


def test_non_finite_raw_rejected_with_index():
    source = unit_image(2, 2, 1)
    raw = RawGaussianParams.zeros(4, 1)
    raw.sigma_y_raw[2] = np.nan
    with pytest.raises(ParameterError, match="sigma_y_raw.*gaussian 2"):
        constrain(raw, source.meta, source)


def test_shape_mismatch_rejected():
    source = unit_image(2, 2, 1)
    with pytest.raises(ShapeMismatchError):
        constrain(RawGaussianParams.zeros(3, 1), source.meta, source)


def test_constrained_invariants_hold_for_bulk_random_raws():
    # 1e5 gaussians in one vectorized constrain call
    rng = np.random.default_rng(0)
    w, h, bands = 400, 250, 2
    n = w * h
    source = MultiBandImage.from_array(rng.uniform(0, 1, (bands, h, w)))
    raw = RawGaussianParams(
        x_off=rng.normal(0, 50, n), y_off=rng.normal(0, 50, n),
        sigma_x_raw=rng.normal(0, 20, n), sigma_y_raw=rng.normal(0, 20, n),
        rho_raw=rng.normal(0, 20, n), feat_off=rng.normal(0, 10, (n, bands)),
        gamma=float(rng.normal()),
    )
    gs = constrain(raw, source.meta, source)
    assert np.all(gs.sigma_x >= SIGMA_FLOOR)
    assert np.all(gs.sigma_y >= SIGMA_FLOOR)
    assert np.all(np.abs(gs.rho) <= 1.0 - RHO_MARGIN)
    assert np.all(gs.cov_det > 0.0)
    assert np.all(gs.feat >= 0.0)
    assert np.all(np.isfinite(gs.inv_xx) & np.isfinite(gs.inv_xy) & np.isfinite(gs.inv_yy))
    # lam_max >= max(sigma_x^2, sigma_y^2) for rho-coupled SPD matrices
    assert np.all(gs.lam_max >= np.maximum(gs.sigma_x, gs.sigma_y) ** 2 * (1 - 1e-12))


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(-30, 30))
def test_constrain_single_gaussian_never_degenerate(sx_raw, sy_raw, rho_raw):
    source = unit_image(1, 1, 1)
    raw = RawGaussianParams(
        x_off=np.zeros(1), y_off=np.zeros(1),
        sigma_x_raw=np.array([sx_raw]), sigma_y_raw=np.array([sy_raw]),
        rho_raw=np.array([rho_raw]), feat_off=np.zeros((1, 1)), gamma=0.0)
    gs = constrain(raw, source.meta, source)
    assert gs.cov_det[0] > 0
    assert np.isfinite(gs.inv_xx[0]) and np.isfinite(gs.inv_xy[0]) and np.isfinite(gs.inv_yy[0])
    # the cached entries agree with an independent adjugate inverse even at
    # extreme anisotropy (Sigma*inv ~ I itself is conditioning-limited there)
    expected = adjugate_inverse(gs.covariance(0))
    cached = np.array([[gs.inv_xx[0], gs.inv_xy[0]], [gs.inv_xy[0], gs.inv_yy[0]]])
    assert np.allclose(cached, expected, rtol=1e-10, atol=1e-300)


def test_set_is_immutable():
    _, _, gs = random_set(seed=5)
    with pytest.raises(ValueError):
        gs.x[0] = 0.0


# ---------------------------------------------------------------------------
# mahalanobis

def test_mahalanobis_axis_aligned_closed_form():
    gs = set_with(sigma_x=2.0, sigma_y=1.0)
    assert mahalanobis(gs, 0, (1.0, 0.0)) == pytest.approx(0.5, abs=1e-14)


def test_mahalanobis_zero_at_center():
    _, _, gs = random_set(seed=6)
    for i in (0, 5, 17):
        assert mahalanobis(gs, i, (gs.x[i], gs.y[i])) == 0.0


def test_mahalanobis_matches_adjugate_oracle():
    rng = np.random.default_rng(7)
    _, _, gs = random_set(seed=7)
    for _ in range(200):
        i = int(rng.integers(gs.count))
        p = rng.uniform(-1.5, 1.5, 2)
        delta = p - np.array([gs.x[i], gs.y[i]])
        expected = np.sqrt(delta @ adjugate_inverse(gs.covariance(i)) @ delta)
        assert mahalanobis(gs, i, p) == pytest.approx(expected, rel=1e-10)


def test_mahalanobis_rotation_invariance():
    # conjugating Sigma by a rotation and rotating the offset leaves d unchanged
    rng = np.random.default_rng(8)
    for _ in range(50):
        sx, sy = rng.uniform(0.3, 2.0, 2)
        rho = rng.uniform(-0.8, 0.8)
        phi = rng.uniform(0, 2 * np.pi)
        delta = rng.uniform(-1, 1, 2)
        cov = np.array([[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]])
        rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        cov_r = rot @ cov @ rot.T
        delta_r = rot @ delta

        def dist(c, d):
            raw = RawGaussianParams(
                x_off=np.zeros(1), y_off=np.zeros(1),
                sigma_x_raw=np.array([np.log(np.expm1(np.sqrt(c[0, 0])))]),
                sigma_y_raw=np.array([np.log(np.expm1(np.sqrt(c[1, 1])))]),
                rho_raw=np.array([np.arctanh(c[0, 1] / np.sqrt(c[0, 0] * c[1, 1]))]),
                feat_off=np.zeros((1, 1)), gamma=0.0)
            g = constrain(raw, ImageMeta(1, 1, 1), unit_image(1, 1, 1))
            return mahalanobis(g, 0, (d[0], d[1]))

        assert dist(cov, delta) == pytest.approx(dist(cov_r, delta_r), abs=1e-9)


# ---------------------------------------------------------------------------
# contribution

def test_contribution_unit_isotropic_peak():
    gs = set_with(sigma_x=1.0, sigma_y=1.0, feat=1.0)
    peak = contribution(gs, 0, (0.0, 0.0))
    assert peak[0] == pytest.approx(1.0 / TWO_PI, abs=1e-12)


def test_contribution_zero_feature_is_zero_everywhere():
    gs = set_with(feat=0.0)
    for p in [(0.0, 0.0), (0.3, -0.4), (2.0, 2.0)]:
        assert np.all(contribution(gs, 0, p) == 0.0)


def test_contribution_integrates_to_feature():
    # midpoint quadrature over +/- 6.5 sqrt(lam_max); the kernel integrates to F
    _, _, gs = random_set(seed=9, w=2, h=2)
    for i in range(gs.count):
        half = 6.5 * np.sqrt(gs.lam_max[i])
        m = 400
        step = 2 * half / m
        ax = gs.x[i] - half + (np.arange(m) + 0.5) * step
        ay = gs.y[i] - half + (np.arange(m) + 0.5) * step
        gx, gy = np.meshgrid(ax, ay)
        q = sq_mahalanobis(gs, i, gx.ravel(), gy.ravel())
        kern_sum = np.exp(-0.5 * q).sum() / (TWO_PI * np.sqrt(gs.cov_det[i]))
        integral = gs.feat[i] * kern_sum * step * step
        assert np.allclose(integral, gs.feat[i], rtol=1e-3)


def test_contribution_decays_along_rays():
    _, _, gs = random_set(seed=10)
    rng = np.random.default_rng(10)
    for _ in range(20):
        i = int(rng.integers(gs.count))
        theta = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.cos(theta), np.sin(theta)])
        radii = np.linspace(0.0, 2.0, 25)
        values = [contribution(gs, i, (gs.x[i] + r * direction[0],
                                       gs.y[i] + r * direction[1])).sum()
                  for r in radii]
        assert np.all(np.diff(values) <= 0.0)


def test_contribution_linear_in_feature():
    source, raw, gs = random_set(seed=11)
    scaled_raw = raw.copy()
    # doubling F exactly: F = relu(base + off), want relu(base' + off') = 2F
    scaled_source = MultiBandImage.from_array(2.0 * source.data)
    scaled_raw.feat_off = 2.0 * raw.feat_off
    gs2 = constrain(scaled_raw, scaled_source.meta, scaled_source)
    rng = np.random.default_rng(11)
    for _ in range(20):
        i = int(rng.integers(gs.count))
        p = rng.uniform(-1, 1, 2)
        assert np.array_equal(contribution(gs2, i, p), 2.0 * contribution(gs, i, p))
