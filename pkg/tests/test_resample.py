import numpy as np
import pytest

from splatsr import MultiBandImage, resize
from splatsr.resample import catmull_rom_weight, resize_array
from splatsr.synthetic import make_smooth_image


def scalar_bicubic_oracle(band, out_h, out_w):
    """Direct per-output-pixel kernel sum with replicated borders."""
    src_h, src_w = band.shape
    out = np.zeros((out_h, out_w))
    for j in range(out_h):
        sy = (j + 0.5) * src_h / out_h - 0.5
        by = int(np.floor(sy))
        for i in range(out_w):
            sx = (i + 0.5) * src_w / out_w - 0.5
            bx = int(np.floor(sx))
            acc = 0.0
            for ty in range(-1, 3):
                wy = catmull_rom_weight(np.array([sy - (by + ty)]))[0]
                yy = min(max(by + ty, 0), src_h - 1)
                for tx in range(-1, 3):
                    wx = catmull_rom_weight(np.array([sx - (bx + tx)]))[0]
                    xx = min(max(bx + tx, 0), src_w - 1)
                    acc += wy * wx * band[yy, xx]
            out[j, i] = acc
    return out


def test_kernel_closed_form_values():
    assert catmull_rom_weight(np.array([0.0]))[0] == 1.0
    assert catmull_rom_weight(np.array([1.0]))[0] == 0.0
    assert catmull_rom_weight(np.array([2.0]))[0] == 0.0
    assert catmull_rom_weight(np.array([0.5]))[0] == pytest.approx(0.5625)
    assert catmull_rom_weight(np.array([1.5]))[0] == pytest.approx(-0.0625)


def test_kernel_partition_of_unity():
    for frac in np.linspace(0, 1, 17):
        taps = np.array([frac + 1.0, frac, frac - 1.0, frac - 2.0])
        assert catmull_rom_weight(taps).sum() == pytest.approx(1.0, abs=1e-12)


def test_identity_when_sizes_match():
    img = make_smooth_image(9, 7, 3, seed=0)
    for kernel in ("bilinear", "bicubic"):
        out = resize(img, 7, 9, kernel=kernel)
        assert np.allclose(out.data, img.data, atol=1e-12)


def test_bilinear_identity_is_exact():
    img = make_smooth_image(6, 5, 2, seed=1)
    assert np.array_equal(resize(img, 5, 6, kernel="bilinear").data, img.data)


@pytest.mark.parametrize("kernel", ["bilinear", "bicubic"])
@pytest.mark.parametrize("factor", [0.5, 1.5, 2.0, 3.7])
def test_constant_preserved(kernel, factor):
    img = MultiBandImage.from_array(np.full((2, 8, 8), 0.37))
    out = resize(img, int(8 * factor), int(8 * factor), kernel=kernel)
    assert np.allclose(out.data, 0.37, rtol=1e-12)


def test_bicubic_matches_scalar_oracle_on_ramp():
    ramp = np.add.outer(np.arange(8.0), np.arange(8.0) * 0.5) / 12.0
    img = MultiBandImage.from_array(ramp[None, :, :])
    out = resize(img, 16, 16, kernel="bicubic")
    oracle = scalar_bicubic_oracle(ramp, 16, 16)
    assert np.allclose(out.data[0], oracle, atol=1e-12)


def test_bicubic_matches_scalar_oracle_downsample():
    rng = np.random.default_rng(5)
    band = rng.uniform(0, 1, (12, 10))
    out = resize_array(band[None], 6, 5, kernel="bicubic")
    oracle = scalar_bicubic_oracle(band, 6, 5)
    assert np.allclose(out[0], oracle, atol=1e-12)


def test_nonuniform_aspect_resize():
    img = make_smooth_image(10, 6, 2, seed=2)
    out = resize(img, 13, 21, kernel="bicubic")
    assert out.meta.height == 13 and out.meta.width == 21
    assert np.all(np.isfinite(out.data))
