import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from keypos.preprocess import illumination_invariant, normalize_depth, prefilter_normalize, to_grayscale

rgb_images = arrays(np.uint8, st.tuples(st.integers(2, 12), st.integers(2, 12), st.just(3)))


def _gauss_blur_reference(img, sigma):
    # separable sampled Gaussian, radius 4 sigma, mirrored borders (edge sample repeated)
    r = int(round(sigma * 4))
    x = np.arange(-r, r + 1)
    k = np.exp(-x**2 / (2 * sigma**2))
    k /= k.sum()
    p = np.pad(img, r, mode="symmetric")
    rows = np.array([[np.dot(k, p[i, j:j + 2 * r + 1]) for j in range(img.shape[1])] for i in range(p.shape[0])])
    return np.array([[np.dot(k, rows[i:i + 2 * r + 1, j]) for j in range(img.shape[1])] for i in range(img.shape[0])])


class TestGrayscale:
    @pytest.mark.parametrize("px,expected", [((255, 255, 255), 1.0), ((0, 0, 0), 0.0), ((255, 0, 0), 0.299)])
    def test_examples(self, px, expected):
        img = np.array([[px]], dtype=np.uint8)
        assert to_grayscale(img)[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_wrong_channels(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((4, 4), np.uint8))


class TestIlluminationInvariant:
    @given(st.integers(1, 255))
    def test_gray_pixel_is_half(self, v):
        img = np.full((1, 1, 3), v, np.uint8)
        assert illumination_invariant(img)[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_worked_pixel(self):
        # 0.5 + ln128 - 0.48 ln32 - 0.52 ln64 = 0.5 + (7 - 2.4 - 3.12) ln2, evaluated by hand
        img = np.array([[[64, 128, 32]]], np.uint8)
        assert illumination_invariant(img, 0.48)[0, 0] == pytest.approx(1.52585782722872, abs=1e-9)

    @given(rgb_images, st.floats(0.05, 20.0))
    def test_exact_scale_invariance_before_quantization(self, img, s):
        # with no channel at the 1/255 floor, a real-valued gain cancels exactly
        img = np.maximum(img, 1)
        base = img.astype(np.float64) / 255.0
        out_a = 0.5 + np.log(base[..., 1]) - 0.48 * np.log(base[..., 2]) - 0.52 * np.log(base[..., 0])
        scaled = base * s
        out_b = 0.5 + np.log(scaled[..., 1]) - 0.48 * np.log(scaled[..., 2]) - 0.52 * np.log(scaled[..., 0])
        assert np.allclose(illumination_invariant(img), out_a, atol=1e-12)
        assert np.allclose(out_a, out_b, atol=1e-9)

    def test_floor_keeps_output_finite(self):
        img = np.zeros((3, 3, 3), np.uint8)
        img[0, 0] = (0, 255, 0)
        assert np.isfinite(illumination_invariant(img)).all()

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            illumination_invariant(np.ones((2, 2, 3), np.uint8), alpha)


class TestPrefilter:
    @given(st.floats(0.0, 1.0), st.integers(4, 40), st.integers(4, 40))
    @settings(max_examples=30)
    def test_constant_image_maps_to_zero(self, v, h, w):
        assert not prefilter_normalize(np.full((h, w), v)).any()

    def test_deterministic(self):
        img = np.random.default_rng(0).random((32, 32))
        assert np.array_equal(prefilter_normalize(img), prefilter_normalize(img))

    def test_step_edge_matches_reference(self):
        img = np.zeros((16, 16))
        img[:, 8:] = 0.8
        out = prefilter_normalize(img)
        logged = np.log1p(img * 255.0)
        hi = logged - _gauss_blur_reference(logged, 4.0)
        ref = hi / (0.01 + np.sqrt(_gauss_blur_reference(hi * hi, 4.0)))
        assert np.allclose(out, ref, atol=1e-9)
        assert (np.sign(out[:, 7]) != np.sign(out[:, 8])).all()
        assert np.abs(out).max() <= 10

    def test_output_finite(self):
        img = np.random.default_rng(1).random((64, 48))
        assert np.isfinite(prefilter_normalize(img)).all()


def test_depth_clamped_and_scaled():
    d = np.array([[0, 5000, 10000, 20000]], np.uint16)
    assert normalize_depth(d).tolist() == [[0.0, 0.5, 1.0, 1.0]]
