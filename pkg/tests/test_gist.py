import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from keypos.gist import (
    DTHETA_ON_SIGMA,
    SIGMA_ON_F,
    GistDescriptor,
    build_gabor_bank,
    gist_descriptor,
    gist_distance,
    gist_multimodal,
)
from keypos.model import FrameRecord, GeoCoordinate, MissingModalityError, Modality
from keypos.preprocess import prefilter_normalize


@pytest.fixture(scope="module")
def bank():
    return build_gabor_bank()


def _transfer(fx, fy, f0, angle, n_orient):
    """Log-Gabor gain at one continuous frequency, written out from the definition."""
    r = math.hypot(fx, fy)
    if r == 0:
        return 0.0
    radial = math.exp(-(math.log(r / f0) ** 2) / (2 * math.log(SIGMA_ON_F) ** 2))
    d = (math.atan2(fy, fx) - angle + math.pi) % (2 * math.pi) - math.pi
    sigma = math.pi / n_orient / DTHETA_ON_SIGMA
    return radial * math.exp(-d * d / (2 * sigma * sigma))


def _vec(values, names=("rgb",)):
    n = len(values) // len(names)
    return GistDescriptor(np.asarray(values, np.float32), tuple((m, i * n, n) for i, m in enumerate(names)))


class TestBank:
    def test_default_has_twenty_filters(self, bank):
        assert len(bank) == 20
        assert bank.filters.shape == (20, 128, 128)
        assert np.bincount(bank.scale_of_filter).tolist() == [8, 8, 4]

    def test_single_scale_orientations(self):
        b = build_gabor_bank(1, [4], 64)
        assert len(b) == 4
        assert np.allclose(b.angle_of_filter, [0, math.pi / 4, math.pi / 2, 3 * math.pi / 4])

    def test_dc_response_is_zero(self, bank):
        assert np.abs(bank.filters[:, 0, 0]).max() <= 1e-6

    def test_centre_frequencies(self, bank):
        assert bank.center_frequencies == (32.0, 16.0, 8.0)

    def test_matches_pointwise_definition(self, bank):
        rng = np.random.default_rng(4)
        freqs = np.fft.fftfreq(128) * 128
        for _ in range(200):
            k = int(rng.integers(len(bank)))
            i, j = rng.integers(128, size=2)
            s = bank.scale_of_filter[k]
            expected = _transfer(freqs[j], freqs[i], bank.center_frequencies[s], bank.angle_of_filter[k],
                                 bank.orientations_per_scale[s])
            assert bank.filters[k, i, j] == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("args", [(3, [8, 0, 4], 128), (2, [8, 8, 4], 128), (1, [4], 100)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            build_gabor_bank(*args)

    def test_deterministic(self):
        assert np.array_equal(build_gabor_bank().filters, build_gabor_bank().filters)


class TestDescriptor:
    def test_length(self, bank):
        img = np.random.default_rng(0).random((128, 128))
        assert gist_descriptor(img, bank).shape == (320,)

    def test_constant_image_is_zero(self, bank):
        work = prefilter_normalize(np.full((128, 128), 0.37))
        assert not gist_descriptor(work, bank).any()

    def test_size_mismatch(self, bank):
        with pytest.raises(ValueError):
            gist_descriptor(np.zeros((64, 64)), bank)

    @pytest.mark.parametrize("fx,fy", [(32, 0), (0, 16), (11, 11), (8, 0), (0, 8), (-6, 6), (23, 23), (-12, 12)])
    def test_grating_selects_matching_filter(self, bank, fx, fy):
        y, x = np.mgrid[0:128, 0:128]
        grating = np.cos(2 * np.pi * (fx * x + fy * y) / 128)
        # oracle: the grating's two spectral lines at +-(fx, fy) against each transfer function
        gains = [
            _transfer(fx, fy, bank.center_frequencies[s], a, bank.orientations_per_scale[s])
            + _transfer(-fx, -fy, bank.center_frequencies[s], a, bank.orientations_per_scale[s])
            for s, a in zip(bank.scale_of_filter, bank.angle_of_filter)
        ]
        energy = gist_descriptor(grating, bank).reshape(20, 16).sum(axis=1)
        assert int(np.argmax(energy)) == int(np.argmax(gains))

    def test_repeatable(self, bank):
        img = np.random.default_rng(1).random((128, 128))
        assert np.array_equal(gist_descriptor(img, bank), gist_descriptor(img, bank))


class TestMultimodal:
    def _frame(self, ir=True, depth=True):
        rng = np.random.default_rng(3)
        return FrameRecord(
            0, 0.0, rng.integers(0, 256, (240, 320, 3), dtype=np.uint8), GeoCoordinate(0, 0),
            depth=rng.integers(0, 9000, (240, 320), dtype=np.uint16) if depth else None,
            infrared=rng.integers(0, 256, (240, 320), dtype=np.uint8) if ir else None,
        )

    def test_rgb_length(self, bank):
        g = gist_multimodal(self._frame(), bank, Modality.RGB)
        assert len(g) == 320 and g.layout == (("rgb", 0, 320),)

    def test_rgb_ir_d_layout(self, bank):
        g = gist_multimodal(self._frame(), bank, Modality.RGB_IR_D)
        assert len(g) == 960
        assert g.layout == (("rgb", 0, 320), ("ir", 320, 320), ("depth", 640, 320))
        assert np.isfinite(g.values).all()

    def test_missing_ir(self, bank):
        with pytest.raises(MissingModalityError):
            gist_multimodal(self._frame(ir=False), bank, Modality.RGB_IR)


class TestDistance:
    def test_identity(self):
        v = _vec(np.random.default_rng(0).random(320))
        assert gist_distance(v, v) == 0.0

    def test_single_entry(self):
        y = np.zeros(320)
        y[17] = 3.0
        assert gist_distance(_vec(np.zeros(320)), _vec(y)) == 3.0

    @given(arrays(np.float32, 320, elements=st.floats(0, 10, width=32)),
           arrays(np.float32, 320, elements=st.floats(0, 10, width=32)))
    @settings(max_examples=40)
    def test_matches_naive_sum(self, a, b):
        naive = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
        assert gist_distance(_vec(a), _vec(b)) == pytest.approx(naive, rel=1e-12, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (_vec(rng.random(320)) for _ in range(3))
        assert gist_distance(a, b) == gist_distance(b, a)
        assert gist_distance(a, c) <= gist_distance(a, b) + gist_distance(b, c) + 1e-9

    def test_layout_mismatch(self):
        with pytest.raises(ValueError):
            gist_distance(_vec(np.zeros(640), ("rgb", "ir")), _vec(np.zeros(640), ("rgb", "depth")))
