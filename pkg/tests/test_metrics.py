import math

import numpy as np
import pytest

from hidflow.degradation import add_gaussian
from hidflow.errors import DataError
from hidflow.metrics import MetricReport, psnr, report, sam, sam_with_count, ssim


class TestPsnr:
    def test_identical_is_infinite(self):
        x = np.random.default_rng(0).uniform(0, 1, (16, 16, 4))
        assert psnr(x, x) == math.inf

    def test_uniform_offset_closed_form(self):
        x = np.random.default_rng(1).uniform(0, 0.5, (16, 16, 4))
        assert abs(psnr(x + 0.1, x) - 20.0) < 1e-9

    def test_gaussian_noise_matches_sigma_prediction(self):
        x = np.full((128, 128, 31), 0.5)
        noisy = add_gaussian(x, 50.0, seed=0)
        predicted = 10 * np.log10(1.0 / (50.0 / 255.0) ** 2)  # ~14.15 dB
        assert abs(psnr(noisy, x) - predicted) < 0.1

    def test_monotone_in_noise_std(self):
        x = np.full((64, 64, 8), 0.5)
        values = [psnr(add_gaussian(x, s, seed=1), x) for s in (10, 30, 50, 90)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestSsim:
    def test_identical_is_one(self):
        x = np.random.default_rng(2).uniform(0, 1, (32, 32, 3))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_image_below_one(self):
        x = np.random.default_rng(3).uniform(0, 1, (32, 32))
        assert ssim(1.0 - x, x) < 1.0

    def test_too_small_image(self):
        with pytest.raises(DataError):
            ssim(np.zeros((8, 8, 2)), np.zeros((8, 8, 2)))

    def test_matches_reference_implementation(self):
        skimage = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 1, (48, 40))
        y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
        want = skimage.structural_similarity(
            x, y, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0)
        assert abs(ssim(y, x) - want) < 1e-6

    def test_band_average(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 1, (20, 20, 3))
        y = np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
        per_band = [ssim(y[:, :, b], x[:, :, b]) for b in range(3)]
        assert ssim(y, x) == pytest.approx(np.mean(per_band), abs=1e-12)

    def test_in_valid_range(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, (24, 24, 2))
        y = rng.uniform(0, 1, (24, 24, 2))
        assert -1.0 <= ssim(x, y) <= 1.0


class TestSam:
    def test_identical_nonzero_spectra(self):
        x = np.random.default_rng(7).uniform(0.1, 1, (8, 8, 5))
        assert sam(x, x) == pytest.approx(0.0, abs=1e-7)

    def test_scale_invariance(self):
        x = np.random.default_rng(8).uniform(0.1, 1, (8, 8, 5))
        assert sam(2.0 * x, x) == pytest.approx(0.0, abs=1e-7)
        scale = np.random.default_rng(9).uniform(0.5, 3.0, (8, 8, 1))
        assert sam(x * scale, x) == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal_spectra(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        a[:, :, 0] = 1.0
        b[:, :, 1] = 1.0
        assert sam(a, b) == pytest.approx(math.pi / 2.0, abs=1e-12)

    def test_degenerate_pixels_skipped_and_counted(self):
        x = np.random.default_rng(10).uniform(0.1, 1, (4, 4, 3))
        y = x.copy()
        x[0, 0] = 0.0  # degenerate spectrum in one pixel
        value, skipped = sam_with_count(x, y)
        assert skipped == 1
        assert value == pytest.approx(0.0, abs=1e-7)

    def test_all_degenerate_raises(self):
        with pytest.raises(DataError):
            sam(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


def test_report_bundle():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.2, 0.8, (32, 32, 4))
    y = np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
    rep = report(y, x)
    assert isinstance(rep, MetricReport)
    assert rep.psnr > 20.0
    assert -1.0 <= rep.ssim <= 1.0
    assert 0.0 <= rep.sam <= math.pi
    row = rep.row()
    assert set(row) == {"psnr", "ssim", "sam", "sam_skipped"}
