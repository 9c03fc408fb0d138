import numpy as np
import pytest

from mars.utils.metrics import RoiMask, circular_roi, rmse_hu, ssim
from mars.utils.patches import ImageGrid


def test_rmse_examples(rng):
    x = rng.normal(scale=100.0, size=(32, 32)) + 1000.0
    assert rmse_hu(x, x) == 0.0
    assert rmse_hu(x + 10.0, x) == pytest.approx(10.0)
    assert rmse_hu(ImageGrid(x), ImageGrid(x - 3.0)) == pytest.approx(3.0)


def test_rmse_over_roi():
    x = np.zeros((4, 4))
    ref = np.zeros((4, 4))
    ref[0, 0] = 100.0
    roi = RoiMask(np.pad(np.ones((2, 2)), 1))
    assert rmse_hu(x, ref, roi) == 0.0
    assert rmse_hu(x, ref) == pytest.approx(25.0)


def test_circular_roi():
    roi = circular_roi(64, 64)
    assert roi.shape == (64, 64)
    assert roi.mask[31, 31] and roi.mask[32, 32]
    assert not roi.mask[0, 0] and not roi.mask[63, 0]
    assert roi.count == pytest.approx(np.pi * (0.48 * 64) ** 2, rel=0.02)

    with pytest.raises(ValueError):
        circular_roi(8, 8, 0.0)
    with pytest.raises(ValueError):
        RoiMask(np.zeros((4, 4)))


def test_ssim_of_identical_images(rng):
    x = rng.normal(scale=50.0, size=(32, 32)) + 1000.0
    assert ssim(x, x) == pytest.approx(1.0)
    assert ssim(x, x, circular_roi(32, 32)) == pytest.approx(1.0)


def test_ssim_drops_with_noise(rng):
    x = np.zeros((32, 32)) + 1000.0
    x[8:24, 8:24] = 1100.0
    noisy = x + rng.normal(scale=40.0, size=x.shape)
    noisier = x + rng.normal(scale=120.0, size=x.shape)
    assert -1.0 <= ssim(noisier, x) < ssim(noisy, x) < 1.0


def test_ssim_errors(rng):
    x = rng.normal(size=(16, 16))
    with pytest.raises(ValueError):
        ssim(x, x[:15])
    with pytest.raises(ValueError):
        ssim(x, x, data_range=0.0)
    with pytest.raises(ValueError):
        rmse_hu(x, x, circular_roi(12, 12))


def test_metrics_are_symmetric(rng):
    ref = rng.normal(scale=50.0, size=(32, 32)) + 1000.0
    x = ref + rng.normal(scale=30.0, size=ref.shape)
    assert rmse_hu(x, ref) == rmse_hu(ref, x)
    assert ssim(x, ref) == pytest.approx(ssim(ref, x))
    roi = circular_roi(32, 32)
    assert ssim(x, ref, roi) == pytest.approx(ssim(ref, x, roi))


def test_ssim_of_inverted_ramp_is_negative():
    ref = np.tile(np.linspace(600.0, 1400.0, 32), (32, 1))
    flipped = 2.0 * ref.mean() - ref
    assert -1.0 <= ssim(flipped, ref) < 0.0


def test_ssim_of_constant_images():
    ref = np.full((16, 16), 1000.0)
    assert ssim(ref.copy(), ref) == pytest.approx(1.0)


@pytest.mark.parametrize("c", [1.0, 7.5, 40.0])
def test_rmse_of_checkerboard_error(c):
    ref = np.full((16, 16), 1000.0)
    signs = np.indices(ref.shape).sum(axis=0) % 2 * 2 - 1
    assert rmse_hu(ref + c * signs, ref) == pytest.approx(c)
