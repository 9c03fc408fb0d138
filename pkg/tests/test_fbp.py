import numpy as np
import pytest

from mars.utils.fbp import fbp_reconstruct, filter_sinogram, frequency_response, ramp_kernel
from mars.utils.projector import ScanGeometry, build_system_matrix, forward_project
from mars.utils.simulate import Ellipse, Measurement, phantom_generate


def measurement_of(A, x, geom):
    sino = forward_project(A, x)
    ones = np.ones_like(sino)
    return Measurement(ones, sino, ones, 1e4, 0.0, geom.n_views, geom.n_bins)


def test_ramp_kernel_values():
    h = ramp_kernel(8, 2.0)
    assert h[0] == pytest.approx(1.0 / 16.0)
    assert h[1] == pytest.approx(-1.0 / (2.0 * np.pi) ** 2)
    assert h[-1] == pytest.approx(h[1])
    assert h[2] == 0.0 and h[-2] == 0.0


def test_frequency_response_is_a_ramp():
    d = 1.5
    ramp = frequency_response(256, d, "ramp")
    assert ramp[0] == pytest.approx(0.0, abs=1e-2 / d ** 2)
    assert ramp[128] == pytest.approx(1.0 / (2.0 * d ** 2), rel=1e-2)
    assert ramp[64] == pytest.approx(0.5 * ramp[128], rel=2e-2)

    hann = frequency_response(256, d, "hann")
    assert hann[128] == pytest.approx(0.0, abs=1e-12)
    assert np.all(hann <= ramp + 1e-12)


def test_filter_sinogram_shape_and_zero():
    out = filter_sinogram(np.zeros((3, 10)), 1.0)
    assert out.shape == (3, 10)
    np.testing.assert_array_equal(out, 0.0)


def test_zero_sinogram_gives_zero_image(small_geom):
    zeros = np.zeros(small_geom.n_rays)
    ones = np.ones(small_geom.n_rays)
    meas = Measurement(ones, zeros, ones, 1e4, 5.0, small_geom.n_views, small_geom.n_bins)
    img = fbp_reconstruct(small_geom, meas)
    assert img.shape == small_geom.image_shape
    np.testing.assert_array_equal(img.values, 0.0)


def test_fbp_is_linear(small_geom, rng):
    ones = np.ones(small_geom.n_rays)
    a, b = rng.normal(size=(2, small_geom.n_rays))

    def fbp(sino):
        meas = Measurement(ones, sino, ones, 1e4, 5.0, small_geom.n_views, small_geom.n_bins)
        return fbp_reconstruct(small_geom, meas, window="ramp").values

    np.testing.assert_allclose(fbp(2.0 * a - b), 2.0 * fbp(a) - fbp(b), atol=1e-9)


def test_fbp_errors(small_geom):
    ones = np.ones(small_geom.n_rays)
    meas = Measurement(ones, ones, ones, 1e4, 5.0, small_geom.n_views, small_geom.n_bins)
    with pytest.raises(ValueError):
        fbp_reconstruct(small_geom, meas, window="shepp")
    with pytest.raises(ValueError):
        fbp_reconstruct(small_geom, meas, mu_water=0.0)

    other = ScanGeometry(height=16, width=16, pixel_size=4.0, n_views=12, n_bins=24)
    with pytest.raises(ValueError):
        fbp_reconstruct(other, meas)


@pytest.mark.slow
@pytest.mark.parametrize("window", ["hann", "ramp"])
def test_noiseless_disk(window):
    geom = ScanGeometry(height=64, width=64, pixel_size=4.0, n_views=180, n_bins=96)
    A = build_system_matrix(geom)
    disk = phantom_generate([Ellipse(0.0, 0.0, 80.0, 80.0, 0.0, 1000.0)], 64, 64, 4.0)

    img = fbp_reconstruct(geom, measurement_of(A, disk, geom), window=window)

    X, Y = geom.pixel_centers()
    interior = X ** 2 + Y ** 2 <= 56.0 ** 2
    rmse = np.sqrt(np.mean((img.values[interior] - disk.values[interior]) ** 2))
    assert rmse <= 50.0
    assert np.abs(img.values[X ** 2 + Y ** 2 >= 110.0 ** 2]).max() <= 100.0
