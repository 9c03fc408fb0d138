"""
fbp.py

Parallel-beam filtered back-projection, the analytical baseline and the
first stage of the reconstruction initialization chain.

The ramp filter is the band-limited spatial Ram-Lak kernel, apodized in the
Fourier domain (computed with pyfftw) by an optional Hann window.
"""

import logging

import numpy as np
import pyfftw

from mars.utils.patches import ImageGrid
from mars.utils.projector import MU_WATER

_logger = logging.getLogger(__name__)

WINDOWS = ("hann", "ramp")


def check_window(window):
    try:
        assert window in WINDOWS
    except AssertionError:
        raise ValueError("FBP window {} is invalid! Use one of {}".format(window, WINDOWS))


def ramp_kernel(n_fft, spacing):
    """
    Spatial Ram-Lak kernel sampled on a circular grid of n_fft points.

    h(0) = 1 / (4 d^2), h(n) = -1 / (n pi d)^2 for odd n, 0 for even n.
    """

    n = np.arange(n_fft)
    n = np.where(n < n_fft // 2, n, n - n_fft)

    h = np.zeros(n_fft)
    h[n == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    return h


def frequency_response(n_fft, spacing, window="hann"):
    """
    Frequency response of the (apodized) ramp filter.

    Parameters
    ----------
    n_fft: int
        Padded length
    spacing: float
        Detector bin spacing in mm
    window: str
        "hann" multiplies by 0.5 (1 + cos(pi f / f_N)); "ramp" keeps the bare ramp

    Returns
    -------
    np.array
        Real response of length n_fft, in fft ordering
    """

    check_window(window)

    response = np.real(pyfftw.interfaces.numpy_fft.fft(ramp_kernel(n_fft, spacing)))
    if window == "hann":
        f = np.fft.fftfreq(n_fft)
        response *= 0.5 * (1.0 + np.cos(np.pi * f / 0.5))
    return response


def filter_sinogram(sino, spacing, window="hann"):
    """
    Convolve every view of a (n_views, n_bins) sinogram with the ramp filter.

    Views are zero padded to the next power of two of at least 2 n_bins so
    the circular convolution does not wrap.
    """

    n_views, n_bins = sino.shape
    n_fft = int(2 ** np.ceil(np.log2(max(2 * n_bins, 2))))

    obj = pyfftw.empty_aligned((n_views, n_fft), dtype="float64")
    obj[:] = 0.0
    obj[:, :n_bins] = sino

    spectrum = pyfftw.interfaces.numpy_fft.fft(obj, axis=1)
    spectrum *= frequency_response(n_fft, spacing, window)[np.newaxis, :]
    filtered = pyfftw.interfaces.numpy_fft.ifft(spectrum, axis=1)

    return spacing * np.real(filtered[:, :n_bins])


def fbp_reconstruct(geom, meas, window="hann", mu_water=MU_WATER):
    """
    Filtered back-projection of post-log data.

    Parameters
    ----------
    geom: ScanGeometry
        Geometry the measurement was acquired with
    meas: Measurement
        Post-log sinogram (sino) in view-major order
    window: str
        "hann" (default) or "ramp"
    mu_water: float
        Water attenuation in mm^-1 used to convert back to modified HU

    Returns
    -------
    ImageGrid
        Reconstruction in modified HU (not clamped)
    """

    check_window(window)
    try:
        assert meas.n_views == geom.n_views and meas.n_bins == geom.n_bins
    except AssertionError:
        raise ValueError(
            "Measurement {}x{} does not match geometry {}x{}".format(
                meas.n_views, meas.n_bins, geom.n_views, geom.n_bins
            )
        )

    try:
        assert mu_water > 0.0
    except AssertionError:
        raise ValueError("Water attenuation {} is invalid!".format(mu_water))

    sino = meas.sino.reshape(geom.n_views, geom.n_bins)
    q = filter_sinogram(sino, geom.bin_spacing, window)

    X, Y = geom.pixel_centers()
    offsets = geom.bin_offsets
    mu = np.zeros(geom.image_shape)
    for theta, q_v in zip(geom.angles, q):
        t = X * np.cos(theta) + Y * np.sin(theta)
        mu += np.interp(t, offsets, q_v, left=0.0, right=0.0)

    mu *= np.pi / geom.n_views
    _logger.info("FBP with %s window over %d views", window, geom.n_views)

    return ImageGrid(mu * 1000.0 / mu_water, geom.pixel_size)
