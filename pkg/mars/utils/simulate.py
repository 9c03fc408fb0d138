"""
simulate.py

Synthetic ellipse phantoms and low-dose "Poisson + Gaussian" measurement
simulation with statistical weights.
"""

from dataclasses import dataclass
import logging

import numpy as np

from mars.utils.patches import ImageGrid
from mars.utils.projector import forward_project

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ellipse:
    """
    Parameters
    ----------
    cx, cy: float
        Center in mm
    ax, ay: float
        Semi-axes in mm
    angle_deg: float
        Rotation in degrees
    hu: float
        Value added inside the ellipse
    """

    cx: float
    cy: float
    ax: float
    ay: float
    angle_deg: float
    hu: float


# body, a slightly dense insert and a low-density insert
DEFAULT_PHANTOM = (
    Ellipse(0.0, 0.0, 110.0, 85.0, 0.0, 1000.0),
    Ellipse(-35.0, 15.0, 22.0, 16.0, 30.0, 80.0),
    Ellipse(40.0, -10.0, 18.0, 28.0, -20.0, -150.0),
)


@dataclass
class Measurement:
    """
    Parameters
    ----------
    counts: np.array
        Pre-log transmission counts (after flooring)
    sino: np.array
        Post-log line integrals
    weights: np.array
        Statistical weights (estimated inverse variance of sino)
    I0: float
        Incident photons per ray
    sigma: float
        Electronic noise standard deviation
    n_views, n_bins: int
        Sinogram layout
    """

    counts: np.ndarray
    sino: np.ndarray
    weights: np.ndarray
    I0: float
    sigma: float
    n_views: int
    n_bins: int

    def __post_init__(self):
        n_rays = self.n_views * self.n_bins
        for name in ("counts", "sino", "weights"):
            values = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            try:
                assert values.size == n_rays
            except AssertionError:
                raise ValueError(
                    "Measurement {} has {} entries, expected {}".format(name, values.size, n_rays)
                )
            if not np.all(np.isfinite(values)):
                raise FloatingPointError("Measurement {} contains non-finite values!".format(name))
            setattr(self, name, values)

        try:
            assert np.all(self.weights > 0.0)
        except AssertionError:
            raise ValueError("Measurement weights must be strictly positive!")


def phantom_generate(ellipses, height, width, pixel_size):
    """
    Sum of ellipse indicators evaluated at pixel centers.

    Parameters
    ----------
    ellipses: list of Ellipse
    height, width: int
        Image size in pixels
    pixel_size: float
        Pixel size in mm

    Returns
    -------
    ImageGrid
    """

    xs = (np.arange(width) - (width - 1) / 2.0) * pixel_size
    ys = (np.arange(height) - (height - 1) / 2.0) * pixel_size
    X, Y = np.meshgrid(xs, ys)

    img = np.zeros((height, width))
    for e in ellipses:
        phi = np.deg2rad(e.angle_deg)
        u = (X - e.cx) * np.cos(phi) + (Y - e.cy) * np.sin(phi)
        v = -(X - e.cx) * np.sin(phi) + (Y - e.cy) * np.cos(phi)
        img[(u / e.ax) ** 2 + (v / e.ay) ** 2 <= 1.0] += e.hu

    return ImageGrid(img, pixel_size)


def default_phantom(height=64, width=64, pixel_size=4.0):
    return phantom_generate(DEFAULT_PHANTOM, height, width, pixel_size)


def phantom_variants(n, height=64, width=64, pixel_size=4.0, seed=0, base=DEFAULT_PHANTOM):
    """
    Jittered copies of a phantom for training: centers move by up to 8 mm,
    axes and angles by up to 10 %, and insert values by up to 25 %.
    """

    rng = np.random.default_rng(seed)
    variants = list()
    for _ in range(n):
        ellipses = list()
        for k, e in enumerate(base):
            shift = rng.uniform(-8.0, 8.0, size=2) if k else np.zeros(2)
            stretch = rng.uniform(0.9, 1.1, size=2)
            ellipses.append(
                Ellipse(
                    e.cx + shift[0],
                    e.cy + shift[1],
                    e.ax * stretch[0],
                    e.ay * stretch[1],
                    e.angle_deg + rng.uniform(-18.0, 18.0),
                    e.hu * (rng.uniform(0.75, 1.25) if k else 1.0),
                )
            )
        variants.append(phantom_generate(ellipses, height, width, pixel_size))

    return variants


def count_floor(sigma):
    return 0.1 * sigma + 1.0


def statistical_weights(counts, sigma):
    """Inverse variance of the post-log data, counts^2 / (counts + sigma^2)."""
    counts = np.asarray(counts, dtype=np.float64)
    return counts ** 2 / (counts + sigma ** 2)


def simulate_counts(A, x_true, I0, sigma, seed=0, noiseless=False):
    """
    Simulate a low-dose scan of x_true.

    counts_i = Poisson(I0 exp(-[A mu(x)]_i)) + Normal(0, sigma^2), floored at
    0.1 sigma + 1 before taking the log.

    Parameters
    ----------
    A: SystemMatrix
    x_true: ImageGrid
        Object in modified HU
    I0: float
        Incident photons per ray
    sigma: float
        Electronic noise standard deviation
    seed: int
        Key of the Philox counter-based generator
    noiseless: bool
        Replace both noises by their means

    Returns
    -------
    Measurement
    """

    try:
        assert I0 > 0.0
    except AssertionError:
        raise ValueError("Incident intensity I0 = {} is invalid!".format(I0))

    try:
        assert sigma >= 0.0
    except AssertionError:
        raise ValueError("Electronic noise sigma = {} is invalid!".format(sigma))

    line = forward_project(A, x_true)
    mean = I0 * np.exp(-line)

    if noiseless:
        counts = mean.copy()
    else:
        rng = np.random.Generator(np.random.Philox(key=seed))
        counts = rng.poisson(mean).astype(np.float64)
        counts += rng.normal(0.0, sigma, size=counts.size) if sigma > 0.0 else 0.0

    floor = count_floor(sigma)
    n_floored = int(np.count_nonzero(counts < floor))
    counts = np.maximum(counts, floor)

    sino = np.log(I0 / counts)
    weights = statistical_weights(counts, sigma)

    _logger.info(
        "Simulated %d rays: counts in [%.1f, %.1f], %d floored at %.2f",
        counts.size,
        counts.min(),
        counts.max(),
        n_floored,
        floor,
    )

    n_views, n_bins = A.sinogram_shape
    return Measurement(counts, sino, weights, float(I0), float(sigma), n_views, n_bins)
