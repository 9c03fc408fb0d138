"""
metrics.py

Image quality metrics: RMSE in HU over a region of interest and SSIM.
"""

from dataclasses import dataclass
import logging

import numpy as np
from skimage.metrics import structural_similarity

from mars.utils.patches import ImageGrid

_logger = logging.getLogger(__name__)


@dataclass
class RoiMask:
    """Boolean image of the region of interest."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        try:
            assert self.mask.ndim == 2
            assert self.count >= 1
        except AssertionError:
            raise ValueError("Region of interest must be a 2D mask with at least one pixel!")

    @property
    def count(self):
        return int(np.count_nonzero(self.mask))

    @property
    def shape(self):
        return self.mask.shape


def circular_roi(height, width, radius_fraction=0.48):
    """Centered disk of radius radius_fraction * min(height, width) pixels."""
    try:
        assert radius_fraction > 0.0
    except AssertionError:
        raise ValueError("ROI radius fraction {} is invalid!".format(radius_fraction))

    i, j = np.mgrid[:height, :width]
    ci, cj = (height - 1) / 2.0, (width - 1) / 2.0
    radius = radius_fraction * min(height, width)
    return RoiMask((i - ci) ** 2 + (j - cj) ** 2 <= radius ** 2)


def _values(x):
    return x.values if isinstance(x, ImageGrid) else np.asarray(x, dtype=np.float64)


def _check_pair(x, ref, roi=None):
    try:
        assert x.shape == ref.shape
        if roi is not None:
            assert roi.shape == x.shape
    except AssertionError:
        raise ValueError(
            "Image shapes {} and {} do not match{}".format(
                x.shape, ref.shape, "" if roi is None else " ROI {}".format(roi.shape)
            )
        )


def rmse_hu(x, ref, roi=None):
    """
    Root mean square error over the region of interest.

    Parameters
    ----------
    x, ref: ImageGrid or np.array
        Images in modified HU
    roi: RoiMask, optional
        Default is the whole image

    Returns
    -------
    float
    """

    x, ref = _values(x), _values(ref)
    _check_pair(x, ref, roi)
    mask = np.ones(x.shape, dtype=bool) if roi is None else roi.mask
    return float(np.sqrt(np.mean((x[mask] - ref[mask]) ** 2)))


def ssim(x, ref, roi=None, data_range=400.0, sigma=1.5, k1=0.01, k2=0.03):
    """
    Mean structural similarity with a Gaussian window.

    Parameters
    ----------
    x, ref: ImageGrid or np.array
        Images in modified HU, at least 11x11 pixels
    roi: RoiMask, optional
        Average the local SSIM map over this region instead of the
        border-cropped image
    data_range: float
        Dynamic range D of the stabilizers (k1 D)^2 and (k2 D)^2
    sigma: float
        Standard deviation of the Gaussian window

    Returns
    -------
    float in [-1, 1]
    """

    x, ref = _values(x), _values(ref)
    _check_pair(x, ref, roi)

    try:
        assert data_range > 0.0
    except AssertionError:
        raise ValueError("SSIM dynamic range {} is invalid!".format(data_range))

    mssim, smap = structural_similarity(
        x,
        ref,
        data_range=data_range,
        gaussian_weights=True,
        sigma=sigma,
        use_sample_covariance=False,
        K1=k1,
        K2=k2,
        full=True,
    )

    if roi is None:
        return float(mssim)
    return float(np.mean(smap[roi.mask]))
