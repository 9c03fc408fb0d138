"""
patches.py

Overlapping patch extraction, its adjoint (aggregation), patch cover counts,
and the per-layer residual images of a transform stack.

Conventions used everywhere in the package:
  * pixels inside a patch are vectorized row-major,
  * patch columns are ordered in raster order over the patch top-left corners,
  * only interior patches are used (no wrap-around, no zero padding).
"""

from dataclasses import dataclass
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_logger = logging.getLogger(__name__)


@dataclass
class ImageGrid:
    """
    A 2D image in modified HU (air = 0, water = 1000).

    Parameters
    ----------
    values: np.array
        (height, width) array of pixel values
    pixel_size: float
        Isotropic pixel size in mm
    """

    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        try:
            assert self.values.ndim == 2
            assert self.values.shape[0] >= 1 and self.values.shape[1] >= 1
        except AssertionError:
            raise ValueError(
                "Image must be a non-empty 2D array, got shape {}".format(self.values.shape)
            )

        try:
            assert self.pixel_size > 0.0
        except AssertionError:
            raise ValueError("Pixel size {} is invalid!".format(self.pixel_size))

        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("Image contains non-finite values!")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def copy(self):
        return ImageGrid(self.values.copy(), self.pixel_size)

    def with_values(self, values):
        return ImageGrid(np.asarray(values).reshape(self.shape), self.pixel_size)


@dataclass(frozen=True)
class PatchGeometry:
    """
    Patch layout on an image grid.

    Parameters
    ----------
    image_h, image_w: int
        Image size in pixels
    patch_h, patch_w: int
        Patch size in pixels
    stride_y, stride_x: int
        Patch stride in pixels (default 1)
    """

    image_h: int
    image_w: int
    patch_h: int = 8
    patch_w: int = 8
    stride_y: int = 1
    stride_x: int = 1

    def __post_init__(self):
        check_patch_geometry(self)

    @classmethod
    def for_image(cls, image, patch_h=8, patch_w=8, stride=1):
        height, width = np.shape(_image_values(image))
        return cls(height, width, patch_h, patch_w, stride, stride)

    @property
    def p(self):
        return self.patch_h * self.patch_w

    @property
    def n_rows(self):
        return (self.image_h - self.patch_h) // self.stride_y + 1

    @property
    def n_cols(self):
        return (self.image_w - self.patch_w) // self.stride_x + 1

    @property
    def n_patches(self):
        return self.n_rows * self.n_cols

    @property
    def image_shape(self):
        return (self.image_h, self.image_w)


def check_patch_geometry(geom):
    try:
        assert geom.image_h >= 1 and geom.image_w >= 1
        assert 1 <= geom.patch_h <= geom.image_h
        assert 1 <= geom.patch_w <= geom.image_w
    except AssertionError:
        raise ValueError(
            "Patch {}x{} does not fit image {}x{}!".format(
                geom.patch_h, geom.patch_w, geom.image_h, geom.image_w
            )
        )

    try:
        assert geom.stride_y >= 1 and geom.stride_x >= 1
    except AssertionError:
        raise ValueError(
            "Patch strides ({}, {}) are invalid!".format(geom.stride_y, geom.stride_x)
        )


def _image_values(x):
    if isinstance(x, ImageGrid):
        return x.values
    return np.asarray(x, dtype=np.float64)


def extract_patches(x, geom):
    """
    Extract and vectorize every patch of an image.

    Parameters
    ----------
    x: ImageGrid or np.array
        Image of shape (geom.image_h, geom.image_w)
    geom: PatchGeometry
        Patch layout

    Returns
    -------
    cols: np.array
        (p, N) matrix, column j holds the j-th patch in raster order
    """

    img = _image_values(x)
    try:
        assert img.shape == geom.image_shape
    except AssertionError:
        raise ValueError(
            "Image shape {} does not match patch geometry {}".format(img.shape, geom.image_shape)
        )

    windows = sliding_window_view(img, (geom.patch_h, geom.patch_w))
    windows = windows[:: geom.stride_y, :: geom.stride_x]

    return np.ascontiguousarray(windows.reshape(geom.n_patches, geom.p).T)


def aggregate_patches(cols, geom, pixel_size=1.0):
    """
    Put patch columns back on the image grid and sum overlaps, the exact
    adjoint of `extract_patches`.

    Accumulation runs over the p in-patch offsets in a fixed order, so the
    result is reproducible bit for bit.

    Parameters
    ----------
    cols: np.array
        (p, N) matrix of patch columns
    geom: PatchGeometry
        Patch layout
    pixel_size: float
        Pixel size of the returned image in mm

    Returns
    -------
    img: ImageGrid
        Sum over j of (P^j)^T cols_j
    """

    cols = np.asarray(cols, dtype=np.float64)
    try:
        assert cols.shape == (geom.p, geom.n_patches)
    except AssertionError:
        raise ValueError(
            "Patch matrix shape {} does not match geometry ({}, {})".format(
                cols.shape, geom.p, geom.n_patches
            )
        )

    out = np.zeros(geom.image_shape)
    blocks = cols.reshape(geom.patch_h, geom.patch_w, geom.n_rows, geom.n_cols)
    y_span = geom.stride_y * (geom.n_rows - 1) + 1
    x_span = geom.stride_x * (geom.n_cols - 1) + 1

    for dy in range(geom.patch_h):
        for dx in range(geom.patch_w):
            out[dy : dy + y_span : geom.stride_y, dx : dx + x_span : geom.stride_x] += blocks[dy, dx]

    return ImageGrid(out, pixel_size)


def patch_cover_counts(geom):
    """Number of patches covering each pixel (the diagonal of sum_j (P^j)^T P^j)."""
    ones = np.ones(geom.image_shape)
    return aggregate_patches(extract_patches(ones, geom), geom)


def residual_images(model, state, geom, normalize=False, pixel_size=1.0):
    """
    Form the residual image sum_j (P^j)^T R_l^j of every layer.

    Parameters
    ----------
    model: TransformStack
        Model the residuals belong to
    state: CodeResidualState
        Codes and residual maps, consistent with model
    geom: PatchGeometry
        Patch layout the residual columns were extracted with
    normalize: bool
        Divide each image by the patch cover counts
    pixel_size: float
        Pixel size of the returned images in mm

    Returns
    -------
    images: list of ImageGrid
        One image per layer
    """

    try:
        assert len(state.R) == model.L
    except AssertionError:
        raise ValueError(
            "State has {} residual maps but model has {} layers".format(len(state.R), model.L)
        )

    counts = patch_cover_counts(geom).values if normalize else None

    images = list()
    for l, R in enumerate(state.R, start=1):
        img = aggregate_patches(R, geom, pixel_size)
        if counts is not None:
            img = img.with_values(img.values / np.maximum(counts, 1.0))
        _logger.debug("Layer %d residual energy %.6e", l, np.sum(img.values ** 2))
        images.append(img)

    return images
