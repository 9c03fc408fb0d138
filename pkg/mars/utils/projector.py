"""
projector.py

Desk-scale 2D parallel-beam geometry, Siddon ray-driven system matrix,
and forward/back projection in modified HU.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sps

from mars.utils.patches import ImageGrid

_logger = logging.getLogger(__name__)

MU_WATER = 0.02  # mm^-1
_EPS = 1e-12


@dataclass(frozen=True)
class ScanGeometry:
    """
    Parallel-beam scan of a square-pixel image grid centered on the rotation axis.

    Parameters
    ----------
    height, width: int
        Image size in pixels
    pixel_size: float
        Pixel size in mm
    n_views: int
        Number of projection angles, uniform over [start_angle, start_angle + pi)
    n_bins: int
        Detector bins per view
    bin_spacing: float
        Detector bin spacing in mm (defaults to pixel_size)
    start_angle: float
        First view angle in radians
    """

    height: int = 64
    width: int = 64
    pixel_size: float = 4.0
    n_views: int = 120
    n_bins: int = 96
    bin_spacing: float = None
    start_angle: float = 0.0

    def __post_init__(self):
        if self.bin_spacing is None:
            object.__setattr__(self, "bin_spacing", self.pixel_size)
        check_scan_geometry(self)

    @property
    def angles(self):
        return self.start_angle + np.arange(self.n_views) * np.pi / self.n_views

    @property
    def bin_offsets(self):
        return (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * self.bin_spacing

    @property
    def n_rays(self):
        return self.n_views * self.n_bins

    @property
    def n_pixels(self):
        return self.height * self.width

    @property
    def image_shape(self):
        return (self.height, self.width)

    def pixel_centers(self):
        """(x, y) coordinates in mm of every pixel center, each of shape image_shape."""
        xs = (np.arange(self.width) - (self.width - 1) / 2.0) * self.pixel_size
        ys = (np.arange(self.height) - (self.height - 1) / 2.0) * self.pixel_size
        return np.meshgrid(xs, ys)


def check_scan_geometry(geom):
    try:
        assert geom.height >= 1 and geom.width >= 1
        assert geom.pixel_size > 0.0
    except AssertionError:
        raise ValueError(
            "Image grid {}x{} with pixel size {} is invalid!".format(
                geom.height, geom.width, geom.pixel_size
            )
        )

    try:
        assert geom.n_views >= 1 and geom.n_bins >= 1
        assert geom.bin_spacing > 0.0
    except AssertionError:
        raise ValueError(
            "Scan with {} views, {} bins, spacing {} is invalid!".format(
                geom.n_views, geom.n_bins, geom.bin_spacing
            )
        )

    diagonal = np.hypot(geom.height, geom.width) * geom.pixel_size
    if geom.n_bins * geom.bin_spacing < diagonal:
        _logger.warning(
            "Detector width %.1f mm does not span the image diagonal %.1f mm",
            geom.n_bins * geom.bin_spacing,
            diagonal,
        )


@dataclass
class SystemMatrix:
    """
    Sparse system matrix with intersection lengths in mm, applied to images
    in modified HU.

    Parameters
    ----------
    matrix: scipy.sparse matrix
        (N_d, N_p) intersection lengths, pixels in row-major order
    image_shape: tuple
        (height, width) of the image grid
    pixel_size: float
        Pixel size in mm
    scale: float
        Attenuation per HU (mu_water / 1000)
    sinogram_shape: tuple
        (n_views, n_bins) layout of the rays, (1, N_d) if unknown
    """

    matrix: sps.csr_matrix
    image_shape: tuple
    pixel_size: float = 1.0
    scale: float = MU_WATER / 1000.0
    sinogram_shape: tuple = None
    _adjoint: sps.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = sps.csr_matrix(self.matrix, dtype=np.float64)
        try:
            assert self.matrix.shape[1] == self.image_shape[0] * self.image_shape[1]
        except AssertionError:
            raise ValueError(
                "System matrix with {} columns does not match image shape {}".format(
                    self.matrix.shape[1], self.image_shape
                )
            )
        if self.sinogram_shape is None:
            self.sinogram_shape = (1, self.matrix.shape[0])
        try:
            assert self.sinogram_shape[0] * self.sinogram_shape[1] == self.matrix.shape[0]
        except AssertionError:
            raise ValueError(
                "Sinogram shape {} does not match {} rays".format(self.sinogram_shape, self.matrix.shape[0])
            )
        self._adjoint = self.matrix.T.tocsr()

    @property
    def n_rays(self):
        return self.matrix.shape[0]

    @property
    def n_pixels(self):
        return self.matrix.shape[1]

    def forward(self, x):
        """Line integrals of attenuation for a flat HU vector."""
        x = np.ravel(x)
        try:
            assert x.size == self.n_pixels
        except AssertionError:
            raise ValueError("Image of {} pixels does not match {}".format(x.size, self.n_pixels))
        return self.scale * (self.matrix @ x)

    def adjoint(self, y):
        """Exact adjoint of `forward`, returned as a flat vector."""
        y = np.ravel(y)
        try:
            assert y.size == self.n_rays
        except AssertionError:
            raise ValueError("Sinogram of {} rays does not match {}".format(y.size, self.n_rays))
        return self.scale * (self._adjoint @ y)


def trace_ray(theta, offset, geom):
    """
    Siddon traversal of one parallel-beam ray.

    The ray is the line x cos(theta) + y sin(theta) = offset.

    Returns
    -------
    pixels: np.array of int
        Row-major indices of the pixels the ray crosses
    lengths: np.array
        Intersection lengths in mm
    """

    dx, dy = -np.sin(theta), np.cos(theta)
    px, py = offset * np.cos(theta), offset * np.sin(theta)
    delta = geom.pixel_size
    x_lo, x_hi = -geom.width * delta / 2.0, geom.width * delta / 2.0
    y_lo, y_hi = -geom.height * delta / 2.0, geom.height * delta / 2.0

    empty = (np.zeros(0, dtype=np.int64), np.zeros(0))

    s_min, s_max = -np.inf, np.inf
    for p0, d, lo, hi in ((px, dx, x_lo, x_hi), (py, dy, y_lo, y_hi)):
        if abs(d) < _EPS:
            if not lo <= p0 < hi:
                return empty
            continue
        s1, s2 = (lo - p0) / d, (hi - p0) / d
        s_min = max(s_min, min(s1, s2))
        s_max = min(s_max, max(s1, s2))

    if s_max - s_min <= _EPS * delta:
        return empty

    crossings = [np.array([s_min, s_max])]
    if abs(dx) >= _EPS:
        crossings.append((x_lo + delta * np.arange(geom.width + 1) - px) / dx)
    if abs(dy) >= _EPS:
        crossings.append((y_lo + delta * np.arange(geom.height + 1) - py) / dy)

    s = np.concatenate(crossings)
    s = np.unique(s[(s >= s_min) & (s <= s_max)])

    lengths = np.diff(s)
    mid = 0.5 * (s[:-1] + s[1:])
    cols = np.clip(np.floor((px + mid * dx - x_lo) / delta).astype(np.int64), 0, geom.width - 1)
    rows = np.clip(np.floor((py + mid * dy - y_lo) / delta).astype(np.int64), 0, geom.height - 1)

    keep = lengths > _EPS * delta
    return rows[keep] * geom.width + cols[keep], lengths[keep]


def build_system_matrix(geom, mu_water=MU_WATER):
    """
    Build the ray-driven system matrix of a parallel-beam scan.

    Row v * n_bins + b holds the exact intersection lengths of the ray at
    angle angles[v] and offset bin_offsets[b].

    Parameters
    ----------
    geom: ScanGeometry
    mu_water: float
        Water attenuation in mm^-1, sets the HU to attenuation scale

    Returns
    -------
    SystemMatrix
    """

    try:
        assert mu_water > 0.0
    except AssertionError:
        raise ValueError("Water attenuation {} is invalid!".format(mu_water))

    rows, cols, vals = list(), list(), list()
    offsets = geom.bin_offsets
    for v, theta in enumerate(geom.angles):
        for b, offset in enumerate(offsets):
            pixels, lengths = trace_ray(theta, offset, geom)
            rows.append(np.full(pixels.size, v * geom.n_bins + b, dtype=np.int64))
            cols.append(pixels)
            vals.append(lengths)

    matrix = sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.n_rays, geom.n_pixels),
    )
    _logger.info(
        "Built %dx%d system matrix with %d nonzeros", matrix.shape[0], matrix.shape[1], matrix.nnz
    )

    return SystemMatrix(
        matrix, geom.image_shape, geom.pixel_size, mu_water / 1000.0, (geom.n_views, geom.n_bins)
    )


def forward_project(A, x):
    """Attenuation line integrals of an image in modified HU."""
    values = x.values if isinstance(x, ImageGrid) else np.asarray(x, dtype=np.float64)
    try:
        assert values.size == A.n_pixels
    except AssertionError:
        raise ValueError("Image shape {} does not match system matrix".format(values.shape))
    return A.forward(values)


def back_project(A, y):
    """Adjoint of `forward_project`, returned on the image grid."""
    return ImageGrid(A.adjoint(y).reshape(A.image_shape), A.pixel_size)
