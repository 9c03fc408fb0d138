"""
edge_preserving.py

PWLS baseline with an edge-preserving roughness penalty over the
8-connected neighborhood, solved with the same relaxed LALM kernel as the
learned-transform reconstruction.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from mars.utils.patches import ImageGrid
from mars.utils.recon import (
    ReconResult,
    SolverState,
    TraceEntry,
    check_alpha,
    data_term,
    lalm_update,
    majorizer_DA,
)

_logger = logging.getLogger(__name__)

# each unordered neighbor pair appears once here; the penalty counts both orders
NEIGHBORS = (
    ((0, 1), 1.0),
    ((1, 0), 1.0),
    ((1, 1), 1.0 / np.sqrt(2.0)),
    ((1, -1), 1.0 / np.sqrt(2.0)),
)


@dataclass
class EpConfig:
    """
    Parameters
    ----------
    beta: float
        Regularization weight
    delta: float
        Edge-preservation parameter in HU
    iters: int
        Number of image updates
    T_inner: int
        LALM iterations per image update
    alpha: float
        Relaxation parameter in [1, 2)
    kappa: np.array, optional
        Per-pixel weights, computed from the data when omitted
    """

    beta: float
    delta: float = 10.0
    iters: int = 50
    T_inner: int = 2
    alpha: float = 1.999
    kappa: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        check_ep_config(self)


def check_ep_config(config):
    try:
        assert config.beta > 0.0
    except AssertionError:
        raise ValueError("Edge-preserving weight beta = {} is invalid!".format(config.beta))

    try:
        assert config.delta > 0.0
    except AssertionError:
        raise ValueError("Edge-preserving delta = {} is invalid!".format(config.delta))

    try:
        assert config.iters >= 0 and config.T_inner >= 1
    except AssertionError:
        raise ValueError("Iteration counts {}, {} are invalid!".format(config.iters, config.T_inner))

    check_alpha(config.alpha)

    if config.kappa is not None:
        try:
            assert np.all(np.asarray(config.kappa) >= 0.0)
        except AssertionError:
            raise ValueError("Edge-preserving weights kappa must be nonnegative!")


def phi(t, delta):
    """Hyperbola potential delta^2 (sqrt(1 + (t / delta)^2) - 1)."""
    return delta ** 2 * (np.sqrt(1.0 + (t / delta) ** 2) - 1.0)


def phi_prime(t, delta):
    return t / np.sqrt(1.0 + (t / delta) ** 2)


def _pairs(shape, offset):
    """Slices (first, second) selecting every pixel pair at the given offset."""
    dy, dx = offset
    h, w = shape
    first = (slice(0, h - dy), slice(max(0, -dx), w - max(0, dx)))
    second = (slice(dy, h), slice(max(0, dx), w - max(0, -dx)))
    return first, second


def _pair_weights(kappa, offset, weight):
    first, second = _pairs(kappa.shape, offset)
    return weight * kappa[first] * kappa[second]


def ep_penalty(x, kappa, delta):
    """
    R(x) = sum_j sum_{k in N_j} kappa_j kappa_k c_jk phi(x_j - x_k) over ordered pairs.

    Parameters
    ----------
    x, kappa: np.array
        (height, width) image and weights
    delta: float
    """

    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for offset, weight in NEIGHBORS:
        first, second = _pairs(x.shape, offset)
        c = _pair_weights(kappa, offset, weight)
        total += 2.0 * np.sum(c * phi(x[first] - x[second], delta))
    return total


def ep_gradient(x, kappa, delta):
    """Gradient of ep_penalty, same shape as x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for offset, weight in NEIGHBORS:
        first, second = _pairs(x.shape, offset)
        flux = 2.0 * _pair_weights(kappa, offset, weight) * phi_prime(x[first] - x[second], delta)
        grad[first] += flux
        grad[second] -= flux
    return grad


def ep_curvature(kappa):
    """
    Diagonal majorizer of the penalty Hessian.

    phi'' <= 1, so every pair adds 4 kappa_j kappa_k c_jk to both of its pixels.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    curv = np.zeros_like(kappa)
    for offset, weight in NEIGHBORS:
        first, second = _pairs(kappa.shape, offset)
        c = 4.0 * _pair_weights(kappa, offset, weight)
        curv[first] += c
        curv[second] += c
    return curv


def compute_kappa(A, weights):
    """kappa_j = sqrt([A^T W 1]_j / [A^T 1]_j), zero where no ray crosses pixel j."""
    num = A.adjoint(np.ravel(weights))
    den = A.adjoint(np.ones(A.n_rays))
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12 * max(den.max(), 1e-300))
    return np.sqrt(np.maximum(ratio, 0.0)).reshape(A.image_shape)


def ep_objective(x, meas, A, config, kappa):
    data = data_term(A, meas, x)
    reg = config.beta * ep_penalty(np.reshape(x, A.image_shape), kappa, config.delta)
    return data, reg, data + reg


def pwls_ep_reconstruct(meas, A, config, x_init, iters=None):
    """
    Minimize 1/2 ||y - A x||_W^2 + beta R(x) over x >= 0.

    Parameters
    ----------
    meas: Measurement
    A: SystemMatrix
    config: EpConfig
    x_init: ImageGrid
        Initial image (typically FBP)
    iters: int, optional
        Overrides config.iters

    Returns
    -------
    ReconResult
    """

    iters = config.iters if iters is None else iters
    try:
        assert iters >= 0
    except AssertionError:
        raise ValueError("Number of iterations {} is invalid!".format(iters))

    kappa = compute_kappa(A, meas.weights) if config.kappa is None else np.asarray(config.kappa)
    try:
        assert kappa.shape == tuple(A.image_shape)
    except AssertionError:
        raise ValueError("Weights of shape {} do not match image {}".format(kappa.shape, A.image_shape))

    x0 = x_init.values.ravel() if isinstance(x_init, ImageGrid) else np.ravel(x_init)
    pixel_size = x_init.pixel_size if isinstance(x_init, ImageGrid) else A.pixel_size

    state = SolverState(
        x=np.array(x0, dtype=np.float64),
        Z=list(),
        D_A=majorizer_DA(A, meas.weights),
        D_S2=config.beta * ep_curvature(kappa).ravel(),
    )

    def reg_grad(x):
        return config.beta * ep_gradient(x.reshape(A.image_shape), kappa, config.delta).ravel()

    trace = [TraceEntry(0, *ep_objective(state.x, meas, A, config, kappa))]
    for it in range(1, iters + 1):
        context = "edge-preserving iteration {}, ".format(it)
        lalm_update(state, A, meas, state.D_S2, reg_grad, config.T_inner, config.alpha, context)
        trace.append(TraceEntry(it, *ep_objective(state.x, meas, A, config, kappa)))

    if iters:
        _logger.info(
            "Edge-preserving PWLS: %d iterations, objective %.6e -> %.6e",
            iters,
            trace[0].total,
            trace[-1].total,
        )

    image = ImageGrid(state.x.reshape(A.image_shape), pixel_size)
    return ReconResult(image, trace, [], list(state.rho_trace), [])
