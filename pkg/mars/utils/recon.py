"""
recon.py

PWLS reconstruction with a learned transform stack as regularizer.

The image update is a relaxed linearized augmented Lagrangian (LALM) loop
with a diagonal majorizer of the data Hessian; the sparse codes are
refreshed in closed form after every image update. The LALM kernel is
shared with the edge-preserving baseline in edge_preserving.py.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from mars.utils.patches import (
    ImageGrid,
    PatchGeometry,
    aggregate_patches,
    extract_patches,
    patch_cover_counts,
)
from mars.utils.transform import (
    backprop_sum,
    check_layer,
    init_state,
    sparse_code_layer,
    sparse_code_sweep,
    training_objective,
)

_logger = logging.getLogger(__name__)


@dataclass
class ReconConfig:
    """
    Parameters
    ----------
    beta: float
        Regularization weight, > 0
    gamma: list of floats
        Per-layer sparsity thresholds in modified HU
    T_outer: int
        Outer iterations (image update + sparse coding sweep)
    T_inner: int
        LALM iterations per image update
    alpha: float
        Relaxation parameter in [1, 2)
    snapshot_every: int
        Keep a copy of the image every this many outer iterations (0 disables)
    patch_h, patch_w, stride: int
        Patch layout of the regularizer
    """

    beta: float
    gamma: list
    T_outer: int = 50
    T_inner: int = 2
    alpha: float = 1.999
    snapshot_every: int = 0
    patch_h: int = 8
    patch_w: int = 8
    stride: int = 1

    def __post_init__(self):
        self.gamma = [float(g) for g in self.gamma]
        check_recon_config(self)

    @property
    def L(self):
        return len(self.gamma)


def check_alpha(alpha):
    try:
        assert 1.0 <= alpha < 2.0
    except AssertionError:
        raise ValueError("Relaxation parameter alpha = {} is invalid!".format(alpha))


def check_recon_config(config):
    try:
        assert config.beta > 0.0
    except AssertionError:
        raise ValueError("Regularization weight beta = {} is invalid!".format(config.beta))

    try:
        assert len(config.gamma) >= 1
        for g in config.gamma:
            assert g >= 0.0
    except AssertionError:
        raise ValueError("Sparsity thresholds {} are invalid!".format(config.gamma))

    try:
        assert config.T_outer >= 0 and config.T_inner >= 1
    except AssertionError:
        raise ValueError(
            "Iteration counts T_outer = {}, T_inner = {} are invalid!".format(
                config.T_outer, config.T_inner
            )
        )

    check_alpha(config.alpha)

    try:
        assert config.snapshot_every >= 0
    except AssertionError:
        raise ValueError("Snapshot interval {} is invalid!".format(config.snapshot_every))


@dataclass
class SolverState:
    """
    Iterates of the reconstruction.

    x is the flat image in modified HU; g, h, zeta and s are the LALM
    auxiliaries of the last image update; rho_trace records the step
    parameter used by every inner iteration.
    """

    x: np.ndarray
    Z: list
    D_A: np.ndarray
    D_S2: np.ndarray
    g: np.ndarray = None
    h: np.ndarray = None
    zeta: np.ndarray = None
    s: np.ndarray = None
    rho: float = 1.0
    rho_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class TraceEntry:
    iter: int
    data_term: float
    reg_term: float
    total: float


@dataclass
class ReconResult:
    """
    Parameters
    ----------
    image: ImageGrid
        Final nonnegative reconstruction
    trace: list of TraceEntry
        Objective at the start and after every outer iteration
    snapshots: list of (int, ImageGrid)
        Immutable copies of the iterates
    rho_trace: list of floats
        Step parameter of every inner iteration
    Z: list of np.array
        Final sparse codes (empty for the edge-preserving baseline)
    """

    image: ImageGrid
    trace: list
    snapshots: list = field(default_factory=list)
    rho_trace: list = field(default_factory=list)
    Z: list = field(default_factory=list)


def rho_schedule(r, alpha=1.999):
    """
    Decreasing LALM parameter: 1 for r = 0, else
    pi / (alpha (r + 1)) sqrt(1 - (pi / (2 alpha (r + 1)))^2).
    """

    try:
        assert r >= 0
    except AssertionError:
        raise ValueError("Iteration index {} is invalid!".format(r))
    check_alpha(alpha)

    if r == 0:
        return 1.0
    a = np.pi / (alpha * (r + 1))
    return a * np.sqrt(1.0 - (a / 2.0) ** 2)


def _flat(x):
    if isinstance(x, ImageGrid):
        return x.values.ravel()
    return np.asarray(x, dtype=np.float64).ravel()


def _check_codes(model, Z, geom):
    try:
        assert model.p == geom.p
        assert len(Z) == model.L
        for z in Z:
            assert np.shape(z) == (geom.p, geom.n_patches)
    except AssertionError:
        raise ValueError(
            "Sparse codes do not match a {}-layer model on {} patches of size {}".format(
                model.L, geom.n_patches, geom.p
            )
        )


def s2_value(x, model, Z, beta, geom):
    """Smooth part of the regularizer, beta sum_l ||P x - B_0^l||_F^2."""
    _check_codes(model, Z, geom)
    state = init_state(model, extract_patches(_flat(x).reshape(geom.image_shape), geom), Z)
    return beta * sum(np.sum((model.omega[l] @ state.R[l] - Z[l]) ** 2) for l in range(model.L))


def grad_S2(x, model, Z, beta, geom):
    """
    Gradient of the smooth part of the regularizer.

    2 beta sum_j (P^j)^T (L P^j x - sum_k (B_0^k)^j), with the sum over k of
    the backpropagation matrices accumulated in one pass.

    Returns
    -------
    np.array
        Flat vector of N_p entries
    """

    _check_codes(model, Z, geom)
    R1 = extract_patches(_flat(x).reshape(geom.image_shape), geom)
    diff = model.L * R1 - backprop_sum(0, model, Z)
    return 2.0 * beta * aggregate_patches(diff, geom).values.ravel()


def hessian_diag_S2(beta, L, geom):
    """Exact (diagonal) Hessian of the regularizer, 2 L beta times the cover counts."""
    try:
        assert beta >= 0.0 and L >= 1
    except AssertionError:
        raise ValueError("Hessian parameters beta = {}, L = {} are invalid!".format(beta, L))
    return 2.0 * L * beta * patch_cover_counts(geom).values.ravel()


def majorizer_DA(A, weights):
    """
    Diagonal majorizer diag(A^T W A 1) of A^T W A, floored at 1e-12 of its
    largest entry so it is strictly positive.
    """

    weights = np.ravel(weights)
    D = A.adjoint(weights * A.forward(np.ones(A.n_pixels)))

    top = D.max() if D.size else 0.0
    if not top > 0.0:
        raise ValueError("System matrix has no weighted support, cannot build a majorizer!")
    return np.maximum(D, 1e-12 * top)


def data_gradient(A, meas, x):
    """A^T W (A x - y)."""
    return A.adjoint(meas.weights * (A.forward(x) - meas.sino))


def data_term(A, meas, x):
    r = meas.sino - A.forward(_flat(x))
    return 0.5 * np.sum(meas.weights * r ** 2)


def lalm_update(state, A, meas, D_reg, reg_grad, T_inner, alpha, context=""):
    """
    T_inner relaxed LALM iterations on 1/2 ||y - A x||_W^2 + reg(x), x >= 0.

    rho starts at 1 and follows rho_schedule after every inner iteration.

    Parameters
    ----------
    state: SolverState
        Updated in place (x, g, h, zeta, s, rho, rho_trace)
    A: SystemMatrix
    meas: Measurement
    D_reg: np.array
        Diagonal Hessian (or majorizer) of the regularizer
    reg_grad: callable
        Maps a flat image to the regularizer gradient
    T_inner: int
    alpha: float
    context: str
        Prefix of error messages

    Raises
    ------
    FloatingPointError
        On any non-finite iterate
    """

    x = state.x
    D_A = state.D_A
    zeta = data_gradient(A, meas, x)
    g = zeta.copy()
    h = D_A * x - zeta
    rho = 1.0

    for r in range(T_inner):
        state.rho_trace.append(rho)
        s = rho * (D_A * x - h) + (1.0 - rho) * g
        x_new = np.maximum(x - (s + reg_grad(x)) / (rho * D_A + D_reg), 0.0)

        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError("Non-finite image at {}inner iteration {}".format(context, r))

        zeta = data_gradient(A, meas, x_new)
        g = rho / (rho + 1.0) * (alpha * zeta + (1.0 - alpha) * g) + g / (rho + 1.0)
        h = alpha * (D_A * x_new - zeta) + (1.0 - alpha) * h
        x = x_new
        rho = rho_schedule(r + 1, alpha)

    state.x, state.g, state.h, state.zeta, state.s, state.rho = x, g, h, zeta, s, rho
    return state


def image_update(state, A, meas, model, config, geom, context=""):
    """Image update block with the sparse codes held fixed."""
    _check_codes(model, state.Z, geom)

    def reg_grad(x):
        return grad_S2(x, model, state.Z, config.beta, geom)

    return lalm_update(state, A, meas, state.D_S2, reg_grad, config.T_inner, config.alpha, context)


def _code_state(model, state, geom):
    R1 = extract_patches(state.x.reshape(geom.image_shape), geom)
    return init_state(model, R1, state.Z)


def recon_sparse_code(l, model, state, gamma_l, geom):
    """
    Closed-form update of Z_l for the current image, with the other codes fixed.

    Returns
    -------
    np.array
        (p, N) codes of layer l
    """

    check_layer(l, model.L)
    return sparse_code_layer(l, model, _code_state(model, state, geom), gamma_l)


def recon_sparse_code_sweep(model, state, gamma, geom):
    """Update Z_1..Z_L in order for the current image."""
    codes = sparse_code_sweep(model, _code_state(model, state, geom), gamma)
    state.Z = codes.Z
    return state


def pwls_objective(x, meas, A, model, Z, config, geom):
    """
    Terms of the reconstruction objective.

    Returns
    -------
    data: float
        1/2 ||y - A x||_W^2
    reg: float
        beta sum_l (||omega_l R_l - Z_l||_F^2 + gamma_l^2 nnz(Z_l))
    total: float
    """

    _check_codes(model, Z, geom)
    data = data_term(A, meas, x)
    codes = init_state(model, extract_patches(_flat(x).reshape(geom.image_shape), geom), Z)
    reg = config.beta * training_objective(model, codes, config.gamma)
    return data, reg, data + reg


def init_solver_state(A, meas, model, config, x_init, geom):
    x = _flat(x_init).copy()
    try:
        assert x.size == A.n_pixels
    except AssertionError:
        raise ValueError("Initial image of {} pixels does not match {}".format(x.size, A.n_pixels))

    Z = [np.zeros((geom.p, geom.n_patches)) for _ in range(model.L)]
    return SolverState(
        x=x,
        Z=Z,
        D_A=majorizer_DA(A, meas.weights),
        D_S2=hessian_diag_S2(config.beta, model.L, geom),
    )


def pwls_mars_reconstruct(meas, A, model, config, x_init, callback=None):
    """
    Reconstruct an image from post-log data with a learned transform stack.

    Parameters
    ----------
    meas: Measurement
        Post-log data and weights
    A: SystemMatrix
    model: TransformStack
        Learned transforms, one threshold per layer in config.gamma
    config: ReconConfig
    x_init: ImageGrid
        Initial image (typically the edge-preserving reconstruction)
    callback: callable, optional
        Called as callback(t, state) after every outer iteration

    Returns
    -------
    ReconResult
    """

    try:
        assert config.L == model.L
    except AssertionError:
        raise ValueError(
            "Config has {} thresholds for a {}-layer model".format(config.L, model.L)
        )

    try:
        assert meas.weights.size == A.n_rays
    except AssertionError:
        raise ValueError("Measurement of {} rays does not match {}".format(meas.weights.size, A.n_rays))

    geom = PatchGeometry(
        A.image_shape[0], A.image_shape[1], config.patch_h, config.patch_w, config.stride, config.stride
    )
    try:
        assert geom.p == model.p
    except AssertionError:
        raise ValueError(
            "Patch size {}x{} does not match transforms of size {}".format(
                config.patch_h, config.patch_w, model.p
            )
        )

    pixel_size = x_init.pixel_size if isinstance(x_init, ImageGrid) else A.pixel_size
    if config.T_outer == 0:
        image = x_init.copy() if isinstance(x_init, ImageGrid) else ImageGrid(
            _flat(x_init).reshape(A.image_shape), pixel_size
        )
        return ReconResult(image, [], [], [], [])

    state = init_solver_state(A, meas, model, config, x_init, geom)
    trace = [TraceEntry(0, *pwls_objective(state.x, meas, A, model, state.Z, config, geom))]
    snapshots = list()

    for t in range(1, config.T_outer + 1):
        context = "outer iteration {}, ".format(t)
        image_update(state, A, meas, model, config, geom, context)
        recon_sparse_code_sweep(model, state, config.gamma, geom)

        entry = TraceEntry(t, *pwls_objective(state.x, meas, A, model, state.Z, config, geom))
        if not np.isfinite(entry.total):
            raise FloatingPointError("Non-finite objective at outer iteration {}".format(t))
        trace.append(entry)
        _logger.info(
            "Outer %d/%d data %.6e reg %.6e total %.6e",
            t,
            config.T_outer,
            entry.data_term,
            entry.reg_term,
            entry.total,
        )

        if config.snapshot_every and t % config.snapshot_every == 0:
            snapshots.append((t, ImageGrid(state.x.reshape(A.image_shape).copy(), pixel_size)))

        if callback is not None:
            callback(t, state)

    image = ImageGrid(state.x.reshape(A.image_shape), pixel_size)
    return ReconResult(image, trace, snapshots, list(state.rho_trace), state.Z)
