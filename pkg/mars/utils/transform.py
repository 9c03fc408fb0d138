"""
transform.py

The multi-layer residual sparsifying transform model and its exact block
coordinate descent learning algorithm.

Layers are numbered 1..L in every public function, matching the model
equations; the python lists holding them are 0-based.
"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.fft
import scipy.linalg

from mars.utils.patches import extract_patches

_logger = logging.getLogger(__name__)

UNITARY_TOL = 1e-10


@dataclass
class TransformStack:
    """
    Learned model: L unitary p x p transforms and their thresholds.

    Parameters
    ----------
    omega: list of np.array
        Transforms, omega[l - 1] is the transform of layer l
    eta: list of floats
        Nonnegative per-layer thresholds used in training
    """

    omega: list
    eta: list

    def __post_init__(self):
        self.omega = [np.array(o, dtype=np.float64) for o in self.omega]
        self.eta = [float(e) for e in self.eta]
        check_transform_stack(self)

    @property
    def L(self):
        return len(self.omega)

    @property
    def p(self):
        return self.omega[0].shape[0]

    def copy(self):
        return TransformStack([o.copy() for o in self.omega], list(self.eta))


@dataclass
class CodeResidualState:
    """
    Sparse coefficient maps Z_l and residual maps R_l of one run.

    R[0] holds the data matrix; R[l] = omega[l-1] R[l-1] - Z[l-1] above it.
    """

    Z: list
    R: list

    @property
    def N(self):
        return self.R[0].shape[1]

    @property
    def L(self):
        return len(self.R)


@dataclass
class TrainConfig:
    """
    Parameters
    ----------
    eta: list of floats
        Per-layer thresholds, same units as the data (modified HU)
    T: int
        Number of outer block coordinate descent iterations
    patch_h, patch_w: int
        Patch size the data matrix was extracted with
    seed: int
        Seed for training patch subsampling
    log_every: int
        Log the objective every this many iterations
    max_patches: int
        Subsample the training data to this many patches (0 keeps all)
    """

    eta: list
    T: int = 100
    patch_h: int = 8
    patch_w: int = 8
    seed: int = 0
    log_every: int = 10
    max_patches: int = 0

    def __post_init__(self):
        check_train_config(self)

    @property
    def L(self):
        return len(self.eta)

    @property
    def p(self):
        return self.patch_h * self.patch_w


def check_transform_stack(model):
    try:
        assert len(model.omega) >= 1
        assert len(model.omega) == len(model.eta)
    except AssertionError:
        raise ValueError(
            "Model needs one threshold per transform, got {} transforms and {} thresholds".format(
                len(model.omega), len(model.eta)
            )
        )

    p = model.omega[0].shape[0]
    for l, o in enumerate(model.omega, start=1):
        try:
            assert o.shape == (p, p)
        except AssertionError:
            raise ValueError("Transform {} has shape {}, expected {}".format(l, o.shape, (p, p)))

    for l, e in enumerate(model.eta, start=1):
        try:
            assert e >= 0.0
        except AssertionError:
            raise ValueError("Threshold {} of layer {} is invalid!".format(e, l))


def check_train_config(config):
    try:
        assert len(config.eta) >= 1
        for e in config.eta:
            assert e >= 0.0
    except AssertionError:
        raise ValueError("Training thresholds {} are invalid!".format(config.eta))

    try:
        assert config.T >= 0
    except AssertionError:
        raise ValueError("Number of training iterations {} is invalid!".format(config.T))

    try:
        assert config.patch_h >= 1 and config.patch_w >= 1
    except AssertionError:
        raise ValueError("Patch size {}x{} is invalid!".format(config.patch_h, config.patch_w))

    try:
        assert config.log_every >= 1
    except AssertionError:
        raise ValueError("Logging interval {} is invalid!".format(config.log_every))


def check_layer(l, L):
    try:
        assert 1 <= l <= L
    except AssertionError:
        raise ValueError("Layer {} is out of range [1, {}]".format(l, L))


def unitarity_error(omega):
    """Frobenius norm of omega^T omega - I."""
    omega = np.asarray(omega)
    return np.linalg.norm(omega.T @ omega - np.eye(omega.shape[0]))


def hard_threshold(M, tau):
    """
    Zero every entry of M whose magnitude is strictly below tau.

    Parameters
    ----------
    M: np.array
        Input values
    tau: float
        Nonnegative threshold, entries with |M| == tau are kept

    Returns
    -------
    np.array of the same shape as M
    """

    try:
        assert tau >= 0.0
    except AssertionError:
        raise ValueError("Threshold {} is invalid!".format(tau))

    M = np.asarray(M, dtype=np.float64)
    return np.where(np.abs(M) < tau, 0.0, M)


def dct2_matrix(patch_h, patch_w):
    """
    Orthonormal 2D DCT-II operator acting on row-major vectorized patches.

    Returns
    -------
    np.array
        (patch_h * patch_w) square unitary matrix, kron(D_h, D_w)
    """

    try:
        assert patch_h >= 1 and patch_w >= 1
    except AssertionError:
        raise ValueError("Patch size {}x{} is invalid!".format(patch_h, patch_w))

    d_h = scipy.fft.dct(np.eye(patch_h), type=2, norm="ortho", axis=0)
    d_w = scipy.fft.dct(np.eye(patch_w), type=2, norm="ortho", axis=0)
    return np.kron(d_h, d_w)


def initial_stack(patch_h, patch_w, eta):
    """2D DCT in the first layer, identities in the deeper layers."""
    p = patch_h * patch_w
    omega = [dct2_matrix(patch_h, patch_w)] + [np.eye(p) for _ in range(len(eta) - 1)]
    return TransformStack(omega, eta)


def init_state(model, R1, Z=None):
    """
    Build the code/residual state for data R1, with all-zero codes unless
    Z is given, and residuals consistent with them.
    """

    R1 = np.asarray(R1, dtype=np.float64)
    try:
        assert R1.ndim == 2 and R1.shape[0] == model.p
    except AssertionError:
        raise ValueError(
            "Data matrix shape {} does not match transform size {}".format(R1.shape, model.p)
        )

    if Z is None:
        Z = [np.zeros_like(R1) for _ in range(model.L)]
    else:
        Z = [np.array(z, dtype=np.float64) for z in Z]

    state = CodeResidualState(Z=Z, R=[R1] + [None] * (model.L - 1))
    return recompute_residuals(model, state)


def recompute_residuals(model, state, start=2):
    """Rebuild R_start..R_L from R_1 and the current codes, in place."""
    for l in range(max(start, 2), model.L + 1):
        state.R[l - 1] = model.omega[l - 2] @ state.R[l - 2] - state.Z[l - 2]
    return state


def backprop_matrix(p_idx, q_idx, model, state):
    """
    Backpropagation matrix B_p^q = sum_{k=p+1}^{q} (prod_{s=p+1}^{k} omega_s^T) Z_k.

    Parameters
    ----------
    p_idx, q_idx: int
        Layer indices with 0 <= p_idx < q_idx <= L
    model: TransformStack
    state: CodeResidualState

    Returns
    -------
    np.array
        (p, N) matrix
    """

    try:
        assert 0 <= p_idx < q_idx <= model.L
    except AssertionError:
        raise ValueError(
            "Backpropagation indices ({}, {}) are invalid for {} layers".format(
                p_idx, q_idx, model.L
            )
        )

    acc = np.zeros_like(state.Z[0])
    for k in range(q_idx, p_idx, -1):
        acc = model.omega[k - 1].T @ (state.Z[k - 1] + acc)
    return acc


def backprop_sum(l, model, Z):
    """
    sum_{i=l+1}^{L} B_l^i, accumulated in one pass: layer k enters with
    weight (L - k + 1), the number of i >= k.
    """

    L = model.L
    acc = np.zeros_like(Z[0])
    for k in range(L, l, -1):
        acc = model.omega[k - 1].T @ ((L - k + 1) * Z[k - 1] + acc)
    return acc


def sparse_code_target(l, model, state):
    """Argument of the hard threshold in the layer-l sparse coding step."""
    m = model.L - l + 1
    target = model.omega[l - 1] @ state.R[l - 1]
    if l < model.L:
        target -= backprop_sum(l, model, state.Z) / m
    return target


def sparse_code_layer(l, model, state, tau):
    """
    Exact minimizer over Z_l of sum_{i>=l} ||omega_i R_i - Z_i||_F^2 + tau^2 ||Z_l||_0.

    Parameters
    ----------
    l: int
        Layer, 1 <= l <= L
    model: TransformStack
    state: CodeResidualState
        Residuals must be consistent with the current codes
    tau: float
        Sparsity threshold of the layer (eta_l in training, gamma_l in reconstruction)

    Returns
    -------
    np.array
        (p, N) updated codes of layer l
    """

    check_layer(l, model.L)
    m = model.L - l + 1
    return hard_threshold(sparse_code_target(l, model, state), tau / np.sqrt(m))


def transform_update_layer(l, model, state):
    """
    Exact unitary minimizer over omega_l with every code fixed.

    The optimum is V U^T for G_l = U S V^T. When the current transform already
    attains the maximal trace (G_l = 0 is the extreme case) it is returned
    unchanged, which keeps the update deterministic.

    Returns
    -------
    np.array
        (p, p) unitary matrix
    """

    check_layer(l, model.L)
    m = model.L - l + 1

    target = state.Z[l - 1]
    if l < model.L:
        target = target + backprop_sum(l, model, state.Z) / m
    G = state.R[l - 1] @ target.T

    if not np.all(np.isfinite(G)):
        raise FloatingPointError("Non-finite values in transform update of layer {}".format(l))

    try:
        U, s, Vt = scipy.linalg.svd(G)
    except np.linalg.LinAlgError as e:
        raise FloatingPointError("SVD failed in transform update of layer {}: {}".format(l, e))

    previous = model.omega[l - 1]
    best = s.sum()
    if np.trace(previous @ G) >= best - 1e-12 * max(1.0, best):
        return previous.copy()

    return Vt.T @ U.T


def training_objective(model, state, thresholds=None):
    """
    sum_l ||omega_l R_l - Z_l||_F^2 + tau_l^2 nnz(Z_l), with tau = eta unless
    thresholds are given.
    """
    thresholds = model.eta if thresholds is None else thresholds
    total = 0.0
    for l in range(model.L):
        fit = model.omega[l] @ state.R[l] - state.Z[l]
        total += np.sum(fit ** 2) + thresholds[l] ** 2 * np.count_nonzero(state.Z[l])
    return total


def layer_sparsity(state):
    """Fraction of nonzero coefficients in every Z_l."""
    return [np.count_nonzero(z) / float(z.size) for z in state.Z]


def sparse_code_sweep(model, state, thresholds):
    """Update Z_1..Z_L in order, refreshing the residuals after each layer."""
    for l in range(1, model.L + 1):
        state.Z[l - 1] = sparse_code_layer(l, model, state, thresholds[l - 1])
        recompute_residuals(model, state, l + 1)
    return state


def training_patches(images, geom, max_patches=0, seed=0):
    """
    Stack the patches of several training images into one data matrix.

    Parameters
    ----------
    images: list of ImageGrid or np.array
        Training images, all of the size described by geom
    geom: PatchGeometry
        Patch layout
    max_patches: int
        Keep a random subset of this many columns (0 keeps all)
    seed: int
        Seed of the subsampling generator

    Returns
    -------
    np.array
        (p, N) data matrix R_1
    """

    try:
        assert len(images) >= 1
    except AssertionError:
        raise ValueError("Need at least one training image!")

    R1 = np.concatenate([extract_patches(img, geom) for img in images], axis=1)

    if max_patches and max_patches < R1.shape[1]:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(R1.shape[1], size=max_patches, replace=False))
        R1 = R1[:, keep]

    _logger.info("Extracted %d training patches of size %d", R1.shape[1], R1.shape[0])
    return R1


def train_mars(R1, config, model=None, callback=None, return_state=False):
    """
    Learn a transform stack by exact block coordinate descent.

    Every outer iteration sweeps l = 1..L, updating Z_l then omega_l; the
    residuals above layer l are recomputed after each block update.

    Parameters
    ----------
    R1: np.array
        (p, N) training data, one patch per column, in modified HU
    config: TrainConfig
        Thresholds and iteration count
    model: TransformStack, optional
        Warm start; default is DCT in layer 1 and identities above
    callback: callable, optional
        Called as callback(t, l, block, model, state) after every block update,
        block being "Z" or "omega"
    return_state: bool
        Also return the final CodeResidualState

    Returns
    -------
    model: TransformStack
        Learned transforms with the training thresholds
    state: CodeResidualState
        Only when return_state is True

    Raises
    ------
    FloatingPointError
        If the data contains non-finite values
    """

    R1 = np.asarray(R1, dtype=np.float64)
    if not np.all(np.isfinite(R1)):
        raise FloatingPointError("Training data contains non-finite values!")

    try:
        assert R1.ndim == 2 and R1.shape[0] == config.p
    except AssertionError:
        raise ValueError(
            "Training data shape {} does not match {}x{} patches".format(
                R1.shape, config.patch_h, config.patch_w
            )
        )

    p, N = R1.shape
    if N < p:
        _logger.warning("Only %d training patches for %d-dimensional transforms", N, p)

    if model is None:
        model = initial_stack(config.patch_h, config.patch_w, config.eta)
    else:
        model = TransformStack(model.omega, config.eta)
        try:
            assert model.p == p
        except AssertionError:
            raise ValueError("Warm-start model has p = {}, data has p = {}".format(model.p, p))

    state = init_state(model, R1)

    for t in range(1, config.T + 1):
        for l in range(1, model.L + 1):
            state.Z[l - 1] = sparse_code_layer(l, model, state, model.eta[l - 1])
            recompute_residuals(model, state, l + 1)
            if callback is not None:
                callback(t, l, "Z", model, state)

            model.omega[l - 1] = transform_update_layer(l, model, state)
            recompute_residuals(model, state, l + 1)
            if callback is not None:
                callback(t, l, "omega", model, state)

        if t % config.log_every == 0 or t == config.T:
            _logger.info(
                "Iteration %d/%d objective %.6e sparsity %s",
                t,
                config.T,
                training_objective(model, state),
                ", ".join("{:.4f}".format(s) for s in layer_sparsity(state)),
            )

    if return_state:
        return model, state
    return model
