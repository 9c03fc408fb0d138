import logging

import numpy as np
import pytest
import scipy.fft
import scipy.linalg
from scipy.stats import ortho_group

from mars.utils.patches import PatchGeometry
from mars.utils.transform import (
    CodeResidualState,
    TrainConfig,
    TransformStack,
    backprop_matrix,
    dct2_matrix,
    hard_threshold,
    init_state,
    initial_stack,
    layer_sparsity,
    recompute_residuals,
    sparse_code_layer,
    sparse_code_sweep,
    sparse_code_target,
    train_mars,
    training_objective,
    training_patches,
    transform_update_layer,
    unitarity_error,
)


def random_model(rng, p, L, eta=1.0):
    omega = [ortho_group.rvs(p, random_state=rng) if p > 1 else np.eye(1) for _ in range(L)]
    return TransformStack(omega, [eta] * L)


def random_state(rng, model, N, density=0.4):
    R1 = rng.normal(scale=2.0, size=(model.p, N))
    Z = [rng.normal(size=(model.p, N)) * (rng.random((model.p, N)) < density) for _ in range(model.L)]
    return init_state(model, R1, Z)


def objective_with(model, state, l, Zl, thresholds=None):
    Z = [z.copy() for z in state.Z]
    Z[l - 1] = Zl
    return training_objective(model, init_state(model, state.R[0], Z), thresholds)


def test_hard_threshold_examples():
    np.testing.assert_array_equal(hard_threshold(np.array([1.5, -2.0, 3.0]), 2.0), [0.0, -2.0, 3.0])
    M = np.array([[0.3, -7.0], [1e-9, 0.0]])
    np.testing.assert_array_equal(hard_threshold(M, 0.0), M)
    np.testing.assert_array_equal(hard_threshold(np.array([-0.1, 0.1]), 0.5), [0.0, 0.0])


def test_hard_threshold_idempotent(rng):
    M = rng.normal(size=(5, 7))
    once = hard_threshold(M, 0.8)
    np.testing.assert_array_equal(hard_threshold(once, 0.8), once)
    with pytest.raises(ValueError):
        hard_threshold(M, -1.0)


def test_dct2_matrix_examples():
    np.testing.assert_allclose(dct2_matrix(1, 1), [[1.0]])
    s = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(dct2_matrix(2, 1), [[s, s], [s, -s]], atol=1e-15)
    assert unitarity_error(dct2_matrix(8, 8)) <= 1e-12


def test_dct2_matrix_row_major_convention():
    D = dct2_matrix(2, 3)
    patch = np.arange(6.0).reshape(2, 3)
    expected = scipy.fft.dctn(patch, type=2, norm="ortho").ravel()
    np.testing.assert_allclose(D @ patch.ravel(), expected, atol=1e-12)


def test_initial_stack():
    model = initial_stack(4, 4, [1.0, 2.0, 3.0])
    assert model.L == 3 and model.p == 16
    np.testing.assert_allclose(model.omega[0], dct2_matrix(4, 4))
    np.testing.assert_array_equal(model.omega[1], np.eye(16))


def test_stack_validation():
    with pytest.raises(ValueError):
        TransformStack([np.eye(2)], [1.0, 2.0])
    with pytest.raises(ValueError):
        TransformStack([np.eye(2), np.eye(3)], [1.0, 2.0])
    with pytest.raises(ValueError):
        TransformStack([np.eye(2)], [-1.0])
    with pytest.raises(ValueError):
        TrainConfig(eta=[1.0], T=-1)


def test_backprop_matrix_examples(rng):
    model = random_model(rng, 4, 3)
    state = random_state(rng, model, 6)

    np.testing.assert_allclose(backprop_matrix(1, 2, model, state), model.omega[1].T @ state.Z[1])

    expected = model.omega[0].T @ state.Z[0] + model.omega[0].T @ model.omega[1].T @ state.Z[1]
    np.testing.assert_allclose(backprop_matrix(0, 2, model, state), expected, atol=1e-12)

    eye = TransformStack([np.eye(4)] * 3, [1.0] * 3)
    np.testing.assert_allclose(backprop_matrix(0, 3, eye, state), sum(state.Z), atol=1e-12)

    zero = CodeResidualState([np.zeros((4, 6))] * 3, state.R)
    np.testing.assert_array_equal(backprop_matrix(0, 3, model, zero), np.zeros((4, 6)))

    with pytest.raises(ValueError):
        backprop_matrix(2, 2, model, state)


def test_sparse_code_single_layer(rng):
    model = random_model(rng, 4, 1, eta=0.7)
    state = init_state(model, rng.normal(size=(4, 10)))
    np.testing.assert_array_equal(
        sparse_code_layer(1, model, state, 0.7), hard_threshold(model.omega[0] @ state.R[0], 0.7)
    )

    zero = init_state(model, np.zeros((4, 10)))
    np.testing.assert_array_equal(sparse_code_layer(1, model, zero, 0.7), np.zeros((4, 10)))

    with pytest.raises(ValueError):
        sparse_code_layer(2, model, state, 0.7)


def test_sparse_code_matches_rewritten_objective(rng):
    """The layer objective equals m ||Z - target||^2 + tau^2 nnz(Z) up to a constant."""
    model = random_model(rng, 4, 3, eta=0.9)
    state = random_state(rng, model, 12)
    for l in (1, 2, 3):
        m = model.L - l + 1
        a = sparse_code_target(l, model, state)
        Z1, Z2 = (rng.normal(size=a.shape) * (rng.random(a.shape) < 0.5) for _ in range(2))

        direct = objective_with(model, state, l, Z1) - objective_with(model, state, l, Z2)
        rewritten = (
            m * np.sum((Z1 - a) ** 2)
            + model.eta[l - 1] ** 2 * np.count_nonzero(Z1)
            - m * np.sum((Z2 - a) ** 2)
            - model.eta[l - 1] ** 2 * np.count_nonzero(Z2)
        )
        assert abs(direct - rewritten) <= 1e-8 * max(1.0, abs(direct))


def _entrywise_best(model, state, l, Z, i, j, thresholds):
    """Brute force over one entry: zero, or the vertex of the quadratic part."""

    def f(t):
        trial = Z.copy()
        trial[i, j] = t
        return objective_with(model, state, l, trial, thresholds)

    f1, f2, f3 = f(1.0), f(2.0), f(3.0)
    curvature = f1 - 2.0 * f2 + f3
    vertex = 2.0 - 0.5 * (f3 - f1) / curvature
    candidates = [f(0.0)]
    if vertex != 0.0:
        candidates.append(f(vertex))
    return min(candidates)


def test_sparse_code_brute_force_oracle(rng):
    for _ in range(100):
        p, N, L = int(rng.choice([2, 4])), int(rng.integers(2, 6)), int(rng.integers(1, 4))
        model = random_model(rng, p, L, eta=float(rng.uniform(0.2, 2.0)))
        state = random_state(rng, model, N)
        l = int(rng.integers(1, L + 1))

        Z = sparse_code_layer(l, model, state, model.eta[l - 1])
        achieved = objective_with(model, state, l, Z)
        for i in range(p):
            for j in range(N):
                best = _entrywise_best(model, state, l, Z, i, j, None)
                assert achieved <= best + 1e-9 * max(1.0, abs(best))


def test_top_layer_residual_bound(rng):
    model = random_model(rng, 4, 2, eta=0.6)
    state = random_state(rng, model, 40)
    sparse_code_sweep(model, state, model.eta)
    top = model.omega[-1] @ state.R[-1] - state.Z[-1]
    assert np.max(np.abs(top)) < model.eta[-1]


def _transform_state(G):
    p = G.shape[0]
    model = TransformStack([np.eye(p)], [0.0])
    return model, CodeResidualState(Z=[G.T.copy()], R=[np.eye(p)])


def test_transform_update_examples():
    model, state = _transform_state(np.eye(3))
    np.testing.assert_allclose(transform_update_layer(1, model, state), np.eye(3))

    model, state = _transform_state(np.diag([2.0, 1.0]))
    model.omega[0] = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(np.abs(transform_update_layer(1, model, state)), np.eye(2), atol=1e-12)
    omega = transform_update_layer(1, model, state)
    assert np.trace(omega @ np.diag([2.0, 1.0])) == pytest.approx(3.0)


def test_transform_update_zero_G_keeps_previous(rng):
    previous = ortho_group.rvs(4, random_state=rng)
    model = TransformStack([previous], [0.0])
    state = CodeResidualState(Z=[np.zeros((4, 5))], R=[rng.normal(size=(4, 5))])
    np.testing.assert_array_equal(transform_update_layer(1, model, state), previous)


def test_transform_update_optimality_and_polar(rng):
    n_q = 10000
    X = rng.normal(size=(n_q, 4, 4))
    Q, Rq = np.linalg.qr(X)
    Q = Q * np.sign(np.diagonal(Rq, axis1=1, axis2=2))[:, np.newaxis, :]

    for _ in range(50):
        G = rng.normal(size=(4, 4))
        model, state = _transform_state(G)
        omega = transform_update_layer(1, model, state)

        assert unitarity_error(omega) <= 1e-10
        best = np.trace(omega @ G)
        trials = np.einsum("kij,ji->k", Q, G)
        assert np.all(best >= trials - 1e-12)

        polar, _ = scipy.linalg.polar(G)
        np.testing.assert_allclose(omega.T, polar, atol=1e-8)


def test_training_objective_examples(rng):
    model = random_model(rng, 4, 3)
    R1 = rng.normal(size=(4, 9))
    state = init_state(model, R1)
    assert training_objective(model, state) == pytest.approx(3.0 * np.sum(R1 ** 2))

    assert training_objective(model, init_state(model, np.zeros((4, 9)))) == 0.0

    one = TransformStack([np.eye(1)], [1.0])
    assert training_objective(one, init_state(one, [[3.0]], [[[3.0]]])) == pytest.approx(1.0)


def test_recompute_residuals_recursion(rng):
    model = random_model(rng, 4, 3)
    state = random_state(rng, model, 7)
    np.testing.assert_allclose(state.R[1], model.omega[0] @ state.R[0] - state.Z[0])
    np.testing.assert_allclose(state.R[2], model.omega[1] @ state.R[1] - state.Z[1])

    state.Z[0] = np.zeros_like(state.Z[0])
    recompute_residuals(model, state, 2)
    np.testing.assert_allclose(state.R[1], model.omega[0] @ state.R[0])


def test_layer_sparsity():
    state = CodeResidualState(Z=[np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones((2, 2))], R=[np.zeros((2, 2))] * 2)
    assert layer_sparsity(state) == [0.25, 1.0]


def test_train_zero_iterations_returns_initialization(rng):
    model = train_mars(rng.normal(size=(4, 30)), TrainConfig(eta=[1.0, 1.0], T=0, patch_h=2, patch_w=2))
    np.testing.assert_allclose(model.omega[0], dct2_matrix(2, 2))
    np.testing.assert_array_equal(model.omega[1], np.eye(4))


def test_train_zero_threshold_single_layer(rng):
    R1 = rng.normal(size=(4, 30))
    model, state = train_mars(R1, TrainConfig(eta=[0.0], T=1, patch_h=2, patch_w=2), return_state=True)
    assert training_objective(model, state) == pytest.approx(0.0, abs=1e-20)


def test_train_huge_threshold_keeps_model(rng):
    R1 = rng.normal(size=(4, 30))
    eta = 10.0 * np.abs(R1).max() * np.sqrt(2.0)
    model, state = train_mars(R1, TrainConfig(eta=[eta, eta], T=3, patch_h=2, patch_w=2), return_state=True)
    assert all(np.count_nonzero(z) == 0 for z in state.Z)
    np.testing.assert_array_equal(model.omega[0], dct2_matrix(2, 2))
    assert training_objective(model, state) == pytest.approx(2.0 * np.sum(R1 ** 2))


@pytest.mark.slow
def test_train_monotone_and_unitary(rng):
    R1 = rng.normal(scale=10.0, size=(64, 2000))
    config = TrainConfig(eta=[15.0, 12.0, 10.0], T=100, patch_h=8, patch_w=8, log_every=25)
    start = initial_stack(8, 8, config.eta)
    objectives = [training_objective(start, init_state(start, R1))]
    worst = [0.0]

    def callback(t, l, block, model, state):
        objectives.append(training_objective(model, state))
        if block == "omega":
            worst[0] = max(worst[0], unitarity_error(model.omega[l - 1]))

    model, state = train_mars(R1, config, callback=callback, return_state=True)

    assert len(objectives) == 1 + 100 * 3 * 2
    for before, after in zip(objectives[:-1], objectives[1:]):
        assert after <= before * (1.0 + 1e-9)
    assert objectives[-1] < objectives[0]
    assert worst[0] <= 1e-10

    fresh = init_state(model, R1, state.Z)
    for a, b in zip(fresh.R, state.R):
        np.testing.assert_allclose(a, b, atol=1e-12 * np.abs(R1).max())


def test_train_warns_on_few_patches(rng, caplog):
    with caplog.at_level(logging.WARNING, logger="mars.utils.transform"):
        train_mars(rng.normal(size=(16, 8)), TrainConfig(eta=[1.0], T=1, patch_h=4, patch_w=4))
    assert "training patches" in caplog.text


def test_train_errors(rng):
    config = TrainConfig(eta=[1.0], T=1, patch_h=2, patch_w=2)
    with pytest.raises(FloatingPointError):
        train_mars(np.full((4, 10), np.inf), config)
    with pytest.raises(ValueError):
        train_mars(rng.normal(size=(9, 10)), config)


def test_train_warm_start(rng):
    R1 = rng.normal(size=(4, 40))
    config = TrainConfig(eta=[0.5, 0.5], T=5, patch_h=2, patch_w=2)
    first = train_mars(R1, config)
    again = train_mars(R1, TrainConfig(eta=[0.5, 0.5], T=0, patch_h=2, patch_w=2), model=first)
    for a, b in zip(first.omega, again.omega):
        np.testing.assert_array_equal(a, b)


def test_training_patches_subsampling(rng):
    images = [rng.normal(size=(10, 10)) for _ in range(3)]
    geom = PatchGeometry(10, 10, 4, 4)
    full = training_patches(images, geom)
    assert full.shape == (16, 3 * 49)

    sub1 = training_patches(images, geom, max_patches=20, seed=5)
    sub2 = training_patches(images, geom, max_patches=20, seed=5)
    assert sub1.shape == (16, 20)
    np.testing.assert_array_equal(sub1, sub2)
