import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import fd_grad, random_mlp, rel_err
from fpfm.exceptions import ShapeError, SingularSystemError
from fpfm.nn import (ACTIVATIONS, AdamState, Mlp, adam_step, mlp_forward, mlp_gradients,
                     solve_ridge, solve_ridge_batched)


class TestMlp:
    def test_identity_network_is_affine(self):
        rng = np.random.default_rng(0)
        net = Mlp.init([3, 5, 2], rng, "identity")
        x = rng.normal(size=(7, 3))
        W = net.weights[0] @ net.weights[1]
        b = net.biases[0] @ net.weights[1] + net.biases[1]
        assert_allclose(mlp_forward(net, x), x @ W + b, atol=1e-12)

    def test_single_linear_layer(self):
        net = Mlp([np.array([[2.0], [-1.0]])], [np.array([0.5])], "tanh")
        # output layer is linear even with a tanh activation
        assert_allclose(net.forward(np.array([[1.0, 1.0]])), [[1.5]])

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(1)
        net = random_mlp(rng, 3, 2)
        x = rng.normal(size=(5, 3))
        up = rng.normal(size=(5, 2))
        grads, gin = mlp_gradients(net, x, up)
        loss = lambda: float(np.sum(up * net.forward(x)))  # noqa: E731
        for p, g in zip(net.params, grads):
            assert rel_err(g, fd_grad(loss, p)) < 1e-6
        assert rel_err(gin, fd_grad(loss, x)) < 1e-6

    @pytest.mark.parametrize("act", ["tanh", "relu", "identity"])
    def test_activation_derivative_from_output(self, act):
        f, df = ACTIVATIONS[act]
        z = np.linspace(-2, 2, 41) + 0.013
        h = 1e-6
        assert_allclose(df(f(z)), (f(z + h) - f(z - h)) / (2 * h), atol=1e-6)

    def test_shape_errors(self):
        net = Mlp.init([2, 4, 1], np.random.default_rng(0))
        with pytest.raises(ShapeError):
            net.forward(np.zeros((3, 5)))
        with pytest.raises(ShapeError):
            Mlp([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
        out, cache = net.forward_cached(np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            net.backward(cache, np.zeros((3, 2)))

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            Mlp.init([2, 2], np.random.default_rng(0), "swish")

    def test_copy_is_deep(self):
        net = Mlp.init([2, 3, 1], np.random.default_rng(0))
        cp = net.copy()
        cp.weights[0][0, 0] += 1.0
        assert net.weights[0][0, 0] != cp.weights[0][0, 0]

    def test_params_are_views(self):
        net = Mlp.init([2, 3, 1], np.random.default_rng(0))
        net.params[0][0, 0] = 42.0
        assert net.weights[0][0, 0] == 42.0


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update lr * sign(g)
        p = [np.array([1.0, -2.0, 3.0])]
        adam_step(p, [np.array([0.5, -4.0, 1e3])], AdamState(lr=0.1))
        assert_allclose(p[0], [0.9, -1.9, 2.9], atol=1e-6)

    def test_zero_lr_is_identity(self):
        p = [np.array([1.0, 2.0])]
        adam_step(p, [np.array([3.0, 4.0])], AdamState(lr=0.0))
        assert_array_equal(p[0], [1.0, 2.0])

    def test_minimises_quadratic(self):
        p = [np.array([5.0, -3.0])]
        st_ = AdamState(lr=0.05)
        for _ in range(2000):
            adam_step(p, [2 * p[0]], st_)
        assert np.max(np.abs(p[0])) < 1e-2

    def test_mismatched_grads(self):
        with pytest.raises(ShapeError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


class TestSolveRidge:
    def test_matches_direct_solve(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(6, 6))
        G = A @ A.T
        b = rng.normal(size=6)
        assert_allclose(solve_ridge(G, b, 0.1), np.linalg.solve(G + 0.1 * np.eye(6), b),
                        rtol=1e-10)

    def test_indefinite_falls_back_to_lu(self):
        G = np.diag([1.0, -2.0, 3.0])
        assert_allclose(solve_ridge(G, np.ones(3)), [1.0, -0.5, 1 / 3])

    def test_singular_without_ridge_raises_with_hint(self):
        G = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularSystemError, match="lam > 0"):
            solve_ridge(G, np.ones(2), 0.0)

    def test_singular_with_ridge_solves(self):
        G = np.zeros((3, 3))
        assert_allclose(solve_ridge(G, np.zeros(3), 1e-6), np.zeros(3))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            solve_ridge(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))

    def test_negative_ridge_rejected(self):
        with pytest.raises(ValueError):
            solve_ridge(np.eye(2), np.ones(2), -1.0)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(5, 4, 4))
        G = A @ A.transpose(0, 2, 1)
        b = rng.normal(size=(5, 4))
        c = solve_ridge_batched(G, b, 1e-3)
        for i in range(5):
            assert_allclose(c[i], solve_ridge(G[i], b[i], 1e-3), rtol=1e-9)

    def test_batched_shape_check(self):
        with pytest.raises(ShapeError):
            solve_ridge_batched(np.zeros((2, 3, 3)), np.zeros((2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.floats(1e-6, 1.0), st.integers(0, 2**31))
    def test_residual_property(self, k, lam, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(k, k))
        G = A @ A.T
        b = rng.normal(size=k)
        c = solve_ridge(G, b, lam)
        assert_allclose((G + lam * np.eye(k)) @ c, b, atol=1e-7 * (1 + np.abs(b).max())
                        * (1 + np.linalg.cond(G + lam * np.eye(k)) * 1e-8))
