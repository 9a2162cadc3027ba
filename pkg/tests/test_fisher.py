import numpy as np
import pytest

from codednn.fisher import (DiagonalFisher, empirical_output_divergence,
                            estimate_diag_fisher, full_empirical_fisher,
                            kl_quadratic)
from codednn.net import (NetworkSpec, ParamVec, ProbeSet, flatten, jacobian,
                         param_count)
from helpers import random_params


class TestDiagFisher:
    def test_linear_layer_analytic(self):
        # f(x) = Wx + b; df_k/dW[k,j] = x_j so the Fisher entry for every
        # W[k, 0] is (1^2 + 0^2)/2 and for every W[k, 1] is (0^2 + 2^2)/2.
        spec = NetworkSpec((2, 3))
        params = random_params(spec, np.random.default_rng(0))
        probe = ProbeSet(np.array([[1.0, 0.0], [0.0, 2.0]]))
        fisher = estimate_diag_fisher(spec, params, probe)
        w_entries = fisher.values[:6].reshape(3, 2)
        assert np.allclose(w_entries[:, 0], 0.5, rtol=0, atol=1e-15)
        assert np.allclose(w_entries[:, 1], 2.0, rtol=0, atol=1e-15)
        assert np.allclose(fisher.values[6:], 1.0, rtol=0, atol=1e-15)

    def test_duplicated_sample_equals_single(self):
        spec = NetworkSpec((3, 5, 2), "tanh")
        params = random_params(spec, np.random.default_rng(1))
        x = np.array([[0.3, -1.0, 0.5]])
        single = estimate_diag_fisher(spec, params, ProbeSet(x))
        repeated = estimate_diag_fisher(spec, params, ProbeSet(np.repeat(x, 7, axis=0)))
        assert np.allclose(single.values, repeated.values, rtol=1e-14, atol=0)

    def test_matches_full_fisher_diagonal(self):
        spec = NetworkSpec((4, 8, 3), "tanh")
        assert param_count(spec) <= 100
        rng = np.random.default_rng(2)
        params = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((10, 4)))
        diag = estimate_diag_fisher(spec, params, probe)
        full = full_empirical_fisher(spec, params, probe)
        assert np.max(np.abs(diag.values - np.diag(full))) < 1e-12

    def test_probe_permutation_invariant(self):
        spec = NetworkSpec((3, 6, 2), "tanh")
        rng = np.random.default_rng(3)
        params = random_params(spec, rng)
        X = rng.standard_normal((20, 3))
        a = estimate_diag_fisher(spec, params, ProbeSet(X))
        b = estimate_diag_fisher(spec, params, ProbeSet(X[::-1]))
        assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-15)

    def test_relu_dead_path_exactly_zero(self):
        # Hidden neuron never activates on the probe, so every parameter
        # upstream of the output bias has exactly zero Fisher.
        spec = NetworkSpec((1, 1, 1), "relu")
        params = ParamVec(spec, np.array([1.0, 0.0, 2.0, 0.5]))
        probe = ProbeSet(np.array([[-1.0], [-2.0], [-0.5]]))
        fisher = estimate_diag_fisher(spec, params, probe)
        assert fisher.values[0] == 0.0  # w1
        assert fisher.values[1] == 0.0  # b1
        assert fisher.values[2] == 0.0  # w2 (its input is always 0)
        assert fisher.values[3] == 1.0  # output bias

    def test_nonnegative(self):
        spec = NetworkSpec((4, 9, 3), "relu")
        rng = np.random.default_rng(4)
        params = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((15, 4)))
        assert np.all(estimate_diag_fisher(spec, params, probe).values >= 0.0)

    def test_rejects_negative_values(self):
        spec = NetworkSpec((1, 1))
        with pytest.raises(ValueError):
            DiagonalFisher(spec, np.array([-1.0, 0.0]), 1)


class TestFullFisher:
    def test_rank_one_for_single_sample_single_output(self):
        spec = NetworkSpec((3, 4, 1), "tanh")
        rng = np.random.default_rng(5)
        params = random_params(spec, rng)
        x = rng.standard_normal(3)
        g = jacobian(spec, params, x)[0]
        full = full_empirical_fisher(spec, params, ProbeSet(x[None, :]))
        assert np.allclose(full, np.outer(g, g), rtol=1e-12, atol=1e-15)

    def test_linear_layer_block_structure(self):
        # Per output row k the W-block is the averaged x x^T; entries that
        # couple different output rows are exactly zero.
        spec = NetworkSpec((2, 2))
        params = random_params(spec, np.random.default_rng(6))
        X = np.array([[1.0, 0.0], [0.0, 2.0]])  # orthogonal probe inputs
        full = full_empirical_fisher(spec, params, ProbeSet(X))
        xxt = (np.outer(X[0], X[0]) + np.outer(X[1], X[1])) / 2.0
        # layout: W[0,:] W[1,:] b
        assert np.allclose(full[0:2, 0:2], xxt, atol=1e-15)
        assert np.allclose(full[2:4, 2:4], xxt, atol=1e-15)
        assert np.all(full[0:2, 2:4] == 0.0)
        assert np.all(full[2:4, 0:2] == 0.0)

    def test_trace_equals_diag_sum(self):
        spec = NetworkSpec((3, 7, 2), "tanh")
        rng = np.random.default_rng(7)
        params = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((9, 3)))
        full = full_empirical_fisher(spec, params, probe)
        diag = estimate_diag_fisher(spec, params, probe)
        assert np.isclose(np.trace(full), diag.values.sum(), rtol=1e-12)

    def test_psd(self):
        spec = NetworkSpec((4, 10, 3), "tanh")
        rng = np.random.default_rng(8)
        params = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((6, 4)))
        full = full_empirical_fisher(spec, params, probe)
        assert np.allclose(full, full.T, atol=1e-12)
        assert np.linalg.eigvalsh(full).min() >= -1e-10

    def test_dimension_guard(self):
        spec = NetworkSpec((100, 100, 10))
        params = random_params(spec, np.random.default_rng(9))
        with pytest.raises(ValueError):
            full_empirical_fisher(spec, params, ProbeSet(np.zeros((1, 100))))


class TestKlQuadratic:
    def test_zero_displacement(self):
        spec = NetworkSpec((2, 2))
        params = random_params(spec, np.random.default_rng(10))
        fisher = DiagonalFisher(spec, np.abs(np.random.default_rng(11).standard_normal(6)), 1)
        assert kl_quadratic(params, params, fisher) == 0.0

    def test_direct_quadratic_form(self):
        spec = NetworkSpec((1, 1))  # d = 2
        a = ParamVec(spec, np.array([3.0, 1.0]))
        b = ParamVec(spec, np.array([0.0, 0.0]))
        fisher = DiagonalFisher(spec, np.array([1.0, 2.0]), 1)
        assert kl_quadratic(a, b, fisher) == 11.0

    def test_quadratic_homogeneity(self):
        spec = NetworkSpec((2, 3))
        rng = np.random.default_rng(12)
        base = random_params(spec, rng)
        delta = rng.standard_normal(param_count(spec))
        fisher = DiagonalFisher(spec, np.abs(rng.standard_normal(param_count(spec))), 1)
        one = kl_quadratic(ParamVec(spec, base.values + delta), base, fisher)
        three = kl_quadratic(ParamVec(spec, base.values + 3.0 * delta), base, fisher)
        assert np.isclose(three, 9.0 * one, rtol=1e-12)

    def test_full_matrix_accepted(self):
        spec = NetworkSpec((2, 2, 2), "tanh")
        rng = np.random.default_rng(13)
        params = random_params(spec, rng)
        other = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((4, 2)))
        full = full_empirical_fisher(spec, params, probe)
        value = kl_quadratic(other, params, full)
        delta = other.values - params.values
        assert np.isclose(value, delta @ full @ delta, rtol=1e-12)


class TestOutputDivergence:
    def test_zero_for_identical(self):
        spec = NetworkSpec((3, 4, 2), "tanh")
        params = random_params(spec, np.random.default_rng(14))
        probe = ProbeSet(np.random.default_rng(15).standard_normal((5, 3)))
        assert empirical_output_divergence(spec, params, params, probe) == 0.0

    def test_linear_models_closed_form(self):
        spec = NetworkSpec((2, 2))
        w1 = np.array([[1.0, 2.0], [0.0, -1.0]])
        w2 = np.array([[0.5, 2.0], [1.0, 3.0]])
        a = ParamVec(spec, flatten(spec, [(w1, np.zeros(2))]))
        b = ParamVec(spec, flatten(spec, [(w2, np.zeros(2))]))
        x = np.array([0.7, -0.3])
        expected = 0.5 * np.sum(((w1 - w2) @ x) ** 2)
        got = empirical_output_divergence(spec, a, b, ProbeSet(x[None, :]))
        assert np.isclose(got, expected, rtol=1e-12)

    def test_symmetric(self):
        spec = NetworkSpec((3, 5, 2), "tanh")
        rng = np.random.default_rng(16)
        a = random_params(spec, rng)
        b = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((6, 3)))
        assert empirical_output_divergence(spec, a, b, probe) == pytest.approx(
            empirical_output_divergence(spec, b, a, probe), rel=1e-12)


class TestTaylorFidelity:
    @pytest.mark.parametrize("eps,tol", [(1e-2, 0.10), (1e-3, 0.01)])
    def test_divergence_matches_half_quadratic(self, eps, tol):
        # Small parameter steps: the output divergence approaches half the
        # full-Fisher quadratic form, to first order in the step size.
        spec = NetworkSpec((4, 10, 3), "tanh")
        assert param_count(spec) <= 200
        rng = np.random.default_rng(17)
        params = random_params(spec, rng)
        probe = ProbeSet(rng.standard_normal((12, 4)))
        full = full_empirical_fisher(spec, params, probe)
        ratios = []
        for _ in range(10):
            v = rng.standard_normal(param_count(spec))
            v /= np.linalg.norm(v)
            shifted = ParamVec(spec, params.values + eps * v)
            div = empirical_output_divergence(spec, shifted, params, probe)
            quad = 0.5 * kl_quadratic(shifted, params, full)
            ratios.append(div / quad)
        assert abs(np.mean(ratios) - 1.0) < tol
