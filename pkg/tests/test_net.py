import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codednn.net import (LabeledDataset, NetworkSpec, ParamVec, TrainConfig,
                         accuracy, flatten, forward, init_params, jacobian,
                         jacobian_batch, mean_loss, one_hot, param_count, train,
                         train_regression, unflatten)
from helpers import fd_jacobian, random_params, relative_error


class TestSpecAndLayout:
    def test_param_count_single_layer(self):
        assert param_count(NetworkSpec((2, 2))) == 6

    def test_param_count_chain(self):
        assert param_count(NetworkSpec((1, 1, 1))) == 4

    def test_param_count_formula(self):
        # 8*16 + 16 + 16*10 + 10
        assert param_count(NetworkSpec((8, 16, 10))) == 314

    def test_rejects_short_dims(self):
        with pytest.raises(ValueError):
            NetworkSpec((5,))

    def test_rejects_zero_dim(self):
        with pytest.raises(ValueError):
            NetworkSpec((3, 0, 2))

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError):
            NetworkSpec((2, 2), "sigmoid")

    def test_flatten_unflatten_round_trip_exact(self):
        spec = NetworkSpec((3, 5, 2))
        rng = np.random.default_rng(0)
        v = rng.standard_normal(param_count(spec))
        assert np.array_equal(flatten(spec, unflatten(spec, v)), v)

    @settings(max_examples=30, deadline=None, derandomize=True)
    @given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2**31))
    def test_round_trip_property(self, dims, seed):
        spec = NetworkSpec(tuple(dims))
        v = np.random.default_rng(seed).standard_normal(param_count(spec))
        assert np.array_equal(flatten(spec, unflatten(spec, v)), v)

    def test_paramvec_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            ParamVec(NetworkSpec((2, 2)), np.zeros(5))

    def test_paramvec_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ParamVec(NetworkSpec((2, 2)), np.array([0.0, np.nan, 0, 0, 0, 0]))


class TestInit:
    def test_deterministic(self):
        spec = NetworkSpec((4, 7, 3))
        a = init_params(spec, 123)
        b = init_params(spec, 123)
        assert np.array_equal(a.values, b.values)

    def test_seeds_differ(self):
        spec = NetworkSpec((4, 7, 3))
        assert np.any(init_params(spec, 1).values != init_params(spec, 2).values)

    def test_biases_exactly_zero(self):
        spec = NetworkSpec((4, 7, 3))
        layers = unflatten(spec, init_params(spec, 5).values)
        for _, b in layers:
            assert np.all(b == 0.0)


class TestForward:
    def test_identity_linear_layer(self):
        spec = NetworkSpec((2, 2))
        params = ParamVec(spec, flatten(spec, [(np.eye(2), np.zeros(2))]))
        out = forward(spec, params, np.array([0.3, -0.7]))
        assert np.array_equal(out, np.array([0.3, -0.7]))

    def test_relu_clamps(self):
        spec = NetworkSpec((1, 1, 1), "relu")
        params = ParamVec(spec, np.array([1.0, 0.0, 1.0, 0.0]))
        assert forward(spec, params, np.array([-2.0]))[0] == 0.0

    def test_tanh_hand_evaluation(self):
        spec = NetworkSpec((2, 2, 2), "tanh")
        w1 = np.array([[0.5, -1.0], [2.0, 0.25]])
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[1.5, 0.0], [-0.5, 1.0]])
        b2 = np.array([0.3, 0.0])
        params = ParamVec(spec, flatten(spec, [(w1, b1), (w2, b2)]))
        x = np.array([0.4, -0.6])
        expected = w2 @ np.tanh(w1 @ x + b1) + b2
        assert np.allclose(forward(spec, params, x), expected, rtol=0, atol=1e-15)

    def test_batch_matches_single(self):
        # BLAS may accumulate batched and single rows differently at ulp level.
        spec = NetworkSpec((3, 4, 2))
        params = init_params(spec, 7)
        X = np.random.default_rng(1).standard_normal((5, 3))
        batch = forward(spec, params, X)
        for i in range(5):
            assert np.allclose(batch[i], forward(spec, params, X[i]), rtol=1e-14, atol=1e-15)

    def test_pure(self):
        spec = NetworkSpec((3, 4, 2))
        params = init_params(spec, 7)
        x = np.array([0.1, -0.5, 2.0])
        assert np.array_equal(forward(spec, params, x), forward(spec, params, x))

    def test_dim_mismatch(self):
        spec = NetworkSpec((3, 2))
        with pytest.raises(ValueError):
            forward(spec, init_params(spec, 0), np.zeros(4))


class TestJacobian:
    def test_linear_layer_structure(self):
        # f(x) = Wx + b: dfk/dW[k,j] = x_j, dfk/db[k] = 1, cross terms 0.
        spec = NetworkSpec((3, 2))
        params = random_params(spec, np.random.default_rng(3))
        x = np.array([0.5, -1.5, 2.0])
        J = jacobian(spec, params, x)
        expected = np.zeros((2, 8))
        for k in range(2):
            expected[k, 3 * k : 3 * (k + 1)] = x
            expected[k, 6 + k] = 1.0
        assert np.allclose(J, expected, rtol=0, atol=1e-15)

    def test_zero_input_pure_linear(self):
        spec = NetworkSpec((3, 2))
        params = random_params(spec, np.random.default_rng(4))
        J = jacobian(spec, params, np.zeros(3))
        assert np.all(J[:, :6] == 0.0)
        assert np.array_equal(J[:, 6:], np.eye(2))

    @pytest.mark.parametrize("dims", [(2, 3), (3, 5, 2), (4, 8, 8, 3)])
    def test_matches_finite_differences(self, dims):
        spec = NetworkSpec(dims, "tanh")
        rng = np.random.default_rng(11)
        params = random_params(spec, rng)
        x = rng.standard_normal(dims[0])
        J = jacobian(spec, params, x)
        J_fd = fd_jacobian(spec, params, x)
        assert relative_error(J, J_fd) < 1e-5

    def test_larger_net_finite_differences(self):
        # d <= 500 invariant instance
        spec = NetworkSpec((6, 20, 14, 4), "tanh")
        rng = np.random.default_rng(21)
        params = random_params(spec, rng)
        x = rng.standard_normal(6)
        assert param_count(spec) <= 500
        assert relative_error(jacobian(spec, params, x), fd_jacobian(spec, params, x)) < 1e-5

    def test_batch_matches_single(self):
        spec = NetworkSpec((3, 6, 2), "tanh")
        rng = np.random.default_rng(8)
        params = random_params(spec, rng)
        X = rng.standard_normal((4, 3))
        JB = jacobian_batch(spec, params, X)
        for i in range(4):
            assert np.allclose(JB[i], jacobian(spec, params, X[i]), rtol=1e-14, atol=1e-15)

    def test_pure(self):
        spec = NetworkSpec((3, 6, 2), "tanh")
        params = random_params(spec, np.random.default_rng(9))
        x = np.array([0.2, 0.4, -0.8])
        assert np.array_equal(jacobian(spec, params, x), jacobian(spec, params, x))


def _blobs(n_per, rng):
    a = rng.standard_normal((n_per, 2)) * 0.5 + np.array([2.0, 0.0])
    b = rng.standard_normal((n_per, 2)) * 0.5 + np.array([-2.0, 0.0])
    X = np.vstack([a, b])
    y = np.concatenate([np.zeros(n_per, dtype=np.int64), np.ones(n_per, dtype=np.int64)])
    return LabeledDataset(X, y, "train")


class TestTrain:
    def test_zero_epochs_returns_init(self):
        spec = NetworkSpec((2, 4, 2))
        init = init_params(spec, 0)
        cfg = TrainConfig(0.01, 0)
        data = _blobs(10, np.random.default_rng(0))
        out = train(spec, init, data, cfg)
        assert np.array_equal(out.values, init.values)

    def test_separable_blobs_high_accuracy(self):
        spec = NetworkSpec((2, 8, 2), "tanh")
        data = _blobs(100, np.random.default_rng(42))
        init = init_params(spec, 1)
        cfg = TrainConfig(0.02, 20, batch_size=32, rng_seed=3)
        fitted = train(spec, init, data, cfg)
        assert accuracy(spec, fitted, data) >= 0.99

    def test_deterministic(self):
        spec = NetworkSpec((2, 8, 2))
        data = _blobs(50, np.random.default_rng(5))
        init = init_params(spec, 2)
        cfg = TrainConfig(0.01, 5, rng_seed=7)
        a = train(spec, init, data, cfg)
        b = train(spec, init, data, cfg)
        assert np.array_equal(a.values, b.values)

    def test_single_sample_loss_decreases(self):
        spec = NetworkSpec((3, 5, 2), "tanh")
        rng = np.random.default_rng(12)
        init = random_params(spec, rng)
        X = rng.standard_normal((1, 3))
        data = LabeledDataset(X, np.array([1]), "train")
        cfg = TrainConfig(1e-3, 1, batch_size=1, weight_decay=0.0, rng_seed=0)
        before = mean_loss(spec, init, X, data.labels, "cross_entropy")
        after_params = train(spec, init, data, cfg)
        after = mean_loss(spec, after_params, X, data.labels, "cross_entropy")
        assert after < before

    def test_empty_dataset_rejected(self):
        spec = NetworkSpec((2, 2))
        data = LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), "train")
        with pytest.raises(ValueError):
            train(spec, init_params(spec, 0), data, TrainConfig(0.01, 1))

    def test_regression_targets_shape_checked(self):
        spec = NetworkSpec((2, 2))
        with pytest.raises(ValueError):
            train_regression(spec, init_params(spec, 0), np.zeros((3, 2)),
                             np.zeros((3, 3)), TrainConfig(0.01, 1))


class TestAccuracy:
    def test_perfect_network(self):
        # Identity logits on one-hot inputs reproduce the labels exactly.
        spec = NetworkSpec((3, 3))
        params = ParamVec(spec, flatten(spec, [(np.eye(3), np.zeros(3))]))
        labels = np.array([0, 1, 2, 1], dtype=np.int64)
        data = LabeledDataset(one_hot(labels, 3), labels, "test")
        assert accuracy(spec, params, data) == 1.0

    def test_all_wrong(self):
        spec = NetworkSpec((3, 3))
        params = ParamVec(spec, flatten(spec, [(-np.eye(3), np.zeros(3))]))
        labels = np.array([0, 1, 2], dtype=np.int64)
        data = LabeledDataset(one_hot(labels, 3), labels, "test")
        assert accuracy(spec, params, data) == 0.0

    def test_two_of_three(self):
        spec = NetworkSpec((3, 3))
        params = ParamVec(spec, flatten(spec, [(np.eye(3), np.zeros(3))]))
        inputs = one_hot(np.array([0, 1, 2]), 3)
        labels = np.array([0, 1, 0], dtype=np.int64)  # last one misclassified
        data = LabeledDataset(inputs, labels, "test")
        assert accuracy(spec, params, data) == pytest.approx(2.0 / 3.0)

    def test_empty_rejected(self):
        spec = NetworkSpec((2, 2))
        data = LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), "test")
        with pytest.raises(ValueError):
            accuracy(spec, init_params(spec, 0), data)
