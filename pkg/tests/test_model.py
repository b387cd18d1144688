"""
Tests for the flat-parameter MLP, local SGD and evaluation.
"""

import numpy as np
import pytest

from src.errors import EmptyDataset, InvalidConfig
from src.model import (
    Dataset,
    ModelArchitecture,
    SgdConfig,
    evaluate,
    init_parameters,
    local_sgd,
    loss,
    loss_and_gradient,
    predict_logits,
)


def make_blobs_dataset(n: int = 200, features: int = 2, classes: int = 2, seed: int = 0) -> Dataset:
    """Well-separated Gaussian blobs."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 4.0, size=(classes, features))
    labels = np.arange(n) % classes
    x = centers[labels] + rng.normal(0, 0.5, size=(n, features))
    return Dataset(x, labels, classes, "blobs")


class TestArchitecture:
    """Tests for parameter layout."""

    def test_mnist_parameter_count(self):
        """784-128-64-10 has 109,386 parameters."""
        arch = ModelArchitecture((784, 128, 64, 10))
        assert arch.num_parameters == 784 * 128 + 128 + 128 * 64 + 64 + 64 * 10 + 10
        assert arch.num_classes == 10

    def test_unpack_returns_views(self):
        """Writing through unpacked layers changes the flat vector."""
        arch = ModelArchitecture((3, 2))
        params = np.zeros(arch.num_parameters)
        (weights, bias), = arch.unpack(params)
        weights[0, 1] = 5.0
        bias[1] = 7.0
        assert params[1] == 5.0
        assert params[-1] == 7.0

    def test_unpack_rejects_wrong_length(self):
        """A vector of the wrong length is rejected."""
        arch = ModelArchitecture((3, 2))
        with pytest.raises(InvalidConfig):
            arch.unpack(np.zeros(arch.num_parameters + 1))

    def test_invalid_architectures(self):
        """Single layer, zero width and unknown activations are rejected."""
        with pytest.raises(InvalidConfig):
            ModelArchitecture((5,))
        with pytest.raises(InvalidConfig):
            ModelArchitecture((5, 0, 2))
        with pytest.raises(InvalidConfig):
            ModelArchitecture((5, 2), activation="swish")


class TestInitialization:
    """Tests for seeded initialization."""

    def test_same_seed_same_parameters(self):
        arch = ModelArchitecture((4, 8, 3))
        assert np.array_equal(init_parameters(arch, 11), init_parameters(arch, 11))

    def test_different_seed_different_parameters(self):
        arch = ModelArchitecture((4, 8, 3))
        assert not np.array_equal(init_parameters(arch, 11), init_parameters(arch, 12))

    def test_weights_within_fan_in_bound(self):
        """Every layer is drawn from [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        arch = ModelArchitecture((16, 4, 2))
        layers = arch.unpack(init_parameters(arch, 0))
        assert np.all(np.abs(layers[0][0]) <= 1 / 4)
        assert np.all(np.abs(layers[1][0]) <= 1 / 2)


class TestGradient:
    """Tests for the backpropagated gradient."""

    def test_matches_central_finite_differences(self):
        """2 features, 1 hidden unit, 2 classes: relative error <= 1e-4."""
        arch = ModelArchitecture((2, 1, 2), activation="tanh")
        rng = np.random.default_rng(3)
        params = rng.normal(0, 0.8, arch.num_parameters)
        x = rng.normal(0, 1, size=(6, 2))
        y = np.array([0, 1, 1, 0, 1, 0])

        _, grad = loss_and_gradient(arch, params, x, y)
        eps = 1e-6
        numeric = np.zeros_like(params)
        for i in range(len(params)):
            step = np.zeros_like(params)
            step[i] = eps
            plus, _ = loss_and_gradient(arch, params + step, x, y)
            minus, _ = loss_and_gradient(arch, params - step, x, y)
            numeric[i] = (plus - minus) / (2 * eps)

        rel = np.linalg.norm(grad - numeric) / max(np.linalg.norm(grad) + np.linalg.norm(numeric), 1e-12)
        assert rel <= 1e-4

    def test_linear_model_closed_form(self):
        """Without hidden layers the gradient is X^T (softmax - onehot) / n."""
        arch = ModelArchitecture((3, 4))
        rng = np.random.default_rng(5)
        params = rng.normal(0, 1, arch.num_parameters)
        x = rng.normal(0, 1, size=(10, 3))
        y = rng.integers(0, 4, size=10)

        _, grad = loss_and_gradient(arch, params, x, y)
        logits = predict_logits(arch, params, x)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(10), y] -= 1.0
        expected = np.concatenate([(x.T @ probs / 10).ravel(), probs.mean(axis=0)])
        assert np.allclose(grad, expected, atol=1e-12)

    def test_loss_matches_batch_loss(self):
        arch = ModelArchitecture((2, 3, 2))
        data = make_blobs_dataset(40)
        params = init_parameters(arch, 0)
        batch_loss, _ = loss_and_gradient(arch, params, data.features, data.labels)
        assert loss(arch, params, data) == pytest.approx(batch_loss, abs=1e-12)


class TestLocalSgd:
    """Tests for local training."""

    def test_deterministic_for_same_seed(self):
        """Same (params, data, config, round, seed) gives a bit-identical update."""
        arch = ModelArchitecture((2, 8, 2))
        data = make_blobs_dataset(100)
        params = init_parameters(arch, 1)
        cfg = SgdConfig(learning_rate=0.1, batch_size=16, local_epochs=2)
        first = local_sgd(arch, params, data, cfg, 3, 42)
        second = local_sgd(arch, params, data, cfg, 3, 42)
        assert np.array_equal(first, second)

    def test_does_not_modify_input(self):
        arch = ModelArchitecture((2, 4, 2))
        data = make_blobs_dataset(50)
        params = init_parameters(arch, 1)
        before = params.copy()
        local_sgd(arch, params, data, SgdConfig(), 0, 0)
        assert np.array_equal(params, before)

    def test_reduces_loss_on_separable_data(self):
        arch = ModelArchitecture((2, 8, 2))
        data = make_blobs_dataset(200)
        params = init_parameters(arch, 2)
        delta = local_sgd(arch, params, data, SgdConfig(learning_rate=0.1, local_epochs=3), 0, 7)
        assert loss(arch, params + delta, data) < loss(arch, params, data)

    def test_last_partial_batch_is_used(self):
        """A single example smaller than the batch still trains."""
        arch = ModelArchitecture((2, 2))
        data = make_blobs_dataset(1)
        delta = local_sgd(arch, np.zeros(arch.num_parameters), data, SgdConfig(batch_size=16, local_epochs=1), 0, 0)
        assert np.any(delta != 0)

    def test_empty_dataset_raises(self):
        arch = ModelArchitecture((2, 2))
        empty = Dataset(np.empty((0, 2)), np.empty(0, dtype=np.int64), 2, "empty")
        with pytest.raises(EmptyDataset):
            local_sgd(arch, np.zeros(arch.num_parameters), empty, SgdConfig(), 0, 0)

    def test_negative_round_raises(self):
        arch = ModelArchitecture((2, 2))
        with pytest.raises(InvalidConfig):
            local_sgd(arch, np.zeros(arch.num_parameters), make_blobs_dataset(4), SgdConfig(), -1, 0)


class TestSgdConfig:
    """Tests for optimizer settings."""

    def test_learning_rate_decay(self):
        cfg = SgdConfig(learning_rate=0.15, decay_gamma=0.977)
        assert cfg.learning_rate_at(0) == 0.15
        assert cfg.learning_rate_at(10) == pytest.approx(0.15 * 0.977 ** 10)

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": 0.0},
        {"decay_gamma": 1.5},
        {"batch_size": 0},
        {"local_epochs": 0},
        {"clip_bound": -0.01},
        {"batch_size": 16.0},
        {"local_epochs": 2.0},
        {"local_epochs": True},
    ])
    def test_invalid_values(self, kwargs):
        with pytest.raises(InvalidConfig):
            SgdConfig(**kwargs)


class TestEvaluate:
    """Tests for accuracy evaluation."""

    def test_accuracy_in_unit_interval_and_permutation_invariant(self):
        arch = ModelArchitecture((2, 4, 2))
        data = make_blobs_dataset(60)
        params = init_parameters(arch, 0)
        order = np.random.default_rng(0).permutation(len(data))
        shuffled = data.subset(order)
        acc = evaluate(arch, params, data)
        assert 0.0 <= acc <= 1.0
        assert evaluate(arch, params, shuffled) == acc

    def test_ties_go_to_lowest_class(self):
        """An all-zero model predicts class 0 everywhere."""
        arch = ModelArchitecture((2, 3))
        data = Dataset(np.ones((4, 2)), np.array([0, 0, 1, 2]), 3)
        assert evaluate(arch, np.zeros(arch.num_parameters), data) == 0.5

    def test_empty_dataset_raises(self):
        arch = ModelArchitecture((2, 2))
        empty = Dataset(np.empty((0, 2)), np.empty(0, dtype=np.int64), 2)
        with pytest.raises(EmptyDataset):
            evaluate(arch, np.zeros(arch.num_parameters), empty)
