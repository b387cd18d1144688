"""
Model core: flat-parameter MLPs, mini-batch SGD and accuracy evaluation.

Parameters of every architecture live in one flat float64 vector laid out
layer by layer as (weights[in, out], bias[out]). Every protocol in the
package exchanges these vectors.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.special import expit, log_softmax

from .errors import EmptyDataset, InvalidConfig, NumericalError
from .rng import make_rng

logger = logging.getLogger(__name__)

# Flat parameter or gradient vector (float64, length = architecture parameter count)
ParameterVector = np.ndarray


def is_count(value) -> bool:
    """True for Python and numpy integers; bools and integral floats are rejected."""
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _relu_grad(z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(np.float64)


def _tanh_grad(z: np.ndarray) -> np.ndarray:
    return 1.0 - np.tanh(z) ** 2


def _sigmoid_grad(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s * (1.0 - s)


ACTIVATIONS: Dict[str, Tuple[Callable, Callable]] = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "sigmoid": (expit, _sigmoid_grad),
}


@dataclass(frozen=True)
class ModelArchitecture:
    """Layer widths (input, hidden..., output) and the hidden nonlinearity."""
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise InvalidConfig(f"Architecture needs input and output widths, got {sizes}")
        if any(s < 1 for s in sizes):
            raise InvalidConfig(f"Layer widths must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise InvalidConfig(f"Unknown activation '{self.activation}'")

    @property
    def num_parameters(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def unpack(self, params: ParameterVector) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Split a flat vector into per-layer (weights, bias) views."""
        if params.shape != (self.num_parameters,):
            raise InvalidConfig(
                f"Parameter vector of length {params.shape} does not match "
                f"architecture {self.layer_sizes} ({self.num_parameters})"
            )
        layers = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = params[offset:offset + fan_out]
            offset += fan_out
            layers.append((weights, bias))
        return layers


@dataclass(frozen=True)
class SgdConfig:
    """Local optimizer settings shared by every framework."""
    learning_rate: float = 0.15
    decay_gamma: float = 0.977
    batch_size: int = 16
    local_epochs: int = 2
    clip_bound: float = 0.01

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.decay_gamma <= 1:
            raise InvalidConfig(f"decay_gamma must be in (0, 1], got {self.decay_gamma}")
        if not is_count(self.batch_size) or self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be a positive integer, got {self.batch_size}")
        if not is_count(self.local_epochs) or self.local_epochs < 1:
            raise InvalidConfig(f"local_epochs must be a positive integer, got {self.local_epochs}")
        if not self.clip_bound > 0:
            raise InvalidConfig(f"clip_bound must be > 0, got {self.clip_bound}")

    def learning_rate_at(self, round_index: int) -> float:
        """Learning rate after `round_index` rounds of exponential decay."""
        return self.learning_rate * self.decay_gamma ** round_index


@dataclass
class Dataset:
    """Feature matrix with integer class labels."""
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidConfig(f"features must be a 2-D matrix, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidConfig(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.class_count < 1:
            raise InvalidConfig(f"class_count must be >= 1, got {self.class_count}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidConfig(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_count(self) -> int:
        return int(self.features.shape[1])

    def present_classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, indices: np.ndarray, name: str = "") -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.class_count, name or self.name)


def init_parameters(arch: ModelArchitecture, seed: int) -> ParameterVector:
    """
    Seeded initialization shared by every participant and the server.

    Each layer's weights and bias are drawn uniformly from
    [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    """
    rng = make_rng(seed)
    params = np.empty(arch.num_parameters, dtype=np.float64)
    for fan_in, (weights, bias) in zip(arch.layer_sizes[:-1], arch.unpack(params)):
        bound = 1.0 / np.sqrt(fan_in)
        weights[...] = rng.uniform(-bound, bound, size=weights.shape)
        bias[...] = rng.uniform(-bound, bound, size=bias.shape)
    return params


def predict_logits(arch: ModelArchitecture, params: ParameterVector, features: np.ndarray) -> np.ndarray:
    activation, _ = ACTIVATIONS[arch.activation]
    layers = arch.unpack(params)
    hidden = features
    for weights, bias in layers[:-1]:
        hidden = activation(hidden @ weights + bias)
    weights, bias = layers[-1]
    return hidden @ weights + bias


def loss_and_gradient(
    arch: ModelArchitecture,
    params: ParameterVector,
    features: np.ndarray,
    labels: np.ndarray,
) -> Tuple[float, ParameterVector]:
    """
    Mean softmax cross-entropy over a batch and its gradient.

    Args:
        arch: Model architecture
        params: Flat parameter vector
        features: Batch features (rows = examples)
        labels: Batch class indices

    Returns:
        Tuple of (loss, flat gradient vector)
    """
    activation, activation_grad = ACTIVATIONS[arch.activation]
    layers = arch.unpack(params)
    inputs = []
    pre_activations = []

    hidden = features
    for weights, bias in layers[:-1]:
        inputs.append(hidden)
        z = hidden @ weights + bias
        pre_activations.append(z)
        hidden = activation(z)
    inputs.append(hidden)
    weights, bias = layers[-1]
    logits = hidden @ weights + bias

    count = labels.shape[0]
    rows = np.arange(count)
    log_probs = log_softmax(logits, axis=1)
    loss = float(-log_probs[rows, labels].mean())

    delta = np.exp(log_probs)
    delta[rows, labels] -= 1.0
    delta /= count

    grad = np.zeros_like(params)
    grad_layers = arch.unpack(grad)
    for i in reversed(range(len(layers))):
        grad_weights, grad_bias = grad_layers[i]
        grad_weights[...] = inputs[i].T @ delta
        grad_bias[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * activation_grad(pre_activations[i - 1])

    return loss, grad


def loss(arch: ModelArchitecture, params: ParameterVector, data: Dataset) -> float:
    """Mean cross-entropy of the model over a whole dataset."""
    if len(data) == 0:
        raise EmptyDataset("Cannot compute loss on an empty dataset")
    logits = predict_logits(arch, params, data.features)
    log_probs = log_softmax(logits, axis=1)
    return float(-log_probs[np.arange(len(data)), data.labels].mean())


def local_sgd(
    arch: ModelArchitecture,
    params: ParameterVector,
    data: Dataset,
    cfg: SgdConfig,
    round_index: int,
    seed: int,
) -> ParameterVector:
    """
    Run `cfg.local_epochs` epochs of mini-batch SGD and return the update.

    The learning rate is decayed to round `round_index`. Batch order is
    reshuffled every epoch by a generator keyed on (seed, round, epoch); the
    last partial batch is kept. `params` is not modified.

    Args:
        arch: Model architecture
        params: Current local model w_j
        data: Local shard
        cfg: SGD settings
        round_index: Communication round (0-based), drives the decay
        seed: Participant-specific seed

    Returns:
        Update vector w_after - w_before
    """
    if len(data) == 0:
        raise EmptyDataset(f"Local SGD on empty dataset '{data.name}'")
    if round_index < 0:
        raise InvalidConfig(f"round must be >= 0, got {round_index}")

    lr = cfg.learning_rate_at(round_index)
    weights = params.copy()
    count = len(data)

    for epoch in range(cfg.local_epochs):
        order = make_rng(seed, round_index, epoch).permutation(count)
        for start in range(0, count, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grad = loss_and_gradient(arch, weights, data.features[batch], data.labels[batch])
            weights -= lr * grad

    if not np.all(np.isfinite(weights)):
        raise NumericalError(f"Local SGD diverged at round {round_index} (lr={lr:.4g})")

    return weights - params


def evaluate(arch: ModelArchitecture, params: ParameterVector, data: Dataset) -> float:
    """Fraction of examples whose argmax prediction equals the label."""
    if len(data) == 0:
        raise EmptyDataset(f"Cannot evaluate on empty dataset '{data.name}'")
    # argmax returns the first maximum, so ties go to the lowest class index
    predictions = np.argmax(predict_logits(arch, params, data.features), axis=1)
    return float(np.mean(predictions == data.labels))
