"""Model state, initialization, and the classification loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AGGREGATION_MODES",
    "ModelState",
    "copy_model",
    "create_model",
    "softmax_cross_entropy_loss",
    "train_accuracy",
]

AGGREGATION_MODES = ("mean_self_loop", "symmetric_norm")


@dataclass
class ModelState:
    """Weights and layer configuration of a graph convolution stack.

    ``weights[l]`` maps layer l's aggregated input to its output; shapes
    chain across layers.  ``weight_grads`` mirrors ``weights`` and holds the
    most recent gradient.  ``row_normalize`` inserts an L2 row normalization
    between the weight multiply and the activation.  ``dropout_rate`` applies
    a seeded mask to each layer's input activations; it is off by default so
    training runs are bitwise comparable.
    """

    weights: list[np.ndarray]
    weight_grads: list[np.ndarray]
    aggregation_mode: str = "mean_self_loop"
    row_normalize: bool = False
    dropout_rate: float = 0.0
    dropout_seed: int = 0

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("model needs at least one layer")
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation_mode {self.aggregation_mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for idx in range(1, len(self.weights)):
            prev, cur = self.weights[idx - 1], self.weights[idx]
            if prev.shape[1] != cur.shape[0]:
                raise ValueError(
                    f"layer {idx} input dim {cur.shape[0]} != layer {idx - 1} "
                    f"output dim {prev.shape[1]}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def hidden_dim(self) -> int:
        return self.weights[0].shape[1] if self.num_layers > 1 else self.weights[0].shape[0]


def create_model(feature_dim: int, num_classes: int, num_layers: int,
                 hidden_dim: int, seed: int = 0,
                 aggregation_mode: str = "mean_self_loop",
                 row_normalize: bool = False,
                 dropout_rate: float = 0.0) -> ModelState:
    """Build a model with seeded uniform Glorot-scaled weights."""
    if num_layers < 1:
        raise ValueError(f"num_layers must be >= 1, got {num_layers}")
    if min(feature_dim, num_classes, hidden_dim) < 1:
        raise ValueError("all dimensions must be positive")
    dims = [feature_dim] + [hidden_dim] * (num_layers - 1) + [num_classes]
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    for l in range(num_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return ModelState(weights=weights,
                      weight_grads=[np.zeros_like(w) for w in weights],
                      aggregation_mode=aggregation_mode,
                      row_normalize=row_normalize,
                      dropout_rate=dropout_rate,
                      dropout_seed=seed)


def copy_model(model: ModelState) -> ModelState:
    """Deep copy so training never mutates the caller's model."""
    return ModelState(weights=[w.copy() for w in model.weights],
                      weight_grads=[g.copy() for g in model.weight_grads],
                      aggregation_mode=model.aggregation_mode,
                      row_normalize=model.row_normalize,
                      dropout_rate=model.dropout_rate,
                      dropout_seed=model.dropout_seed)


def softmax_cross_entropy_loss(logits: np.ndarray, labels: np.ndarray,
                               mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy over masked rows, plus the gradient wrt logits.

    Rows outside the mask contribute neither loss nor gradient; the mean
    divides by the global masked count.
    """
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("loss mask selects no vertices")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs = expv / expv.sum(axis=1, keepdims=True)
        picked = probs[idx, labels[idx]]
        loss = float(-np.sum(np.log(picked)) / idx.size)
    grad = np.zeros_like(logits)
    grad[idx] = probs[idx]
    grad[idx, labels[idx]] -= 1.0
    grad /= idx.size
    return loss, grad


def train_accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked rows whose argmax matches the label."""
    idx = np.flatnonzero(mask)
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == labels[idx]))
