"""Linear multi-label classifier with sigmoid outputs and exact gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import DataError
from .losses import EPSILON_CLAMP


@dataclass
class LinearModel:
    """Per-class linear scorer: prediction_i = sigmoid(w_i . x + b_i)."""

    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError("bias length must match the number of classes")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("model parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "LinearModel":
        return LinearModel(self.weights.copy(), self.bias.copy())


def init_linear_model(n_features: int, n_classes: int, seed: int) -> LinearModel:
    """Weights uniform in [-1/sqrt(d), 1/sqrt(d)], bias zero."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    bound = 1.0 / np.sqrt(n_features)
    weights = rng.uniform(-bound, bound, size=(n_classes, n_features))
    return LinearModel(weights, np.zeros(n_classes))


def _batch_features(features: np.ndarray, indices: np.ndarray | None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise DataError("features contain non-finite values")
    if indices is None:
        return features
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= features.shape[0]):
        raise DataError("batch indices out of range")
    return features[indices]


def forward(
    model: LinearModel, features: np.ndarray, indices: np.ndarray | None = None
) -> np.ndarray:
    """Predicted class probabilities, clamped into the open unit interval."""
    x = _batch_features(features, indices)
    if x.shape[1] != model.n_features:
        raise DataError(
            f"feature dimension {x.shape[1]} does not match model ({model.n_features})"
        )
    logits = x @ model.weights.T + model.bias[None, :]
    return np.clip(expit(logits), EPSILON_CLAMP, 1.0 - EPSILON_CLAMP)


def backward(
    model: LinearModel,
    features: np.ndarray,
    indices: np.ndarray | None,
    grad_predictions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Chain a prediction gradient through the sigmoid to (weights, bias).

    Entries pinned at the clamp boundary pass no gradient, which keeps the
    analytic gradient consistent with finite differences of the clamped
    forward pass.
    """
    x = _batch_features(features, indices)
    predictions = forward(model, features, indices)
    grad_predictions = np.asarray(grad_predictions, dtype=np.float64)
    if grad_predictions.shape != predictions.shape:
        raise DataError(
            f"gradient shape {grad_predictions.shape} does not match "
            f"predictions {predictions.shape}"
        )
    unclamped = (predictions > EPSILON_CLAMP) & (predictions < 1.0 - EPSILON_CLAMP)
    grad_logits = grad_predictions * predictions * (1.0 - predictions) * unclamped
    return grad_logits.T @ x, grad_logits.sum(axis=0)
