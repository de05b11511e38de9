"""Online estimation of unobserved labels, trained jointly with the classifier.

A dense per-example table of pre-sigmoid parameters stands in for the label
estimator; reading estimates for a batch is a row lookup through the
sigmoid. The symmetrized joint loss averages two one-sided terms, each of
which treats the other side's values as constants (stop-gradient), so the
classifier and the estimate table receive separate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import NEGATIVE, POSITIVE
from .exceptions import DataError
from .losses import (
    EPSILON_CLAMP,
    BceCoefficients,
    LossResult,
    loss_epr,
    weighted_bce,
)

#: initial estimate at observed positives
INIT_POSITIVE_ESTIMATE = 0.995
#: unobserved entries start uniform (in pre-sigmoid space) over this estimate range
INIT_UNOBSERVED_RANGE = (0.4, 0.6)


@dataclass
class LabelEstimatorState:
    """Pre-sigmoid label-estimate table, one row per training example."""

    phi: np.ndarray  # (n_examples, n_classes)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 2:
            raise ValueError("phi must be 2-D")

    @property
    def n_examples(self) -> int:
        return self.phi.shape[0]

    def estimates(self) -> np.ndarray:
        """Sigmoid readout of the full table, clamped like predictions."""
        return np.clip(expit(self.phi), EPSILON_CLAMP, 1.0 - EPSILON_CLAMP)

    def copy(self) -> "LabelEstimatorState":
        return LabelEstimatorState(self.phi.copy())


def init_phi(observed: np.ndarray, seed: int) -> LabelEstimatorState:
    """Initialize estimates: 0.995 at observed positives, near-uniform elsewhere.

    Unobserved entries draw uniformly in pre-sigmoid space between
    logit(0.4) and logit(0.6).
    """
    observed = np.asarray(observed)
    if np.any(observed == NEGATIVE):
        raise DataError("label estimation expects positive-only observed labels")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo, hi = logit(INIT_UNOBSERVED_RANGE[0]), logit(INIT_UNOBSERVED_RANGE[1])
    phi = rng.uniform(lo, hi, size=observed.shape)
    phi[observed == POSITIVE] = logit(INIT_POSITIVE_ESTIMATE)
    return LabelEstimatorState(phi)


def phi_rows_for_batch(state: LabelEstimatorState, indices: np.ndarray) -> np.ndarray:
    """Estimate rows for a batch (sigmoid lookup; writes go through the trainer)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= state.n_examples):
        raise DataError("batch indices out of range for the estimate table")
    return np.clip(expit(state.phi[indices]), EPSILON_CLAMP, 1.0 - EPSILON_CLAMP)


def _soft_bce(predictions: np.ndarray, targets: np.ndarray) -> LossResult:
    """BCE against soft targets in (0,1), normalized by classes and batch."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != np.shape(predictions):
        raise DataError(
            f"targets shape {targets.shape} does not match predictions "
            f"{np.shape(predictions)}"
        )
    coeffs = BceCoefficients(targets, 1.0 - targets, 1.0 / targets.shape[1])
    return weighted_bce(predictions, coeffs)


def loss_prime(
    predictions: np.ndarray,
    targets: np.ndarray,
    observed: np.ndarray,
    k: float,
    epr_lambda: float,
) -> LossResult:
    """One-sided joint-training loss: BCE against frozen targets plus the
    positive-only/expected-count term on the predictions.

    The targets act purely as constants: the returned target gradient is
    identically zero (stop-gradient contract).
    """
    bce = _soft_bce(predictions, targets)
    epr = loss_epr(predictions, observed, k, epr_lambda)
    return LossResult(
        bce.value + epr.value,
        bce.grad_predictions + epr.grad_predictions,
        grad_estimates=np.zeros_like(np.asarray(targets, dtype=np.float64)),
    )


def loss_role(
    predictions: np.ndarray,
    estimates: np.ndarray,
    observed: np.ndarray,
    k: float,
    epr_lambda: float,
) -> LossResult:
    """Symmetrized joint loss over classifier predictions and label estimates.

    value = [prime(predictions | estimates) + prime(estimates | predictions)] / 2

    Each side's gradient comes only from the term where it appears in
    prediction position; the cross term sees it as a frozen target.
    """
    by_predictions = loss_prime(predictions, estimates, observed, k, epr_lambda)
    by_estimates = loss_prime(estimates, predictions, observed, k, epr_lambda)
    return LossResult(
        0.5 * (by_predictions.value + by_estimates.value),
        0.5 * by_predictions.grad_predictions,
        grad_estimates=0.5 * by_estimates.grad_predictions,
    )
