"""Loss functions for multi-label training with missing labels.

Every member of the binary cross-entropy family is expressed as a pair of
per-entry coefficient matrices (one weighting ``log f``, one weighting
``log(1 - f)``) fed through a single weighted-BCE kernel, so each variant
differs only in how its coefficients are built from the observed labels:

  =============  ======================================================
  mode           coefficients
  =============  ======================================================
  bce            positives weight log f, true negatives log(1 - f)
  bce_ls         bce with both targets smoothed by eps
  iu             observed positives / observed negatives only
  iun            observed positives plus all true negatives
  an             observed positives; everything unobserved as negative
  wan            an with negative terms down-weighted by gamma
  an_ls          an with symmetric label smoothing eps
  an_ls_asym     an with separate smoothing for positives and negatives
  bce_pos_only   unnormalized sum over observed positives only
  =============  ======================================================

Also provided: the hinge-based pairwise ranking loss, the batch-level
expected-positive-count regularizer and the loss combining it with the
positive-only BCE term, and the random pseudo-negative draw whose
expectation recovers ``wan``. All losses return their value together with
the analytic gradient with respect to the predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import NEGATIVE, POSITIVE, UNOBSERVED
from .exceptions import ConfigError, DataError

#: predictions are clamped into [EPSILON_CLAMP, 1 - EPSILON_CLAMP] upstream
EPSILON_CLAMP = 1e-7

#: default smoothing for the symmetric label-smoothing losses
DEFAULT_EPS = 0.1
#: default asymmetric smoothing: leave positives untouched, smooth negatives
DEFAULT_EPS_P = 0.0
DEFAULT_EPS_N = 0.1

COEFFICIENT_MODES = (
    "bce",
    "bce_ls",
    "iu",
    "iun",
    "an",
    "wan",
    "an_ls",
    "an_ls_asym",
    "bce_pos_only",
)

#: modes that require the full label matrix in addition to the observed one
MODES_NEEDING_FULL = ("bce", "bce_ls", "iun")


@dataclass(frozen=True)
class BceCoefficients:
    """Per-entry weights for the weighted-BCE kernel.

    ``pos_weights`` multiplies ``log f``, ``neg_weights`` multiplies
    ``log(1 - f)``; ``normalizer`` is 1/L for the class-normalized losses
    and 1 for the unnormalized positive-only sum.
    """

    pos_weights: np.ndarray
    neg_weights: np.ndarray
    normalizer: float

    def __post_init__(self):
        a = np.asarray(self.pos_weights, dtype=np.float64)
        b = np.asarray(self.neg_weights, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 2:
            raise ValueError("coefficient matrices must share a 2-D shape")
        if np.any(a < 0) or np.any(a > 1) or np.any(b < 0) or np.any(b > 1):
            raise ValueError("coefficients must lie in [0, 1]")
        object.__setattr__(self, "pos_weights", a)
        object.__setattr__(self, "neg_weights", b)


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_predictions: np.ndarray
    grad_estimates: np.ndarray | None = None


def _as_observed(observed: np.ndarray) -> np.ndarray:
    observed = np.asarray(observed)
    if observed.ndim != 2:
        raise DataError(f"observed labels must be 2-D, got shape {observed.shape}")
    if not np.isin(observed, (UNOBSERVED, NEGATIVE, POSITIVE)).all():
        raise DataError("observed labels must take values in {-1, 0, 1}")
    return observed


def build_coefficients(
    mode: str,
    observed: np.ndarray,
    full: np.ndarray | None = None,
    *,
    gamma: float | None = None,
    eps_p: float | None = None,
    eps_n: float | None = None,
) -> BceCoefficients:
    """Construct the weighted-BCE coefficients for one loss mode.

    ``gamma`` defaults to 1/(L-1). The smoothing parameters default per
    mode: symmetric smoothing uses eps_p = eps_n = 0.1, the asymmetric
    variant (eps_p, eps_n) = (0, 0.1). Smoothed targets follow the mapping
    (1, 0) -> (1 - eps/2, eps/2) applied independently per entry.
    """
    if mode not in COEFFICIENT_MODES:
        raise ConfigError(f"unknown loss mode {mode!r}; choose from {COEFFICIENT_MODES}")
    observed = _as_observed(observed)
    n_classes = observed.shape[1]
    if mode in MODES_NEEDING_FULL:
        if full is None:
            raise DataError(f"loss mode {mode!r} requires full labels")
        full = np.asarray(full)
        if full.shape != observed.shape:
            raise DataError("full labels must match the observed shape")

    pos = (observed == POSITIVE).astype(np.float64)
    neg = (observed == NEGATIVE).astype(np.float64)
    not_pos = 1.0 - pos
    normalizer = 1.0 / n_classes

    if mode in ("bce", "bce_ls"):
        y_pos = (full == 1).astype(np.float64)
        a, b = y_pos, 1.0 - y_pos
        if mode == "bce_ls":
            eps = _resolve_symmetric_eps(eps_p, eps_n)
            a, b = _smooth(a, eps), _smooth(b, eps)
    elif mode == "iu":
        a, b = pos, neg
    elif mode == "iun":
        a, b = pos, (full == 0).astype(np.float64)
    elif mode == "an":
        a, b = pos, not_pos
    elif mode == "wan":
        if gamma is None:
            if n_classes < 2:
                raise ConfigError("wan default gamma = 1/(L-1) needs >= 2 classes")
            gamma = 1.0 / (n_classes - 1)
        if not (0.0 < gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
        a, b = pos, gamma * not_pos
    elif mode == "an_ls":
        eps = _resolve_symmetric_eps(eps_p, eps_n)
        a, b = _smooth(pos, eps), _smooth(not_pos, eps)
    elif mode == "an_ls_asym":
        eps_p = DEFAULT_EPS_P if eps_p is None else eps_p
        eps_n = DEFAULT_EPS_N if eps_n is None else eps_n
        _check_eps(eps_p)
        _check_eps(eps_n)
        # positive entries are smoothed by eps_p, assumed negatives by eps_n
        a = (1.0 - eps_p / 2.0) * pos + (eps_n / 2.0) * not_pos
        b = (eps_p / 2.0) * pos + (1.0 - eps_n / 2.0) * not_pos
    else:  # bce_pos_only
        a, b = pos, np.zeros_like(pos)
        normalizer = 1.0
    return BceCoefficients(a, b, normalizer)


def _resolve_symmetric_eps(eps_p: float | None, eps_n: float | None) -> float:
    values = {v for v in (eps_p, eps_n) if v is not None}
    if len(values) > 1:
        raise ConfigError("symmetric label smoothing needs eps_p == eps_n")
    eps = values.pop() if values else DEFAULT_EPS
    _check_eps(eps)
    return eps


def _check_eps(eps: float) -> None:
    if not (0.0 <= eps < 1.0):
        raise ConfigError(f"smoothing parameter must lie in [0, 1), got {eps}")


def _smooth(target: np.ndarray, eps: float) -> np.ndarray:
    """Pull a {0,1} target toward 1/2: t -> (1 - eps/2) t + (eps/2) (1 - t)."""
    return (1.0 - eps / 2.0) * target + (eps / 2.0) * (1.0 - target)


def _check_predictions(predictions: np.ndarray, allow_unit_range: bool = False) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim != 2:
        raise ValueError(f"predictions must be 2-D, got shape {predictions.shape}")
    lo, hi = (0.0, 1.0) if allow_unit_range else (EPSILON_CLAMP, 1.0 - EPSILON_CLAMP)
    if predictions.size and (predictions.min() < lo or predictions.max() > hi):
        raise ValueError(f"predictions must lie within [{lo}, {hi}]")
    return predictions


def weighted_bce(predictions: np.ndarray, coeffs: BceCoefficients) -> LossResult:
    """Weighted binary cross-entropy, averaged over batch rows.

    value = -normalizer / |B| * sum_ni [A_ni log f_ni + B_ni log(1 - f_ni)]
    """
    f = _check_predictions(predictions)
    a, b = coeffs.pos_weights, coeffs.neg_weights
    if f.shape != a.shape:
        raise ValueError(f"predictions shape {f.shape} does not match coefficients {a.shape}")
    if f.shape[0] == 0:
        raise ValueError("empty batch")
    scale = coeffs.normalizer / f.shape[0]
    value = -scale * float(np.sum(a * np.log(f) + b * np.log1p(-f)))
    grad = -scale * (a / f - b / (1.0 - f))
    return LossResult(value, grad)


def loss_pairwise_ranking(predictions: np.ndarray, observed: np.ndarray) -> LossResult:
    """Hinge ranking loss over (observed positive, assumed negative) pairs.

    Every entry that is not an observed positive counts as negative. The
    pair sum is not normalized by the number of pairs; the subgradient at
    the hinge kink is 0.
    """
    f = _check_predictions(predictions, allow_unit_range=True)
    observed = _as_observed(observed)
    if f.shape != observed.shape:
        raise ValueError("predictions and observed labels must share a shape")
    n_rows = f.shape[0]
    if n_rows == 0:
        raise ValueError("empty batch")
    pos = observed == POSITIVE
    if np.any(~pos.any(axis=1)):
        raise DataError("pairwise ranking needs >= 1 observed positive per row")
    neg = ~pos
    value = 0.0
    grad = np.zeros_like(f)
    for row in range(n_rows):
        fp = f[row, pos[row]]
        fn = f[row, neg[row]]
        margins = 1.0 - fp[:, None] + fn[None, :]
        active = margins > 0.0
        value += float(margins[active].sum())
        grad[row, pos[row]] -= active.sum(axis=1) / n_rows
        grad[row, neg[row]] += active.sum(axis=0) / n_rows
    return LossResult(value / n_rows, grad)


def expected_count(predictions: np.ndarray) -> float:
    """Mean predicted number of positives per row: sum of f over the batch / |B|."""
    f = np.asarray(predictions, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("expected_count needs a non-empty 2-D batch")
    return float(f.sum() / f.shape[0])


def epr_regularizer(k_hat: float, k: float, n_classes: int) -> tuple[float, float]:
    """Squared normalized deviation ((k_hat - k)/L)^2 and its d/dk_hat."""
    if n_classes < 1:
        raise ConfigError("n_classes must be >= 1")
    if not (0.0 < k < n_classes):
        raise ConfigError(f"k must lie strictly between 0 and L={n_classes}, got {k}")
    deviation = (k_hat - k) / n_classes
    return deviation * deviation, 2.0 * (k_hat - k) / (n_classes * n_classes)


def loss_epr(
    predictions: np.ndarray, observed: np.ndarray, k: float, epr_lambda: float
) -> LossResult:
    """Positive-only BCE plus the expected-positive-count penalty.

    Unobserved entries receive gradient only through the count penalty;
    with ``epr_lambda = 0`` the trivial always-predict-positive solution
    is left unpenalized by construction.
    """
    if epr_lambda < 0.0:
        raise ConfigError(f"epr_lambda must be >= 0, got {epr_lambda}")
    observed = _as_observed(observed)
    if np.any(observed == NEGATIVE):
        raise DataError("expected-count regularization applies to positive-only labels")
    coeffs = build_coefficients("bce_pos_only", observed)
    base = weighted_bce(predictions, coeffs)
    k_hat = expected_count(predictions)
    penalty, dpenalty = epr_regularizer(k_hat, k, observed.shape[1])
    # d k_hat / d f_ni = 1/|B| at every entry
    grad = base.grad_predictions + epr_lambda * dpenalty / predictions.shape[0]
    return LossResult(base.value + epr_lambda * penalty, grad)


def pseudo_negative_draw(
    observed: np.ndarray, seed: int | np.random.Generator
) -> np.ndarray:
    """Flip one uniformly chosen unobserved entry per row to negative.

    Re-drawn each time a row appears in a batch; averaging the ignore-
    unobserved loss over draws reproduces ``wan`` with gamma = 1/(L-1).
    Accepts a Generator so repeated draws can share one stream.
    """
    observed = _as_observed(observed).astype(np.int8)
    unobserved = observed == UNOBSERVED
    if np.any(~unobserved.any(axis=1)):
        raise DataError("pseudo-negative draw needs >= 1 unobserved entry per row")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed)
    )
    counts = unobserved.sum(axis=1)
    picks = rng.integers(0, counts)
    cumulative = np.cumsum(unobserved, axis=1)
    chosen = np.argmax(cumulative > picks[:, None], axis=1)
    drawn = observed.copy()
    drawn[np.arange(observed.shape[0]), chosen] = NEGATIVE
    return drawn
