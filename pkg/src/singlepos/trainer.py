"""Mini-batch training with Adam, per-epoch validation and grid search.

The classifier parameters and, for joint label estimation, the per-example
estimate table are updated simultaneously each batch: both gradients are
computed from the pre-step values, then applied in one combined step. The
estimate table uses a per-row Adam state so a row's moments advance only
when that row appears in a batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .data import DatasetBundle
from .evaluation import mean_average_precision
from .exceptions import ConfigError, DataError, NumericalError
from .losses import (
    COEFFICIENT_MODES,
    EPSILON_CLAMP,
    MODES_NEEDING_FULL,
    LossResult,
    build_coefficients,
    loss_epr,
    loss_pairwise_ranking,
    weighted_bce,
)
from .model import LinearModel, backward, forward, init_linear_model
from .role import LabelEstimatorState, init_phi, loss_role, phi_rows_for_batch

LOSS_MODES = COEFFICIENT_MODES + ("pr", "epr", "role")
MODES_NEEDING_K = ("epr", "role")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# tags for deriving independent seed streams from one run seed
_SEED_MODEL, _SEED_PHI, _SEED_EPOCH = 1, 2, 3


def derive_seed(base_seed: int, *tags: int) -> int:
    """Deterministic 64-bit child seed for a tagged sub-stream."""
    entropy = [int(base_seed) & 0xFFFFFFFFFFFFFFFF, *(int(t) for t in tags)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    loss_mode: str
    learning_rate: float
    batch_size: int
    epochs: int = 25
    phi_lr_multiplier: float = 10.0
    epr_lambda: float = 1.0
    k: float | None = None
    gamma: float | None = None
    eps_p: float | None = None
    eps_n: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(
                f"unknown loss mode {self.loss_mode!r}; choose from {LOSS_MODES}"
            )
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.epr_lambda < 0:
            raise ConfigError("epr_lambda must be >= 0")
        if self.phi_lr_multiplier <= 0:
            raise ConfigError("phi_lr_multiplier must be > 0")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_adam(shape: tuple[int, ...]) -> AdamState:
    return AdamState(np.zeros(shape), np.zeros(shape))


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float
) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter array."""
    if lr <= 0:
        raise ConfigError("learning rate must be > 0")
    grads = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(grads)):
        raise NumericalError(
            f"non-finite gradient at step {state.step + 1} "
            f"(|grad|_max={np.abs(grads).max()})"
        )
    state.step += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * grads**2
    m_hat = state.first_moment / (1 - state.beta1**state.step)
    v_hat = state.second_moment / (1 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class RowwiseAdamState:
    """Adam moments kept per row; a row's step counter advances only when
    that row receives a gradient (lookup-table parameters)."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    row_steps: np.ndarray
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_rowwise_adam(shape: tuple[int, int]) -> RowwiseAdamState:
    return RowwiseAdamState(
        np.zeros(shape), np.zeros(shape), np.zeros(shape[0], dtype=np.int64)
    )


def adam_step_rows(
    params: np.ndarray,
    row_grads: np.ndarray,
    rows: np.ndarray,
    state: RowwiseAdamState,
    lr: float,
) -> None:
    """In-place Adam update restricted to the given rows."""
    row_grads = np.asarray(row_grads, dtype=np.float64)
    if not np.all(np.isfinite(row_grads)):
        raise NumericalError("non-finite gradient for the estimate table")
    rows = np.asarray(rows, dtype=np.int64)
    state.row_steps[rows] += 1
    steps = state.row_steps[rows][:, None].astype(np.float64)
    m = state.beta1 * state.first_moment[rows] + (1 - state.beta1) * row_grads
    v = state.beta2 * state.second_moment[rows] + (1 - state.beta2) * row_grads**2
    state.first_moment[rows] = m
    state.second_moment[rows] = v
    m_hat = m / (1 - state.beta1**steps)
    v_hat = v / (1 - state.beta2**steps)
    params[rows] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    model: LinearModel
    opt_weights: AdamState
    opt_bias: AdamState
    estimator: LabelEstimatorState | None = None
    opt_phi: RowwiseAdamState | None = None


def init_train_state(bundle: DatasetBundle, config: TrainConfig) -> TrainState:
    if config.loss_mode in MODES_NEEDING_FULL and bundle.full_labels is None:
        raise DataError(f"loss mode {config.loss_mode!r} requires full training labels")
    if config.loss_mode in MODES_NEEDING_K and config.k is None:
        raise ConfigError(f"loss mode {config.loss_mode!r} requires k to be set")
    model = init_linear_model(
        bundle.n_features, bundle.n_classes, derive_seed(config.seed, _SEED_MODEL)
    )
    state = TrainState(
        config=config,
        model=model,
        opt_weights=init_adam(model.weights.shape),
        opt_bias=init_adam(model.bias.shape),
    )
    if config.loss_mode == "role":
        state.estimator = init_phi(
            bundle.observed_labels, derive_seed(config.seed, _SEED_PHI)
        )
        state.opt_phi = init_rowwise_adam(state.estimator.phi.shape)
    return state


def batch_loss(
    config: TrainConfig,
    predictions: np.ndarray,
    observed: np.ndarray,
    full: np.ndarray | None,
) -> LossResult:
    """Loss value and prediction gradient for one non-joint batch."""
    mode = config.loss_mode
    if mode in COEFFICIENT_MODES:
        coeffs = build_coefficients(
            mode, observed, full, gamma=config.gamma, eps_p=config.eps_p, eps_n=config.eps_n
        )
        return weighted_bce(predictions, coeffs)
    if mode == "pr":
        return loss_pairwise_ranking(predictions, observed)
    if mode == "epr":
        return loss_epr(predictions, observed, config.k, config.epr_lambda)
    raise ConfigError(f"loss mode {mode!r} is not a per-batch loss")


def epoch_order(seed: int, epoch: int, n_examples: int) -> np.ndarray:
    """Seeded training-index permutation for one epoch."""
    rng = np.random.default_rng(
        np.random.SeedSequence(derive_seed(seed, _SEED_EPOCH, epoch))
    )
    return rng.permutation(n_examples)


def train_epoch(state: TrainState, bundle: DatasetBundle, epoch: int) -> float:
    """Run one shuffled pass over the training set; returns the mean batch loss."""
    config = state.config
    order = epoch_order(config.seed, epoch, bundle.n_examples)
    batch_values = []
    for start in range(0, bundle.n_examples, config.batch_size):
        idx = order[start : start + config.batch_size]
        predictions = forward(state.model, bundle.features, idx)
        observed = bundle.observed_labels[idx]
        if config.loss_mode == "role":
            estimates = phi_rows_for_batch(state.estimator, idx)
            result = loss_role(
                predictions, estimates, observed, config.k, config.epr_lambda
            )
            grad_w, grad_b = backward(
                state.model, bundle.features, idx, result.grad_predictions
            )
            unclamped = (estimates > EPSILON_CLAMP) & (estimates < 1.0 - EPSILON_CLAMP)
            grad_phi = result.grad_estimates * estimates * (1.0 - estimates) * unclamped
            # simultaneous step: both gradients taken before either update
            state.model.weights = adam_step(
                state.model.weights, grad_w, state.opt_weights, config.learning_rate
            )
            state.model.bias = adam_step(
                state.model.bias, grad_b, state.opt_bias, config.learning_rate
            )
            adam_step_rows(
                state.estimator.phi,
                grad_phi,
                idx,
                state.opt_phi,
                config.learning_rate * config.phi_lr_multiplier,
            )
        else:
            full = None if bundle.full_labels is None else bundle.full_labels[idx]
            result = batch_loss(config, predictions, observed, full)
            grad_w, grad_b = backward(
                state.model, bundle.features, idx, result.grad_predictions
            )
            state.model.weights = adam_step(
                state.model.weights, grad_w, state.opt_weights, config.learning_rate
            )
            state.model.bias = adam_step(
                state.model.bias, grad_b, state.opt_bias, config.learning_rate
            )
        if not np.isfinite(result.value):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        batch_values.append(result.value)
    return float(np.mean(batch_values))


# ---------------------------------------------------------------------------
# validation-driven fitting
# ---------------------------------------------------------------------------

@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_map: float
    wall_ms: float


@dataclass
class FitResult:
    best_model: LinearModel
    best_estimator: LabelEstimatorState | None
    best_epoch: int
    history: list[EpochMetrics]
    final_model: LinearModel
    final_estimator: LabelEstimatorState | None


def select_best_epoch(val_maps: list[float]) -> int:
    """Index of the highest validation MAP; ties go to the earliest epoch."""
    if not val_maps:
        raise ValueError("no validation scores recorded")
    return int(np.argmax(val_maps))


def fit_with_validation(
    bundle_train: DatasetBundle,
    bundle_val: DatasetBundle,
    config: TrainConfig,
    epoch_hook=None,
) -> FitResult:
    """Train for the configured epochs and keep the best-validation checkpoint."""
    if bundle_val.full_labels is None:
        raise DataError("validation bundle must carry full labels")
    state = init_train_state(bundle_train, config)
    history: list[EpochMetrics] = []
    best_model = state.model.copy()
    best_estimator = None if state.estimator is None else state.estimator.copy()
    best_map = -np.inf
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        train_loss = train_epoch(state, bundle_train, epoch)
        val_predictions = forward(state.model, bundle_val.features)
        val_map = mean_average_precision(val_predictions, bundle_val.full_labels).map
        wall_ms = (time.perf_counter() - started) * 1000.0
        history.append(EpochMetrics(epoch, train_loss, val_map, wall_ms))
        if val_map > best_map:
            best_map = val_map
            best_epoch = epoch
            best_model = state.model.copy()
            best_estimator = None if state.estimator is None else state.estimator.copy()
        if epoch_hook is not None:
            epoch_hook(epoch, state)
    return FitResult(
        best_model=best_model,
        best_estimator=best_estimator,
        best_epoch=best_epoch,
        history=history,
        final_model=state.model,
        final_estimator=state.estimator,
    )


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class GridSearchResult:
    best_config: TrainConfig
    best_fit: FitResult
    rows: list[dict] = field(default_factory=list)


def make_grid(
    base: TrainConfig,
    learning_rates: list[float],
    batch_sizes: list[int] | None = None,
    epr_lambdas: list[float] | None = None,
) -> list[TrainConfig]:
    """Config lattice over learning rate, batch size and the count penalty weight."""
    batch_sizes = batch_sizes or [base.batch_size]
    epr_lambdas = epr_lambdas or [base.epr_lambda]
    return [
        replace(base, learning_rate=lr, batch_size=bs, epr_lambda=lam)
        for lr, bs, lam in product(learning_rates, batch_sizes, epr_lambdas)
    ]


def grid_search(
    bundle_train: DatasetBundle,
    bundle_val: DatasetBundle,
    configs: list[TrainConfig],
) -> GridSearchResult:
    """Fit every config and keep the one with the best validation MAP."""
    if not configs:
        raise ConfigError("grid search needs at least one config")
    rows = []
    best_config = None
    best_fit = None
    best_val = -np.inf
    for config in configs:
        fit = fit_with_validation(bundle_train, bundle_val, config)
        val_map = fit.history[fit.best_epoch - 1].val_map
        rows.append(
            {
                "loss_mode": config.loss_mode,
                "learning_rate": config.learning_rate,
                "batch_size": config.batch_size,
                "epr_lambda": config.epr_lambda,
                "best_epoch": fit.best_epoch,
                "val_map": val_map,
            }
        )
        if val_map > best_val:
            best_val, best_config, best_fit = val_map, config, fit
    return GridSearchResult(best_config, best_fit, rows)
