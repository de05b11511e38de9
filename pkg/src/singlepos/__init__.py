"""Multi-label learning from single positive labels.

Losses for training multi-label classifiers when only a subset of labels
(down to one positive per example) is observed, plus the surrounding
machinery: corruption simulation, linear-classifier training, ranking
evaluation, and expected-positive-count estimation.
"""

from .data import (
    CORRUPTION_MODES,
    NEGATIVE,
    POSITIVE,
    UNOBSERVED,
    DatasetBundle,
    apply_corruption,
    corrupt_partial,
    corrupt_single_positive,
    load_dataset,
    split_train_val,
    synthesize_dataset,
)
from .evaluation import (
    EvalReport,
    average_precision,
    label_recovery_map,
    mean_average_precision,
    unobserved_positive_histogram,
)
from .exceptions import ConfigError, DataError, NumericalError
from .kestimate import KEstimate, empirical_k, k_confidence_interval
from .losses import (
    COEFFICIENT_MODES,
    EPSILON_CLAMP,
    BceCoefficients,
    LossResult,
    build_coefficients,
    epr_regularizer,
    expected_count,
    loss_epr,
    loss_pairwise_ranking,
    pseudo_negative_draw,
    weighted_bce,
)
from .model import LinearModel, backward, forward, init_linear_model
from .role import LabelEstimatorState, init_phi, loss_prime, loss_role, phi_rows_for_batch
from .trainer import (
    LOSS_MODES,
    AdamState,
    FitResult,
    TrainConfig,
    adam_step,
    fit_with_validation,
    grid_search,
    make_grid,
    train_epoch,
)

__version__ = "0.1.0"
