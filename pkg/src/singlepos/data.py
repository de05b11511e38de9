"""Dataset construction for partially observed multi-label training.

Feature matrices are dense float arrays. Label matrices come in two kinds:
full labels over {0, 1} and observed labels over {POSITIVE, NEGATIVE,
UNOBSERVED}. Corruption routines simulate the annotation regimes where only
a subset of the true labels is recorded (e.g. a single positive per row).

On-disk formats:
  * features: raw little-endian float32, row-major, with a ``<path>.json``
    sidecar ``{"n": ..., "d": ..., "dtype": "f32", "order": "row-major"}``
  * labels: headerless CSV of integers in {-1, 0, 1} (-1 = unobserved)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError

POSITIVE = 1
NEGATIVE = 0
UNOBSERVED = -1

#: single-positive corruption, one positive + one negative, one positive +
#: all true negatives, or keep every label observed
CORRUPTION_MODES = ("single_pos", "one_pos_one_neg", "one_pos_all_neg", "full")


def validate_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise DataError(f"feature matrix must be 2-D and non-empty, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise DataError("feature matrix contains non-finite values")
    return features


def validate_full_labels(labels: np.ndarray, n_examples: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
        raise DataError(f"label matrix must be 2-D and non-empty, got shape {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("full labels must take values in {0, 1}")
    if n_examples is not None and labels.shape[0] != n_examples:
        raise DataError(
            f"label rows ({labels.shape[0]}) do not match feature rows ({n_examples})"
        )
    return labels.astype(np.int8)


def validate_observed_labels(
    observed: np.ndarray, full: np.ndarray | None = None
) -> np.ndarray:
    observed = np.asarray(observed)
    if observed.ndim != 2:
        raise DataError(f"observed labels must be 2-D, got shape {observed.shape}")
    if not np.isin(observed, (UNOBSERVED, NEGATIVE, POSITIVE)).all():
        raise DataError("observed labels must take values in {-1, 0, 1}")
    observed = observed.astype(np.int8)
    if full is not None:
        if observed.shape != full.shape:
            raise DataError(
                f"observed shape {observed.shape} does not match full labels {full.shape}"
            )
        if np.any((observed == POSITIVE) & (full == 0)):
            raise DataError("observed positive contradicts a true negative")
        if np.any((observed == NEGATIVE) & (full == 1)):
            raise DataError("observed negative contradicts a true positive")
    return observed


def record_all_observed(full_labels: np.ndarray) -> np.ndarray:
    """Observed-label matrix that records every true label (no corruption)."""
    return np.asarray(full_labels, dtype=np.int8).copy()


@dataclass(frozen=True)
class DatasetBundle:
    """Features plus label views for one split.

    ``full_labels`` may be absent for a train split loaded from an
    observed-only file; validation and test splits always carry it.
    All arrays are treated as immutable after construction.
    """

    features: np.ndarray
    observed_labels: np.ndarray
    full_labels: np.ndarray | None = None
    split_tag: str = "train"

    def __post_init__(self):
        features = validate_features(self.features)
        full = None
        if self.full_labels is not None:
            full = validate_full_labels(self.full_labels, features.shape[0])
        observed = validate_observed_labels(self.observed_labels, full)
        if observed.shape[0] != features.shape[0]:
            raise DataError(
                f"observed label rows ({observed.shape[0]}) do not match "
                f"feature rows ({features.shape[0]})"
            )
        if self.split_tag not in ("train", "val", "test"):
            raise DataError(f"unknown split tag {self.split_tag!r}")
        if self.split_tag in ("val", "test") and full is None:
            raise DataError(f"{self.split_tag} bundles must carry full labels")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "observed_labels", observed)
        object.__setattr__(self, "full_labels", full)

    @property
    def n_examples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.observed_labels.shape[1]

    def subset(self, indices: np.ndarray, split_tag: str | None = None) -> "DatasetBundle":
        indices = np.asarray(indices)
        return DatasetBundle(
            features=self.features[indices],
            observed_labels=self.observed_labels[indices],
            full_labels=None if self.full_labels is None else self.full_labels[indices],
            split_tag=self.split_tag if split_tag is None else split_tag,
        )

    def with_observed(self, observed: np.ndarray) -> "DatasetBundle":
        return replace(self, observed_labels=observed)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_features(path: str | Path, features: np.ndarray) -> None:
    """Write features as raw little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    features = validate_features(features)
    n, d = features.shape
    features.astype("<f4").tofile(path)
    sidecar = {"n": int(n), "d": int(d), "dtype": "f32", "order": "row-major"}
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def load_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    sidecar_path = _sidecar_path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    if not sidecar_path.exists():
        raise DataError(f"feature sidecar not found: {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text())
        n, d = int(sidecar["n"]), int(sidecar["d"])
        dtype, order = sidecar["dtype"], sidecar["order"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed feature sidecar {sidecar_path}: {exc}") from exc
    if dtype != "f32" or order != "row-major":
        raise DataError(f"unsupported feature encoding dtype={dtype!r} order={order!r}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != n * d:
        raise DataError(
            f"feature file {path} holds {raw.size} values, sidecar promises {n}x{d}"
        )
    return validate_features(raw.reshape(n, d))


def save_labels(path: str | Path, labels: np.ndarray) -> None:
    """Write a label matrix as headerless integer CSV."""
    labels = np.asarray(labels)
    if not np.isin(labels, (UNOBSERVED, NEGATIVE, POSITIVE)).all():
        raise DataError("labels must take values in {-1, 0, 1}")
    np.savetxt(Path(path), labels.astype(np.int64), fmt="%d", delimiter=",")


def load_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"label file not found: {path}")
    try:
        labels = np.loadtxt(path, dtype=np.int64, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"malformed label file {path}: {exc}") from exc
    if not np.isin(labels, (UNOBSERVED, NEGATIVE, POSITIVE)).all():
        raise DataError(f"label file {path} contains values outside {{-1, 0, 1}}")
    return labels.astype(np.int8)


def load_dataset(features_path: str | Path, labels_path: str | Path) -> DatasetBundle:
    """Load a feature file and a label CSV into one bundle.

    A label file without any -1 entries is treated as fully labeled: the
    bundle carries full labels and an observed view that records all of
    them. Files containing -1 yield an observed-only bundle.
    """
    features = load_features(features_path)
    labels = load_labels(labels_path)
    if labels.shape[0] != features.shape[0]:
        raise DataError(
            f"label rows ({labels.shape[0]}) do not match feature rows "
            f"({features.shape[0]})"
        )
    if np.any(labels == UNOBSERVED):
        return DatasetBundle(features, observed_labels=labels)
    full = validate_full_labels(labels)
    return DatasetBundle(features, record_all_observed(full), full)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def synthesize_dataset(
    n: int,
    d: int,
    n_classes: int,
    target_k: float,
    seed: int,
    calibration_tol: float = 0.1,
) -> DatasetBundle:
    """Generate a linearly structured multi-label dataset.

    Each class is a random linear direction; a row is positive for a class
    when its score clears a per-class threshold. Thresholds are calibrated
    so the mean number of positives per row lands within
    ``calibration_tol`` (relative) of ``target_k``, and rows that end up
    with zero positives are redrawn so every row keeps at least one.
    """
    if n < 1 or d < 1 or n_classes < 1:
        raise ConfigError("n, d and n_classes must all be >= 1")
    if not (0.0 < target_k < n_classes):
        raise ConfigError(
            f"target_k must lie strictly between 0 and n_classes, got {target_k}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    directions = rng.normal(size=(n_classes, d)) / np.sqrt(d)

    def draw_rows(count: int) -> np.ndarray:
        # quantize to float32 so a save/load round trip is bitwise exact
        return rng.normal(size=(count, d)).astype(np.float32).astype(np.float64)

    features = draw_rows(n)
    rate = target_k / n_classes
    for _ in range(30):
        scores = features @ directions.T
        thresholds = np.quantile(scores, 1.0 - rate, axis=0)
        labels = (scores > thresholds[None, :]).astype(np.int8)
        for _ in range(200):
            empty = np.flatnonzero(labels.sum(axis=1) == 0)
            if empty.size == 0:
                break
            features[empty] = draw_rows(empty.size)
            labels[empty] = (
                features[empty] @ directions.T > thresholds[None, :]
            ).astype(np.int8)
        else:
            raise DataError("synthetic generator could not clear zero-positive rows")
        mean_positives = labels.sum() / n
        if abs(mean_positives - target_k) <= calibration_tol * target_k:
            return DatasetBundle(features, record_all_observed(labels), labels)
        # adjust the per-class positive rate toward the target and retry
        rate = min(max(rate * target_k / mean_positives, 1e-9), 1.0 - 1e-9)
    raise DataError(
        f"threshold calibration failed to reach target_k={target_k} "
        f"within {calibration_tol:.0%}"
    )


# ---------------------------------------------------------------------------
# label corruption
# ---------------------------------------------------------------------------

def _pick_uniform_marked(rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    """Uniformly pick one True column per row of a boolean mask."""
    counts = mask.sum(axis=1)
    picks = rng.integers(0, counts)
    cumulative = np.cumsum(mask, axis=1)
    return np.argmax(cumulative > picks[:, None], axis=1)


def corrupt_single_positive(full_labels: np.ndarray, seed: int) -> np.ndarray:
    """Keep one uniformly chosen positive per row; hide everything else."""
    full = validate_full_labels(full_labels)
    zero_rows = np.flatnonzero(full.sum(axis=1) == 0)
    if zero_rows.size:
        raise DataError(
            f"single-positive corruption requires >= 1 positive per row; "
            f"row {zero_rows[0]} has none"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chosen = _pick_uniform_marked(rng, full == 1)
    observed = np.full(full.shape, UNOBSERVED, dtype=np.int8)
    observed[np.arange(full.shape[0]), chosen] = POSITIVE
    return observed


def corrupt_partial(full_labels: np.ndarray, mode: str, seed: int) -> np.ndarray:
    """Keep one positive plus either one or all of the true negatives."""
    if mode not in ("one_pos_one_neg", "one_pos_all_neg"):
        raise ConfigError(f"unknown partial corruption mode {mode!r}")
    full = validate_full_labels(full_labels)
    if np.any(full.sum(axis=1) == 0):
        raise DataError("partial corruption requires >= 1 positive per row")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chosen_pos = _pick_uniform_marked(rng, full == 1)
    observed = np.full(full.shape, UNOBSERVED, dtype=np.int8)
    rows = np.arange(full.shape[0])
    if mode == "one_pos_all_neg":
        observed[full == 0] = NEGATIVE
    else:
        negatives = full == 0
        if np.any(negatives.sum(axis=1) == 0):
            raise DataError("one_pos_one_neg requires >= 1 negative per row")
        chosen_neg = _pick_uniform_marked(rng, negatives)
        observed[rows, chosen_neg] = NEGATIVE
    observed[rows, chosen_pos] = POSITIVE
    return observed


def apply_corruption(bundle: DatasetBundle, mode: str, seed: int) -> DatasetBundle:
    """Replace a bundle's observed labels according to a corruption mode."""
    if mode not in CORRUPTION_MODES:
        raise ConfigError(f"unknown corruption mode {mode!r}; choose from {CORRUPTION_MODES}")
    if bundle.full_labels is None:
        raise DataError("corruption needs full labels")
    if mode == "full":
        observed = record_all_observed(bundle.full_labels)
    elif mode == "single_pos":
        observed = corrupt_single_positive(bundle.full_labels, seed)
    else:
        observed = corrupt_partial(bundle.full_labels, mode, seed)
    return bundle.with_observed(observed)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_train_val(
    bundle: DatasetBundle, val_fraction: float, seed: int
) -> tuple[DatasetBundle, DatasetBundle]:
    """Uniform disjoint split; the withheld part becomes a fully labeled val set."""
    if not (0.0 < val_fraction < 1.0):
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    if bundle.full_labels is None:
        raise DataError("splitting requires full labels for the withheld part")
    n = bundle.n_examples
    n_val = int(round(val_fraction * n))
    if n_val < 1 or n_val >= n:
        raise DataError(
            f"val_fraction={val_fraction} yields an empty split for n={n}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(n)
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    train = bundle.subset(train_idx)
    held = bundle.subset(val_idx)
    val = DatasetBundle(
        features=held.features,
        observed_labels=record_all_observed(held.full_labels),
        full_labels=held.full_labels,
        split_tag="val",
    )
    return train, val
