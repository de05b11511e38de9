"""Ranking metrics and diagnostics for multi-label predictions.

Average precision uses the rank-based convention: sort by descending score
with ties broken by ascending original index, then average the precision
at each positive's rank. Classes without a positive are excluded from the
mean and reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import UNOBSERVED
from .exceptions import DataError


@dataclass(frozen=True)
class EvalReport:
    per_class_ap: np.ndarray  # NaN for classes without positives
    map: float
    n_examples: int
    skipped_classes: list[int] = field(default_factory=list)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one ranked list; requires at least one positive label."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be 1-D vectors of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be binary")
    n_positive = int(labels.sum())
    if n_positive == 0:
        raise DataError("average precision is undefined without positives")
    # descending score, ties resolved by ascending original index
    order = np.lexsort((np.arange(scores.size), -scores))
    sorted_labels = labels[order].astype(np.float64)
    cumulative = np.cumsum(sorted_labels)
    ranks = np.arange(1, scores.size + 1, dtype=np.float64)
    at_positives = sorted_labels > 0
    return float(np.mean(cumulative[at_positives] / ranks[at_positives]))


def mean_average_precision(predictions: np.ndarray, labels: np.ndarray) -> EvalReport:
    """Macro-average of per-class AP over classes that have a positive."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 2:
        raise DataError(
            f"prediction shape {predictions.shape} does not match labels {labels.shape}"
        )
    n_examples, n_classes = labels.shape
    per_class = np.full(n_classes, np.nan)
    skipped = []
    for class_index in range(n_classes):
        class_labels = labels[:, class_index]
        if class_labels.sum() == 0:
            skipped.append(class_index)
            continue
        per_class[class_index] = average_precision(predictions[:, class_index], class_labels)
    if len(skipped) == n_classes:
        raise DataError("no class has a positive label")
    macro = float(np.nanmean(per_class))
    return EvalReport(per_class, macro, n_examples, skipped)


def label_recovery_map(predictions: np.ndarray, full_labels: np.ndarray) -> EvalReport:
    """MAP of training-set predictions against the uncorrupted label matrix."""
    if full_labels is None:
        raise DataError("label recovery needs the full label matrix")
    return mean_average_precision(predictions, full_labels)


def unobserved_positive_histogram(
    predictions: np.ndarray,
    full_labels: np.ndarray,
    observed_labels: np.ndarray,
    n_bins: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized histogram of predictions at hidden positives.

    Collects prediction values at entries that are truly positive but
    unobserved, bins them uniformly over [0, 1], and returns
    (masses summing to 1, bin edges of length n_bins + 1).
    """
    if n_bins < 2:
        raise DataError("histogram needs at least 2 bins")
    predictions = np.asarray(predictions, dtype=np.float64)
    full_labels = np.asarray(full_labels)
    observed_labels = np.asarray(observed_labels)
    if not (predictions.shape == full_labels.shape == observed_labels.shape):
        raise DataError("predictions, full and observed labels must share a shape")
    mask = (full_labels == 1) & (observed_labels == UNOBSERVED)
    values = predictions[mask]
    if values.size == 0:
        raise DataError("no unobserved positives to histogram")
    counts, edges = np.histogram(values, bins=n_bins, range=(0.0, 1.0))
    return counts / counts.sum(), edges
