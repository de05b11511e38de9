"""Estimating the expected number of positive labels per example.

A small fully labeled sample of size M gives the point estimate
mean-row-sum; repeatedly drawing such samples (without replacement) from a
fully labeled set traces the distribution of that estimate, and its
empirical percentiles form the resampled confidence interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import validate_full_labels
from .exceptions import ConfigError, DataError

#: trials used for published-style intervals; tests shrink this
DEFAULT_TRIALS = 100_000

#: chunk of trials drawn at once (memory is chunk x n_examples)
_CHUNK = 512


@dataclass(frozen=True)
class KEstimate:
    k_hat: float  # estimate over the full provided set
    sample_size: int
    interval: tuple[float, float]
    trials: int


def empirical_k(full_labels: np.ndarray, indices: np.ndarray) -> float:
    """Mean number of positives per row over the sampled rows."""
    full = validate_full_labels(full_labels)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise DataError("empirical k needs a non-empty sample")
    if indices.min() < 0 or indices.max() >= full.shape[0]:
        raise DataError("sample indices out of range")
    return float(full[indices].sum(axis=1).mean())


def k_confidence_interval(
    full_labels: np.ndarray,
    sample_size: int,
    trials: int = DEFAULT_TRIALS,
    level: float = 0.9,
    seed: int = 0,
) -> KEstimate:
    """Percentile interval for the size-M estimate of k.

    Draws ``trials`` subsets of ``sample_size`` rows uniformly without
    replacement, computes the mean row-sum of each, and returns the
    ((1-level)/2, 1-(1-level)/2) percentiles (linear interpolation
    between order statistics).
    """
    full = validate_full_labels(full_labels)
    n = full.shape[0]
    if not (1 <= sample_size <= n):
        raise DataError(f"sample_size must lie in [1, {n}], got {sample_size}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if not (0.0 < level < 1.0):
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    row_sums = full.sum(axis=1).astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    estimates = np.empty(trials)
    done = 0
    while done < trials:
        chunk = min(_CHUNK, trials - done)
        keys = rng.random((chunk, n))
        subset = np.argpartition(keys, sample_size - 1, axis=1)[:, :sample_size]
        estimates[done : done + chunk] = row_sums[subset].mean(axis=1)
        done += chunk
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(estimates, [tail, 100.0 - tail])
    return KEstimate(
        k_hat=float(row_sums.mean()),
        sample_size=sample_size,
        interval=(float(lo), float(hi)),
        trials=trials,
    )
