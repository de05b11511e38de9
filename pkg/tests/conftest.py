import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from singlepos.data import corrupt_single_positive


def random_multilabel(rng, n_rows, n_classes, density=0.4):
    """Random full labels with at least one positive per row."""
    labels = (rng.random((n_rows, n_classes)) < density).astype(np.int8)
    for row in range(n_rows):
        if labels[row].sum() == 0:
            labels[row, rng.integers(n_classes)] = 1
    return labels


def random_instance(rng, n_rows=3, n_classes=6, low=0.05, high=0.95):
    """(full, single-positive observed, predictions) away from the clamp."""
    full = random_multilabel(rng, n_rows, n_classes)
    observed = corrupt_single_positive(full, int(rng.integers(1 << 62)))
    predictions = rng.uniform(low, high, (n_rows, n_classes))
    return full, observed, predictions


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
