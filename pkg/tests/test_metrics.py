"""AUC and RMSE against the all-pairs oracle."""

import numpy as np
import pytest

from xferfm.metrics import MetricError, auc, rmse

from conftest import oracle_auc


def test_auc_worked_example():
    assert auc([0.8, 0.6, 0.4, 0.2], [1, 0, 1, 0]) == 0.75


def test_auc_perfect_and_inverted():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0


def test_auc_all_tied_is_half():
    assert auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5


def test_auc_matches_all_pairs_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0], labels[-1] = 0, 1
        # coarse quantization forces plenty of exact ties
        scores = np.round(rng.random(n), 1)
        assert auc(scores, labels) == pytest.approx(
            oracle_auc(scores, labels), abs=1e-12)


def test_auc_degenerate_inputs_raise():
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [0, 0])
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1])


def test_rmse_basic():
    assert rmse([1.0, 0.0], [1, 0]) == 0.0
    assert rmse([0.5, 0.5], [1, 0]) == pytest.approx(0.5)
    with pytest.raises(MetricError):
        rmse([], [])
