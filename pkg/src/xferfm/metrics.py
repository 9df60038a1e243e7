"""Evaluation metrics: rank-based AUC with tie half-credit, and RMSE."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    """The metric is undefined for the given inputs."""


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties half).

    Computed from midranks in O(n log n); contractually equal to the
    all-pairs Mann-Whitney definition.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: need at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rmse(scores, labels) -> float:
    """Root mean squared error of probabilistic predictions against labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels must have equal length")
    if len(scores) == 0:
        raise MetricError("RMSE undefined on empty input")
    return float(np.sqrt(np.mean((scores - labels) ** 2)))
