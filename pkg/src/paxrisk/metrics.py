"""Ranking and probability metrics used throughout the study."""

from __future__ import annotations

import numpy as np

PROB_CLAMP = 1e-12


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the average of their positions."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Area under the ROC curve by the rank (Mann-Whitney) formulation.

    Ties between a positive and a negative score count one half. Raises
    MetricError when only one class is present (the caller records the
    fold as missing rather than zero).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if len(scores) != len(labels):
        raise MetricError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: both classes must be present")
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def log_loss(probs, labels) -> float:
    """Mean negative Bernoulli log-likelihood, natural log.

    Probabilities are clamped to [1e-12, 1 - 1e-12] for evaluation only.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(probs) != len(labels):
        raise MetricError("probs and labels must have equal length")
    if len(probs) == 0:
        raise MetricError("log loss undefined on empty input")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)))
