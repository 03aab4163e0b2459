"""Ranking metrics for anomaly scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    roc_auc: float
    average_precision: float
    n_pos: int
    n_neg: int


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0/1")
    return y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney ROC-AUC; tied scores get half credit."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels)
    if s.shape != y.shape:
        raise MetricError(f"scores {s.shape} and labels {y.shape} differ in shape")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise AP over the descending-score ranking.

    Tied scores keep their input order (stable sort), which makes the value
    order-dependent; a warning is emitted when ties are present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(labels)
    if s.shape != y.shape:
        raise MetricError(f"scores {s.shape} and labels {y.shape} differ in shape")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("average precision needs at least one positive")
    if np.unique(s).size < s.size:
        warnings.warn("tied scores in average_precision; ties resolved by input order", stacklevel=2)
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, s.size + 1)
    return float(precision[hits].sum() / n_pos)


def evaluate(scores, labels) -> MetricsReport:
    y = _binary(labels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ap = average_precision(scores, y)
    return MetricsReport(roc_auc(scores, y), ap, int(y.sum()), int((~y).sum()))
