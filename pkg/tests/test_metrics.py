import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admoe.metrics import MetricError, average_precision, evaluate, roc_auc


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def prefix_scan_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])  # sorted() is stable
    hits, ap, n_pos = 0, 0.0, sum(labels)
    prev_recall = 0.0
    for rank, i in enumerate(order, start=1):
        hits += labels[i]
        recall = hits / n_pos
        ap += (recall - prev_recall) * hits / rank
        prev_recall = recall
    return ap


def test_perfect_and_tied_auc():
    y = np.array([0, 1, 0, 1, 1])
    assert roc_auc(y.astype(float), y) == 1.0
    assert roc_auc(np.ones(5), y) == 0.5


def test_single_class_rejected():
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        average_precision([0.1, 0.2], [0, 0])


def test_auc_matches_pair_count_oracle(rng):
    scores = np.round(rng.normal(size=200), 1)  # rounding forces ties
    labels = rng.integers(0, 2, size=200)
    assert roc_auc(scores, labels) == pytest.approx(pair_count_auc(scores, labels), abs=1e-12)


def test_ap_closed_forms():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    n = 7
    scores = np.arange(n, 0, -1, dtype=float)
    labels = np.zeros(n, dtype=int)
    labels[-1] = 1
    assert average_precision(scores, labels) == pytest.approx(1 / n, abs=1e-15)


def test_ap_matches_prefix_scan(rng):
    scores = rng.normal(size=100)
    labels = rng.integers(0, 2, size=100)
    assert average_precision(scores, labels) == pytest.approx(
        prefix_scan_ap(list(scores), list(labels)), abs=1e-12
    )


def test_ap_warns_on_ties():
    with pytest.warns(UserWarning, match="tied"):
        average_precision([0.5, 0.5, 0.1], [1, 0, 0])


scores_labels = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
).filter(lambda sl: 0 < sum(sl[1]) < len(sl[1]))


@settings(max_examples=100, deadline=None)
@given(scores_labels)
def test_auc_invariant_under_increasing_transform(sl):
    s, y = np.array(sl[0]), np.array(sl[1])
    # power-of-two slopes keep the map exact in floating point
    t = np.where(s > 0, 4.0 * s, 0.5 * s)
    assert roc_auc(t, y) == pytest.approx(roc_auc(s, y), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores_labels)
def test_auc_negation_complements(sl):
    s, y = np.array(sl[0]), np.array(sl[1])
    if np.unique(s).size < s.size:
        return
    assert roc_auc(s, y) + roc_auc(-s, y) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores_labels, st.randoms(use_true_random=False))
def test_joint_shuffle_invariance(sl, rnd):
    s, y = np.array(sl[0]), np.array(sl[1])
    perm = list(range(s.size))
    rnd.shuffle(perm)
    assert roc_auc(s[perm], y[perm]) == pytest.approx(roc_auc(s, y), abs=1e-12)
    if np.unique(s).size == s.size:
        assert average_precision(s[perm], y[perm]) == pytest.approx(average_precision(s, y), abs=1e-12)


def test_evaluate_report(rng):
    y = np.array([0, 0, 1, 1, 0])
    s = rng.normal(size=5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = evaluate(s, y)
    assert (rep.n_pos, rep.n_neg) == (2, 3)
    assert rep.roc_auc == roc_auc(s, y)
