import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admoe import metrics
from admoe.data import (
    DataError,
    Dataset,
    SyntheticSpec,
    load_csv,
    make_synthetic,
    save_csv,
    split_70_25_5,
    standardize,
)


def test_split_sizes_n8000():
    s = split_70_25_5(8000, 0)
    assert (s.train.size, s.test.size, s.val.size) == (5600, 2000, 400)


def test_split_sizes_n10000():
    s = split_70_25_5(10_000, 3)
    assert (s.train.size, s.test.size, s.val.size) == (7000, 2500, 500)


@settings(max_examples=50, deadline=None)
@given(st.integers(20, 3000), st.integers(0, 2**32 - 1))
def test_split_partitions_rows(n, seed):
    s = split_70_25_5(n, seed)
    parts = [set(s.train.tolist()), set(s.test.tolist()), set(s.val.tolist())]
    assert parts[0] | parts[1] | parts[2] == set(range(n))
    assert sum(len(p) for p in parts) == n
    assert len(parts[0]) == int(0.70 * n)


def test_split_deterministic():
    a, b = split_70_25_5(500, 9), split_70_25_5(500, 9)
    assert a.train.tolist() == b.train.tolist() and a.val.tolist() == b.val.tolist()


def test_split_rejects_tiny_and_single_class_val():
    with pytest.raises(DataError):
        split_70_25_5(10, 0)
    labels = np.zeros(100, dtype=int)
    labels[0] = 1
    with pytest.raises(DataError, match="single class"):
        split_70_25_5(100, 0, labels)


def test_stratified_split_keeps_both_classes_in_val():
    labels = np.zeros(1000, dtype=int)
    labels[:50] = 1
    s = split_70_25_5(1000, 0, labels, stratify=True)
    assert labels[s.val].sum() >= 1 and s.train.size + s.test.size + s.val.size == 1000


def test_standardize_uses_train_rows_only(rng):
    ds = Dataset(rng.normal(loc=3.0, size=(200, 3)))
    s = split_70_25_5(200, 0)
    out, mean, std = standardize(ds, s.train)
    np.testing.assert_allclose(out.features[s.train].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(mean, ds.features[s.train].mean(axis=0))
    assert np.abs(out.features[s.val].mean(axis=0)).max() > 0


def test_standardize_constant_column():
    ds = Dataset(np.ones((30, 2)))
    out, _, _ = standardize(ds, np.arange(20))
    assert np.isfinite(out.features).all()


def test_csv_round_trip_is_lossless(tmp_path, rng):
    x = rng.normal(size=(25, 3)) * 1e3
    x[0, 0] = np.nextafter(1.0, 2.0)
    mask = np.ones((25, 2), dtype=bool)
    mask[3, 1] = False
    ds = Dataset(x, rng.integers(0, 2, 25), rng.integers(0, 2, (25, 2)), label_mask=mask)
    path = tmp_path / "d.csv"
    save_csv(ds, path)
    back = load_csv(path)
    assert back.features.tobytes() == ds.features.tobytes()
    assert (back.ground_truth == ds.ground_truth).all()
    assert (back.label_mask == mask).all()
    assert (back.noisy_labels[mask] == ds.noisy_labels[mask]).all()


def test_csv_without_label_or_weak_columns(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("f_0,f_1\n1,2\n3,4\n")
    ds = load_csv(path)
    assert ds.ground_truth is None and ds.t == 0 and ds.n == 2


@pytest.mark.parametrize(
    "body, pattern",
    [
        ("f_0,label\n1.0,2\n", r":2: non-binary value '2' in column label"),
        ("f_0,weak_0\nabc,1\n", r":2: non-numeric value 'abc' in column f_0"),
        ("f_0,label\n1.0,1\n2.0\n", r":3: expected 2 cells"),
        ("f_0,g_0\n1,1\n", "unexpected columns"),
        ("g_0\n1\n", "no f_\\* feature columns"),
    ],
)
def test_csv_errors_name_row_and_column(tmp_path, body, pattern):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=pattern):
        load_csv(path)


def test_dataset_rejects_non_binary_and_mismatched_rows():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), ground_truth=[0, 1])
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), noisy_labels=[[0], [3]])


def test_synthetic_anomaly_count_exact():
    for n, rate in ((8000, 0.05), (1001, 0.03)):
        ds = make_synthetic(n, 6, rate, 0.5, seed=1)
        assert ds.ground_truth.sum() == round(n * rate)
        assert ds.features.shape == (n, 6)


def test_synthetic_is_deterministic():
    a = make_synthetic(500, 4, 0.05, 0.5, seed=2)
    b = make_synthetic(500, 4, 0.05, 0.5, seed=2)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.ground_truth.tobytes() == b.ground_truth.tobytes()


def best_axis_threshold_auc(ds):
    return max(
        max(a, 1 - a)
        for a in (metrics.roc_auc(ds.features[:, j], ds.ground_truth) for j in range(ds.d))
    )


def test_zero_difficulty_is_axis_separable():
    ds = make_synthetic(4000, 16, 0.05, 0.0, seed=0)
    assert best_axis_threshold_auc(ds) >= 0.99


def test_difficulty_increases_overlap():
    easy = make_synthetic(4000, 16, 0.05, 0.2, seed=0)
    hard = make_synthetic(4000, 16, 0.05, 0.9, seed=0)
    assert best_axis_threshold_auc(hard) < best_axis_threshold_auc(easy)


def test_synthetic_rejects_bad_rate():
    with pytest.raises(DataError):
        make_synthetic(100, 4, 0.6, 0.5)


def test_synthetic_spec_json_round_trip():
    spec = SyntheticSpec(n=100, d=4, difficulty=0.3, seed=5)
    assert SyntheticSpec.from_dict(json.loads(spec.to_json())) == spec
    with pytest.raises(DataError):
        SyntheticSpec.from_dict({"n": 10, "bogus": 1})
