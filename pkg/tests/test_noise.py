import numpy as np
import pytest

from admoe.classifiers import BoostedStumps, DecisionTree, LogisticRegression, NotFittedError, RandomForest
from admoe.noise import (
    QUALITY_GRID,
    GeneratorKind,
    Mechanism,
    NoiseError,
    NoiseSpec,
    WeakGenerator,
    fit_weak_generator,
    flip_labels,
    generate_inaccurate_labels,
    label_quality,
    stratified_subsample,
    synthesize,
)


def blobs(seed, n=2000, d=5, rate=0.1, gap=4.0):
    r = np.random.default_rng(seed)
    y = (r.random(n) < rate).astype(int)
    x = r.normal(size=(n, d))
    x[:, 0] += gap * y
    return x, y


def test_quality_grid():
    assert QUALITY_GRID == (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


@pytest.mark.parametrize("rate, expected", [(0.0, "same"), (1.0, "inverted")])
def test_flip_extremes(rng, rate, expected):
    y = rng.integers(0, 2, size=100)
    out = flip_labels(y, rate, rng)
    assert (out == (y if expected == "same" else 1 - y)).all()


def test_flip_rate_statistics():
    n, rate = 10_000, 0.2
    y = np.zeros(n, dtype=int)
    flipped = flip_labels(y, rate, np.random.default_rng(0)).sum()
    sd = np.sqrt(n * rate * (1 - rate))
    assert abs(flipped - n * rate) < 3 * sd


def test_flip_rejects_bad_rate(rng):
    with pytest.raises(NoiseError):
        flip_labels([0, 1], 1.5, rng)


def test_stratified_subsample_keeps_both_classes():
    y = np.array([1] * 5 + [0] * 995)
    idx = stratified_subsample(y, 20, np.random.default_rng(0))
    assert idx.size == 20 and y[idx].sum() >= 1


def test_subsample_respects_pool():
    x, y = blobs(0)
    pool = np.arange(1000)
    g = fit_weak_generator("logistic_regression", x, y, 0.05, np.random.default_rng(1), pool)
    assert g.subsample.max() < 1000


def test_subsample_is_deterministic():
    x, y = blobs(0)
    a = fit_weak_generator("decision_tree", x, y, 0.05, np.random.default_rng(3))
    b = fit_weak_generator("decision_tree", x, y, 0.05, np.random.default_rng(3))
    assert a.subsample.tolist() == b.subsample.tolist()


def test_tiny_fraction_rejected():
    x, y = blobs(0, n=100)
    with pytest.raises(NoiseError):
        fit_weak_generator("decision_tree", x, y, 0.05, np.random.default_rng(0))


def test_full_fraction_depth3_tree_fits_separable():
    r = np.random.default_rng(0)
    x = r.uniform(-1, 1, size=(400, 3))
    y = (x[:, 1] > 0.2).astype(int)
    tree = DecisionTree(max_depth=3, rng=r).fit(x, y)
    assert ((tree.predict_proba(x) >= 0.5) == y).mean() >= 0.95


def test_kinds_disagree_on_probe():
    x, y = blobs(1)
    rng = np.random.default_rng(0)
    probe = rng.normal(size=(300, 5)) * 2
    a = fit_weak_generator("logistic_regression", x, y, 0.05, np.random.default_rng(2))
    b = fit_weak_generator("decision_tree", x, y, 0.05, np.random.default_rng(2))
    assert a.subsample.tolist() == b.subsample.tolist()
    labels = generate_inaccurate_labels([a, b], probe)
    assert (labels[:, 0] != labels[:, 1]).sum() > 0


def test_unfitted_generator_rejected():
    g = WeakGenerator(GeneratorKind.DECISION_TREE, DecisionTree(), np.arange(3))
    with pytest.raises(NotFittedError):
        generate_inaccurate_labels([g], np.zeros((2, 2)))


@pytest.mark.parametrize("model", [LogisticRegression(), DecisionTree(), RandomForest(), BoostedStumps()])
def test_classifiers_refuse_predict_before_fit(model):
    with pytest.raises(NotFittedError):
        model.predict_proba(np.zeros((1, 2)))


def test_perfect_generator_quality():
    x, y = blobs(2, gap=10.0)
    g = fit_weak_generator("logistic_regression", x, y, 1.0, np.random.default_rng(0))
    col = generate_inaccurate_labels([g], x)[:, 0]
    assert label_quality(col, y) >= 0.95


def test_duplicate_generators_identical_columns():
    x, y = blobs(3)
    g = fit_weak_generator("random_forest", x, y, 0.1, np.random.default_rng(0))
    labels = generate_inaccurate_labels([g, g], x)
    assert (labels[:, 0] == labels[:, 1]).all()


def test_label_quality_closed_forms():
    y = np.array([0, 1, 0, 1])
    assert label_quality(y, y) == 1.0
    assert label_quality(1 - y, y) == 0.0
    assert label_quality(np.ones(4), y) == 0.5


def test_more_ground_truth_gives_better_labels():
    qualities = {}
    for frac in (0.05, 0.5):
        per_seed = []
        for seed in range(4):
            x, y = blobs(seed, n=3000, d=8, rate=0.05, gap=2.5)
            labels = synthesize(NoiseSpec(gt_fraction=frac, seed=seed), x, y)
            per_seed.append(np.mean([label_quality(labels[:, i], y) for i in range(4)]))
        qualities[frac] = np.mean(per_seed)
    assert 0.5 < qualities[0.05] < qualities[0.5]


def test_synthesize_deterministic_and_shaped():
    x, y = blobs(4)
    spec = NoiseSpec(gt_fraction=0.1, seed=7)
    a = synthesize(spec, x, y)
    assert a.shape == (x.shape[0], 4)
    assert a.tobytes() == synthesize(spec, x, y).tobytes()


def test_flipping_mechanism():
    y = np.random.default_rng(0).integers(0, 2, 500)
    spec = NoiseSpec(mechanism=Mechanism.LABEL_FLIPPING, rates=[0.0, 1.0], seed=1)
    labels = synthesize(spec, np.zeros((500, 1)), y)
    assert (labels[:, 0] == y).all() and (labels[:, 1] == 1 - y).all()


def test_spec_round_trip_and_unknown_fields():
    spec = NoiseSpec(gt_fraction=0.2, seed=3)
    assert NoiseSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(NoiseError):
        NoiseSpec.from_dict({"bogus": 1})
    with pytest.raises(NoiseError):
        NoiseSpec(gt_fraction=0.0)
