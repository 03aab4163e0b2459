from dataclasses import replace

import numpy as np
import pytest
from conftest import max_rel_error, numeric_grad
from hypothesis import given, settings
from hypothesis import strategies as st

from admoe.baselines import (
    CrowdLayerModel,
    EnsembleBundle,
    EnsembleMode,
    baseline_mlp,
    hyper_ensemble,
    majority_vote,
    train_crowd_layer,
    train_single_noisy,
)
from admoe.data import Dataset, split_70_25_5
from admoe.model import AdmoeModel, TrainConfig


def noisy_set(seed, n=400, t=3):
    r = np.random.default_rng(seed)
    gt = (r.random(n) < 0.2).astype(int)
    x = r.normal(size=(n, 4)) + 2.0 * gt[:, None]
    noisy = np.column_stack([np.where(r.random(n) < 0.1 * (i + 1), 1 - gt, gt) for i in range(t)])
    return Dataset(x, gt, noisy)


def test_vote_rows():
    assert majority_vote([[1, 1, 0]]).tolist() == [1]
    assert majority_vote([[1, 0]]).tolist() == [1]
    assert majority_vote([[1, 0, 0]]).tolist() == [0]


def test_vote_matches_counting_oracle(rng):
    y = rng.integers(0, 2, size=(100, 5))
    expected = [1 if sum(row) * 2 >= len(row) else 0 for row in y.tolist()]
    assert majority_vote(y).tolist() == expected


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_vote_permutation_invariant(t, seed):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, size=(20, t))
    assert (majority_vote(y) == majority_vote(y[:, r.permutation(t)])).all()


def test_ensemble_modes(rng):
    class Const:
        def __init__(self, s):
            self.s = s

        def score(self, x):
            return self.s

    scores = rng.uniform(size=(3, 7))
    bundle = EnsembleBundle([(Const(s), None) for s in scores])
    x = np.zeros((7, 2))
    expected = [sum(col) / 3 for col in scores.T.tolist()]
    np.testing.assert_allclose(hyper_ensemble(bundle, x), expected, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(hyper_ensemble(bundle, x, EnsembleMode.MAX), scores.max(axis=0))
    single = EnsembleBundle([(Const(scores[0]), None)])
    np.testing.assert_array_equal(hyper_ensemble(single, x), scores[0])


def test_single_noisy_index_checked():
    ds = noisy_set(0)
    split = split_70_25_5(ds.n, 0, ds.ground_truth, stratify=True)
    with pytest.raises(IndexError):
        train_single_noisy(ds, split, 3, TrainConfig(epochs=1))


def test_identical_sources_identical_single_runs():
    ds = noisy_set(1)
    ds = ds.with_sources(np.repeat(ds.noisy_labels[:, :1], 3, axis=1))
    split = split_70_25_5(ds.n, 0, ds.ground_truth, stratify=True)
    cfg = TrainConfig(epochs=3, batch_size=64, budget=500)
    outs = [train_single_noisy(ds, split, i, cfg)[0].score(ds.features).tobytes() for i in range(3)]
    assert outs[0] == outs[1] == outs[2]


def test_frozen_crowd_layer_t1_equals_single_noisy():
    ds = noisy_set(2, t=1)
    split = split_70_25_5(ds.n, 0, ds.ground_truth, stratify=True)
    cfg = TrainConfig(epochs=4, batch_size=64, budget=500, seed=3)
    single, rep_a = train_single_noisy(ds, split, 0, cfg)
    crowd, rep_b = train_crowd_layer(ds, split, cfg, freeze_heads=True)
    np.testing.assert_allclose(rep_b.train_loss, rep_a.train_loss, rtol=1e-12)
    np.testing.assert_allclose(crowd.score(ds.features), single.score(ds.features), rtol=1e-12)


def test_crowd_layer_gradients():
    r = np.random.default_rng(0)
    base = AdmoeModel(4, 0, 5, use_moe=False, labels_as_input=False, seed=1)
    model = CrowdLayerModel(base, 3)
    model.a[...] = r.uniform(0.5, 1.5, 3)
    model.b[...] = r.normal(size=3) * 0.3
    x = r.normal(size=(6, 4))
    y = r.integers(0, 2, size=(6, 3)).astype(float)
    w = np.ones_like(y)
    w[0, 1] = 0.0
    cfg = TrainConfig(alpha=0)

    def f():
        return model.loss_and_grads(x, None, y, w, cfg, None)[0]

    f()
    analytic = [g.copy() for _, _, g in model.named_parameters()]
    for (name, p, _), g in zip(model.named_parameters(), analytic):
        assert max_rel_error(g, numeric_grad(f, p)) < 1e-4, name


def test_baseline_mlp_has_no_label_inputs():
    m = baseline_mlp(16, TrainConfig())
    assert m.moe is None and not m.labels_as_input
    assert abs(m.n_params - 18000) / 18000 < 0.05


def test_crowd_state_round_trip():
    ds = noisy_set(3)
    base = baseline_mlp(ds.d, replace(TrainConfig(), budget=300))
    model = CrowdLayerModel(base, ds.t)
    state = model.get_state()
    model.a += 1.0
    model.set_state(state)
    assert (model.a == 1.0).all()
