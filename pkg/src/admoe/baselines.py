"""Multi-source noisy-label baselines: SingleNoisy, LabelVote, HyperEnsemble, CrowdLayer."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, Split
from .model import AdmoeModel, TrainConfig, fit
from .nn import bce_loss, sigmoid


def baseline_mlp(n_features: int, config: TrainConfig, seed: int | None = None) -> AdmoeModel:
    """Plain MLP (no MoE, no label inputs) sized to the parameter budget."""
    return AdmoeModel.for_budget(
        n_features,
        0,
        config.budget,
        use_moe=False,
        labels_as_input=False,
        seed=config.seed if seed is None else seed,
    )


def train_single_noisy(dataset: Dataset, split: Split, source_index: int, config: TrainConfig):
    """Train the baseline MLP with one source as the (pseudo) clean target."""
    if not 0 <= source_index < dataset.t:
        raise IndexError(f"source index {source_index} out of range for t={dataset.t}")
    ds = replace(
        dataset.with_sources(dataset.noisy_labels[:, source_index]),
        label_mask=dataset.label_mask[:, [source_index]],
    )
    model = baseline_mlp(dataset.d, config)
    return model, fit(model, ds, split, config)


def majority_vote(noisy_labels) -> np.ndarray:
    """1 where at least half of the sources say 1 (ties go to the anomaly class)."""
    y = np.asarray(noisy_labels)
    if y.ndim != 2 or y.shape[1] == 0:
        raise ValueError("need an n x t label matrix with t >= 1")
    return (2 * y.sum(axis=1) >= y.shape[1]).astype(np.int64)


def train_label_vote(dataset: Dataset, split: Split, config: TrainConfig):
    ds = dataset.with_sources(majority_vote(dataset.input_labels()))
    model = baseline_mlp(dataset.d, config)
    return model, fit(model, ds, split, config)


class EnsembleMode(str, enum.Enum):
    AVERAGE = "average"
    MAX = "max"


@dataclass
class EnsembleBundle:
    members: list  # (model, TrainReport) per source


def train_hyper_ensemble(dataset: Dataset, split: Split, config: TrainConfig) -> EnsembleBundle:
    """One baseline MLP per input source; member i uses seed ``config.seed + i``."""
    members = []
    for i in np.flatnonzero(dataset.input_sources):
        cfg = replace(config, seed=config.seed + int(i))
        members.append(train_single_noisy(dataset, split, int(i), cfg))
    return EnsembleBundle(members)


def hyper_ensemble(bundle: EnsembleBundle, features, mode=EnsembleMode.AVERAGE) -> np.ndarray:
    if not bundle.members:
        raise ValueError("empty ensemble")
    scores = np.stack([model.score(features) for model, _ in bundle.members])
    return scores.mean(axis=0) if EnsembleMode(mode) is EnsembleMode.AVERAGE else scores.max(axis=0)


class CrowdLayerModel:
    """Base MLP plus a per-source head ``sigmoid(a_i * logit(p) + b_i)``.

    Training sums the BCE of every head against its own source; inference
    uses the base score ``p`` only.
    """

    labels_as_input = False

    def __init__(self, base: AdmoeModel, n_sources: int, freeze_heads: bool = False):
        self.base = base
        self.a = np.ones(n_sources)
        self.b = np.zeros(n_sources)
        self.grad_a = np.zeros(n_sources)
        self.grad_b = np.zeros(n_sources)
        self.freeze_heads = freeze_heads

    def named_parameters(self):
        params = self.base.named_parameters()
        if not self.freeze_heads:
            params += [("crowd.a", self.a, self.grad_a), ("crowd.b", self.b, self.grad_b)]
        return params

    @property
    def n_params(self) -> int:
        return self.base.n_params + (0 if self.freeze_heads else self.a.size + self.b.size)

    def bump_version(self) -> None:
        self.base.bump_version()

    def get_state(self):
        return self.base.get_state() + [self.a.copy(), self.b.copy()]

    def set_state(self, state) -> None:
        self.base.set_state(state[:-2])
        self.a[...] = state[-2]
        self.b[...] = state[-1]

    def score(self, features, noisy_labels=None) -> np.ndarray:
        return self.base.score(features)

    def head_outputs(self, features) -> np.ndarray:
        _, cache = self.base.forward_with_cache(features)
        logit = cache.head.pre
        return sigmoid(logit * self.a + self.b)

    def loss_and_grads(self, features, noisy_labels, targets, weights, config, rng):
        self.base.zero_grad()
        self.grad_a[...] = 0.0
        self.grad_b[...] = 0.0
        _, cache = self.base.forward_with_cache(features)
        logit = cache.head.pre  # batch x 1
        q = sigmoid(logit * self.a + self.b)
        loss, g_q = bce_loss(q, targets, weights)
        g_u = g_q * q * (1.0 - q)
        self.grad_a += (g_u * logit).sum(axis=0)
        self.grad_b += g_u.sum(axis=0)
        g_logit = (g_u * self.a).sum(axis=1)
        self.base.backward(cache, g_logit, wrt_logit=True)
        return loss, {"source": None, "load_balance": 0.0}


def train_crowd_layer(dataset: Dataset, split: Split, config: TrainConfig, freeze_heads: bool = False):
    base = baseline_mlp(dataset.d, config)
    model = CrowdLayerModel(base, dataset.t, freeze_heads=freeze_heads)
    report = fit(model, dataset, split, config)
    return model, report
