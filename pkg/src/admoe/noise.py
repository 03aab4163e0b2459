"""Synthesis of multi-source noisy labels from ground truth.

Two mechanisms: independent label flipping, and "inaccurate output", where
weak classifiers trained on a fraction of the ground truth label everything.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .classifiers import BoostedStumps, DecisionTree, LogisticRegression, NotFittedError, RandomForest

QUALITY_GRID = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


class NoiseError(ValueError):
    pass


class GeneratorKind(str, enum.Enum):
    LOGISTIC_REGRESSION = "logistic_regression"
    DECISION_TREE = "decision_tree"
    RANDOM_FOREST = "random_forest"
    BOOSTED_STUMPS = "boosted_stumps"


DEFAULT_KINDS = (
    GeneratorKind.LOGISTIC_REGRESSION,
    GeneratorKind.DECISION_TREE,
    GeneratorKind.RANDOM_FOREST,
    GeneratorKind.BOOSTED_STUMPS,
)


class Mechanism(str, enum.Enum):
    LABEL_FLIPPING = "label_flipping"
    INACCURATE_OUTPUT = "inaccurate_output"


@dataclass
class NoiseSpec:
    mechanism: Mechanism = Mechanism.INACCURATE_OUTPUT
    rates: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    gt_fraction: float = 0.05
    kinds: list = field(default_factory=lambda: [k.value for k in DEFAULT_KINDS])
    seed: int = 0

    def __post_init__(self):
        self.mechanism = Mechanism(self.mechanism)
        self.kinds = [GeneratorKind(k).value for k in self.kinds]
        if self.mechanism is Mechanism.LABEL_FLIPPING:
            if not self.rates or any(not 0.0 <= r <= 1.0 for r in self.rates):
                raise NoiseError("flip rates must be a non-empty list of values in [0, 1]")
        else:
            if not self.kinds:
                raise NoiseError("need at least one generator kind")
            if not 0.0 < self.gt_fraction <= 1.0:
                raise NoiseError("gt_fraction must lie in (0, 1]")

    @property
    def t(self) -> int:
        return len(self.rates) if self.mechanism is Mechanism.LABEL_FLIPPING else len(self.kinds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mechanism"] = self.mechanism.value
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "NoiseSpec":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise NoiseError(f"unknown noise spec fields: {sorted(unknown)}")
        return cls(**raw)


def flip_labels(ground_truth, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Invert each label independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise NoiseError("rate must lie in [0, 1]")
    y = np.asarray(ground_truth).astype(np.int64)
    flip = rng.random(y.shape) < rate
    return np.where(flip, 1 - y, y)


@dataclass
class WeakGenerator:
    kind: GeneratorKind
    model: object
    subsample: np.ndarray
    fitted: bool = False

    def predict_proba(self, features) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError(f"{self.kind.value} generator is not fitted")
        return self.model.predict_proba(features)


def _make_model(kind: GeneratorKind, rng: np.random.Generator):
    if kind is GeneratorKind.LOGISTIC_REGRESSION:
        return LogisticRegression()
    if kind is GeneratorKind.DECISION_TREE:
        return DecisionTree(max_depth=4, rng=rng)
    if kind is GeneratorKind.RANDOM_FOREST:
        return RandomForest(n_trees=20, max_depth=6, rng=rng)
    return BoostedStumps(n_rounds=50)


def stratified_subsample(labels, size: int, rng: np.random.Generator, pool=None) -> np.ndarray:
    """Draw ``size`` rows from ``pool`` keeping class proportions, at least one per class."""
    labels = np.asarray(labels)
    pool = np.arange(labels.size) if pool is None else np.asarray(pool)
    pos = pool[labels[pool] == 1]
    neg = pool[labels[pool] == 0]
    size = min(size, pool.size)
    n_pos = int(round(size * pos.size / pool.size))
    if pos.size and neg.size:
        n_pos = min(max(n_pos, 1), pos.size, size - 1)
    n_pos = min(n_pos, pos.size)
    n_neg = min(size - n_pos, neg.size)
    chosen = np.concatenate(
        [rng.choice(pos, size=n_pos, replace=False), rng.choice(neg, size=n_neg, replace=False)]
    )
    return np.sort(chosen)


def fit_weak_generator(
    kind,
    features,
    ground_truth,
    gt_fraction: float,
    rng: np.random.Generator,
    pool=None,
) -> WeakGenerator:
    """Train one generator on a stratified subsample of ``ceil(gt_fraction * n)`` rows.

    ``pool`` restricts which rows may be drawn (e.g. the training split).
    """
    kind = GeneratorKind(kind)
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(ground_truth).astype(np.int64)
    size = math.ceil(gt_fraction * y.size)
    if size < 20:
        raise NoiseError(f"gt_fraction * n = {size} rows; need at least 20 to train a generator")
    for _ in range(10):
        idx = stratified_subsample(y, size, rng, pool)
        if np.unique(y[idx]).size == 2:
            break
    else:
        raise NoiseError("could not draw a subsample with both classes present")
    model = _make_model(kind, rng)
    model.fit(x[idx], y[idx])
    return WeakGenerator(kind, model, idx, fitted=True)


def generate_inaccurate_labels(generators, features, threshold: float = 0.5) -> np.ndarray:
    """``n x t`` matrix; column i is generator i's prediction thresholded at 0.5."""
    cols = [(g.predict_proba(features) >= threshold).astype(np.int64) for g in generators]
    return np.column_stack(cols)


def label_quality(noisy_column, ground_truth) -> float:
    """ROC-AUC of a binary label column against ground truth."""
    return metrics.roc_auc(np.asarray(noisy_column, dtype=np.float64), ground_truth)


def synthesize(spec: NoiseSpec, features, ground_truth, pool=None) -> np.ndarray:
    """Noisy-label matrix for ``spec``; source i uses the RNG seeded by ``(seed, i)``."""
    y = np.asarray(ground_truth).astype(np.int64)
    if spec.mechanism is Mechanism.LABEL_FLIPPING:
        cols = [flip_labels(y, r, np.random.default_rng((spec.seed, i))) for i, r in enumerate(spec.rates)]
        return np.column_stack(cols)
    gens = [
        fit_weak_generator(kind, features, y, spec.gt_fraction, np.random.default_rng((spec.seed, i)), pool)
        for i, kind in enumerate(spec.kinds)
    ]
    return generate_inaccurate_labels(gens, features)


def quality_report(noisy_labels, ground_truth) -> list[float]:
    return [label_quality(noisy_labels[:, i], ground_truth) for i in range(noisy_labels.shape[1])]
