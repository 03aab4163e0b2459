"""ADMoE-MLP: dense trunk, optional MoE layer, sigmoid head, and its training loop."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .data import Dataset, Split
from .moe import ConfigError, GateDecision, MoELayer, load_balance_loss
from .nn import Activation, AdamState, DenseLayer, ShapeError, adam_step, bce_loss

log = logging.getLogger(__name__)


class LossMode(str, enum.Enum):
    SAMPLE_ONE = "sample_one"
    COMBINE_ALL = "combine_all"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    alpha: float = 0.01
    m: int = 4
    k: int = 2
    e: int = 8
    loss_mode: LossMode = LossMode.SAMPLE_ONE
    seed: int = 0
    clean_weight: float = 5.0
    budget: int = 18000

    def __post_init__(self):
        self.loss_mode = LossMode(self.loss_mode)
        if not 1 <= self.k <= self.m:
            raise ConfigError(f"need 1 <= k <= m, got k={self.k}, m={self.m}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.clean_weight < 1:
            raise ConfigError("clean_weight must be >= 1")


@dataclass
class ForwardCache:
    trunk: list
    moe: tuple | None
    head: object

    @property
    def decision(self) -> GateDecision | None:
        return None if self.moe is None else self.moe[0]


def count_params(
    n_features: int,
    n_sources: int,
    hidden: int,
    *,
    use_moe: bool = True,
    labels_as_input: bool = True,
    m: int = 4,
    e: int = 8,
    trunk_layers: int = 2,
) -> int:
    in_dim = n_features + (n_sources if labels_as_input else 0)
    total = in_dim * hidden + hidden + (trunk_layers - 1) * (hidden * hidden + hidden)
    if use_moe:
        label_aware = labels_as_input and n_sources > 0
        gate_in = n_features + (e if label_aware else 0)
        total += (n_sources * e if label_aware else 0) + gate_in * m + m
        total += m * (hidden * hidden + hidden)
    return total + hidden + 1


class AdmoeModel:
    """Trunk -> (MoE layer) -> sigmoid head.

    With ``labels_as_input`` the raw binary noisy labels are appended to the
    trunk input and the gate sees their learned embedding; without it the
    gate sees the raw features only.
    """

    def __init__(
        self,
        n_features: int,
        n_sources: int,
        hidden: int,
        *,
        use_moe: bool = True,
        labels_as_input: bool = True,
        m: int = 4,
        k: int = 2,
        e: int = 8,
        trunk_layers: int = 2,
        seed: int = 0,
    ):
        if trunk_layers < 1:
            raise ConfigError("need at least one trunk layer")
        self.arch = dict(
            n_features=int(n_features),
            n_sources=int(n_sources),
            hidden=int(hidden),
            use_moe=bool(use_moe),
            labels_as_input=bool(labels_as_input),
            m=int(m),
            k=int(k),
            e=int(e),
            trunk_layers=int(trunk_layers),
            seed=int(seed),
        )
        rng = np.random.default_rng(seed)
        self.n_features = n_features
        self.n_sources = n_sources
        self.use_moe = use_moe
        self.labels_as_input = labels_as_input
        in_dim = n_features + (n_sources if labels_as_input else 0)
        self.trunk = [DenseLayer(in_dim, hidden, Activation.RELU, rng)]
        self.trunk += [DenseLayer(hidden, hidden, Activation.RELU, rng) for _ in range(trunk_layers - 1)]
        self.moe = (
            MoELayer(hidden, n_features, n_sources, m, k, e, rng, label_aware=labels_as_input)
            if use_moe
            else None
        )
        self.head = DenseLayer(hidden, 1, Activation.SIGMOID, rng)

    @classmethod
    def for_budget(cls, n_features: int, n_sources: int, budget: int = 18000, **kwargs) -> "AdmoeModel":
        """Build with the hidden width whose parameter count is closest to ``budget``."""
        shape_kw = {k: kwargs[k] for k in ("use_moe", "labels_as_input", "m", "e", "trunk_layers") if k in kwargs}
        widths = np.arange(1, 1025)
        counts = np.array([count_params(n_features, n_sources, int(h), **shape_kw) for h in widths])
        hidden = int(widths[np.argmin(np.abs(counts - budget))])
        return cls(n_features, n_sources, hidden, **kwargs)

    # -- parameters ------------------------------------------------------------

    def layers(self) -> list[DenseLayer]:
        out = list(self.trunk)
        if self.moe is not None:
            out += self.moe.layers()
        return out + [self.head]

    def named_parameters(self):
        params = []
        for i, layer in enumerate(self.trunk):
            params += layer.named_parameters(f"trunk{i}")
        if self.moe is not None:
            params += self.moe.named_parameters("moe")
        return params + self.head.named_parameters("head")

    @property
    def n_params(self) -> int:
        return int(sum(p.size for _, p, _ in self.named_parameters()))

    def zero_grad(self) -> None:
        for _, _, g in self.named_parameters():
            g[...] = 0.0

    def bump_version(self) -> None:
        for layer in self.layers():
            layer.version += 1

    def get_state(self) -> list[np.ndarray]:
        return [p.copy() for _, p, _ in self.named_parameters()]

    def set_state(self, state) -> None:
        named = self.named_parameters()
        if len(state) != len(named):
            raise ShapeError(f"state holds {len(state)} tensors, model has {len(named)}")
        for (name, p, _), s in zip(named, state):
            if p.shape != np.shape(s):
                raise ShapeError(f"{name}: shape {np.shape(s)} != {p.shape}")
            p[...] = s
        self.bump_version()

    # -- forward / backward ------------------------------------------------------

    def _check_inputs(self, features, noisy_labels):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {x.shape}")
        needs_labels = self.labels_as_input and self.n_sources > 0
        if not needs_labels:
            return x, None
        if noisy_labels is None:
            raise ShapeError("this model takes noisy labels as input")
        y = np.asarray(noisy_labels, dtype=np.float64)
        if y.shape != (x.shape[0], self.n_sources):
            raise ShapeError(f"expected noisy labels of shape {(x.shape[0], self.n_sources)}, got {y.shape}")
        return x, y

    def _trunk(self, x, y):
        h = x if y is None else np.concatenate([x, y], axis=1)
        caches = []
        for layer in self.trunk:
            h, c = layer.forward(h)
            caches.append(c)
        return h, caches

    def forward_with_cache(self, features, noisy_labels=None) -> tuple[np.ndarray, ForwardCache]:
        x, y = self._check_inputs(features, noisy_labels)
        h, trunk_caches = self._trunk(x, y)
        moe_cache = None
        if self.moe is not None:
            h, moe_cache = self.moe.forward(h, x, y)
        out, head_cache = self.head.forward(h)
        return out[:, 0], ForwardCache(trunk_caches, moe_cache, head_cache)

    def score(self, features, noisy_labels=None) -> np.ndarray:
        """Anomaly scores in (0, 1)."""
        return self.forward_with_cache(features, noisy_labels)[0]

    __call__ = score

    def backward(self, cache: ForwardCache, grad_score, grad_beta=None, *, wrt_logit: bool = False):
        g = np.asarray(grad_score, dtype=np.float64)[:, None]
        g = self.head.backward(cache.head, g, wrt_preactivation=wrt_logit)
        if self.moe is not None:
            g = self.moe.backward(cache.moe, g, grad_beta)
        for layer, c in zip(reversed(self.trunk), reversed(cache.trunk)):
            g = layer.backward(c, g)
        return g

    def gate_decision(self, features, noisy_labels=None) -> GateDecision:
        if self.moe is None:
            raise ConfigError("model has no MoE layer")
        x, y = self._check_inputs(features, noisy_labels)
        return self.moe.decide(x, y)

    def score_with_expert(self, features, noisy_labels, expert: int) -> np.ndarray:
        """Scores obtained by routing every sample through ``expert`` alone."""
        if self.moe is None:
            raise ConfigError("model has no MoE layer")
        x, y = self._check_inputs(features, noisy_labels)
        h, _ = self._trunk(x, y)
        h, _ = self.moe.experts[expert].forward(h)
        return self.head.forward(h)[0][:, 0]

    # -- training objective --------------------------------------------------------

    def loss_and_grads(self, features, noisy_labels, targets, weights, config: TrainConfig, rng):
        """Realized batch loss; gradients are left in the parameter buffers."""
        return batch_loss(self, features, noisy_labels, targets, weights, config, rng)


def batch_loss(model: AdmoeModel, features, noisy_labels, targets, weights, config: TrainConfig, rng):
    """``alpha * L_g + L_o`` on one batch.

    ``targets``/``weights`` are ``batch x t`` (weight 0 marks an absent
    label). SAMPLE_ONE draws one source for the whole batch and scales its
    mean BCE over present rows by that source's weight; COMBINE_ALL takes the
    weight-normalized BCE over all sources. Returns ``(loss, info)`` and
    leaves exact gradients in the model's buffers.
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] == 0:
        raise ConfigError("need at least one noisy-label source as a target")
    model.zero_grad()
    score, cache = model.forward_with_cache(features, noisy_labels)
    info = {"source": None, "load_balance": 0.0}
    if config.loss_mode is LossMode.SAMPLE_ONE:
        src = int(rng.integers(targets.shape[1]))
        info["source"] = src
        w = weights[:, src]
        present = np.count_nonzero(w)
        loss, g = bce_loss(score, targets[:, src], w)
        scale = w.sum() / present if present else 0.0
        loss, g = loss * scale, g * scale
    else:
        pred = np.repeat(score[:, None], targets.shape[1], axis=1)
        loss, g2 = bce_loss(pred, targets, weights)
        g = g2.sum(axis=1)
    grad_beta = None
    if cache.decision is not None:
        lg, g_beta = load_balance_loss(cache.decision)
        info["load_balance"] = lg
        if config.alpha > 0:
            loss += config.alpha * lg
            grad_beta = config.alpha * g_beta
    model.backward(cache, g, grad_beta)
    return loss, info


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_auc: float | None = None
    snapshot: list | None = None


def validation_truth(dataset: Dataset, rows) -> np.ndarray:
    """Ground truth when available, else the majority vote of the input sources."""
    if dataset.ground_truth is not None:
        return dataset.ground_truth[rows]
    y = dataset.input_labels(rows)
    return (2 * y.sum(axis=1) >= y.shape[1]).astype(np.int64)


def fit(model, dataset: Dataset, split: Split, config: TrainConfig) -> TrainReport:
    """Minibatch Adam training; restores the epoch with the best validation ROC-AUC.

    ``model`` is anything exposing ``named_parameters``, ``loss_and_grads``,
    ``score``, ``get_state``/``set_state`` and ``bump_version``.
    """
    train = np.asarray(split.train)
    val = np.asarray(split.val)
    if np.intersect1d(train, val).size or np.intersect1d(train, split.test).size:
        raise ValueError("split indices overlap")
    val_y = validation_truth(dataset, val)
    if np.unique(val_y).size < 2:
        raise ValueError("validation rows hold a single class; re-split (e.g. stratified)")
    report = TrainReport()
    if config.epochs == 0:
        return report

    x = dataset.features
    y_in = dataset.input_labels() if model.labels_as_input else None
    targets = dataset.noisy_labels
    weights = dataset.target_weights()
    rng = np.random.default_rng((config.seed, 1))
    state = AdamState(lr=config.lr)
    named = model.named_parameters()

    def inputs(rows):
        return x[rows], (None if y_in is None else y_in[rows])

    for epoch in range(config.epochs):
        order = train[rng.permutation(train.size)]
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            rows = order[start : start + config.batch_size]
            loss, _ = model.loss_and_grads(*inputs(rows), targets[rows], weights[rows], config, rng)
            adam_step(named, state)
            model.bump_version()
            total += loss * rows.size
        report.train_loss.append(total / order.size)
        auc = metrics.roc_auc(model.score(*inputs(val)), val_y)
        report.val_auc.append(auc)
        if report.best_val_auc is None or auc > report.best_val_auc:
            report.best_epoch, report.best_val_auc = epoch, auc
            report.snapshot = model.get_state()
        log.debug("epoch %d loss %.5f val auc %.4f", epoch, report.train_loss[-1], auc)
    model.set_state(report.snapshot)
    return report


def model_inputs(model, dataset: Dataset, rows=None):
    x = dataset.features if rows is None else dataset.features[rows]
    if not getattr(model, "labels_as_input", False):
        return x, None
    return x, dataset.input_labels(rows)


@dataclass
class CaseStudy:
    table: list  # m x m, row = samples routed to expert r, col = forced expert c; None if undefined
    sizes: list
    overall_auc: float

    def diagonal_wins(self) -> tuple[int, int]:
        """(rows whose diagonal entry is the row maximum, rows with any defined entry)."""
        wins = total = 0
        for r, row in enumerate(self.table):
            vals = [v for v in row if v is not None]
            if not vals or row[r] is None:
                continue
            total += 1
            wins += row[r] >= max(vals)
        return wins, total


def expert_case_study(model: AdmoeModel, dataset: Dataset, split: Split) -> CaseStudy:
    """Per-expert ROC-AUC on the test samples each expert is the top choice for."""
    if dataset.ground_truth is None:
        raise ValueError("case study needs ground truth")
    rows = np.asarray(split.test)
    x, y = model_inputs(model, dataset, rows)
    truth = dataset.ground_truth[rows]
    top = model.gate_decision(x, y).top1
    m = model.moe.m
    table, sizes = [], []
    for r in range(m):
        part = np.flatnonzero(top == r)
        sizes.append(int(part.size))
        row = []
        for c in range(m):
            if part.size == 0 or np.unique(truth[part]).size < 2:
                row.append(None)
                continue
            s = model.score_with_expert(x[part], None if y is None else y[part], c)
            row.append(metrics.roc_auc(s, truth[part]))
        table.append(row)
    return CaseStudy(table, sizes, metrics.roc_auc(model.score(x, y), truth))


def expert_usage(model: AdmoeModel, features, noisy_labels=None) -> np.ndarray:
    """Fraction of samples for which each expert is the gate's top choice."""
    top = model.gate_decision(features, noisy_labels).top1
    return np.bincount(top, minlength=model.moe.m) / top.size
