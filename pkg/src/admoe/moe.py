"""Mixture-of-experts layer with noisy-label-aware top-k gating.

The gate scores experts from the raw features concatenated with an
embedding of the sample's noisy labels. Only the top-k experts per sample
are evaluated; their softmax weights are renormalized to sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Activation, DenseCache, DenseLayer, ShapeError, StaleCacheError, init_params


class ConfigError(ValueError):
    pass


class EmbeddingTable:
    """Learnable ``t x e`` table, one row per noisy-label source."""

    def __init__(self, n_sources: int, dim: int, rng: np.random.Generator):
        self.table = init_params((n_sources, dim), "xavier_uniform", rng)
        self.grad = np.zeros_like(self.table)

    @property
    def n_sources(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _check_binary(labels: np.ndarray, width: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != width:
        raise ShapeError(f"expected noisy labels of width {width}, got shape {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("noisy labels must be 0/1")
    return y


def embed_labels(table: EmbeddingTable, noisy_labels) -> np.ndarray:
    """Average over sources of ``label * embedding_row``; all-zero rows map to 0."""
    y = _check_binary(noisy_labels, table.n_sources)
    return y @ table.table / table.n_sources


def embed_labels_backward(table: EmbeddingTable, noisy_labels, upstream: np.ndarray) -> None:
    y = np.asarray(noisy_labels, dtype=np.float64)
    table.grad += y.T @ upstream / table.n_sources


class Gate:
    """Linear map from ``[features, label embedding]`` to ``m`` expert logits."""

    def __init__(self, in_dim: int, m: int, k: int, rng: np.random.Generator):
        if not 1 <= k <= m:
            raise ConfigError(f"top-k must satisfy 1 <= k <= m, got k={k}, m={m}")
        self.m = int(m)
        self.k = int(k)
        self.linear = DenseLayer(in_dim, m, Activation.IDENTITY, rng)

    @property
    def in_dim(self) -> int:
        return self.linear.in_dim


@dataclass
class GateDecision:
    beta: np.ndarray  # batch x m, zero off the selected experts
    selected: np.ndarray  # batch x k expert indices, strongest first
    importance: np.ndarray  # m, column sums of beta
    probs: np.ndarray  # pre-mask softmax
    mask: np.ndarray  # batch x m bool
    linear_cache: DenseCache | None = None

    @property
    def top1(self) -> np.ndarray:
        return self.selected[:, 0]


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def top_k_decision(logits: np.ndarray, k: int) -> GateDecision:
    probs = softmax(logits)
    # stable sort on negated weights: ties go to the lower expert index
    selected = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    mask = np.zeros(probs.shape, dtype=bool)
    np.put_along_axis(mask, selected, True, axis=1)
    # softmax restricted to the kept logits == renormalized masked softmax
    kept = np.where(mask, logits, -np.inf)
    beta = np.exp(kept - kept.max(axis=1, keepdims=True))
    beta /= beta.sum(axis=1, keepdims=True)
    return GateDecision(beta, selected, beta.sum(axis=0), probs, mask)


def gate_forward(gate: Gate, features, label_emb=None) -> GateDecision:
    x = np.asarray(features, dtype=np.float64)
    if label_emb is not None:
        x = np.concatenate([x, np.asarray(label_emb, dtype=np.float64)], axis=1)
    logits, cache = gate.linear.forward(x)
    decision = top_k_decision(logits, gate.k)
    decision.linear_cache = cache
    return decision


def gate_backward(gate: Gate, decision: GateDecision, grad_beta: np.ndarray) -> np.ndarray:
    """Backprop d(loss)/d(beta) into the gate; returns the gradient w.r.t. the gate input.

    The top-k mask is held constant. Because the kept weights are a softmax
    over the kept logits alone, unselected logits receive exactly zero.
    """
    b = decision.beta
    g = np.where(decision.mask, grad_beta, 0.0)
    grad_logits = b * (g - (b * g).sum(axis=1, keepdims=True))
    return gate.linear.backward(decision.linear_cache, grad_logits)


class ExpertBank:
    """``m`` identically shaped single-layer ReLU experts."""

    def __init__(self, m: int, dim: int, rng: np.random.Generator):
        self.experts = [DenseLayer(dim, dim, Activation.RELU, rng) for _ in range(m)]

    def __len__(self) -> int:
        return len(self.experts)

    def __getitem__(self, i: int) -> DenseLayer:
        return self.experts[i]

    @property
    def dim(self) -> int:
        return self.experts[0].in_dim


@dataclass
class MoECache:
    rows: list  # per expert: indices of samples routed to it
    outputs: list  # per expert: its output on those rows
    expert_caches: list
    batch: int


def moe_forward(experts: ExpertBank, decision: GateDecision, h) -> tuple[np.ndarray, MoECache]:
    """Per-sample weighted sum of the selected experts' outputs."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] != decision.beta.shape[0]:
        raise ShapeError(f"gate decision covers {decision.beta.shape[0]} rows, h has {h.shape[0]}")
    if decision.beta.shape[1] != len(experts):
        raise ShapeError(f"gate has {decision.beta.shape[1]} experts, bank has {len(experts)}")
    out = np.zeros((h.shape[0], experts.dim))
    rows, outputs, caches = [], [], []
    for i, expert in enumerate(experts.experts):
        r = np.flatnonzero(decision.mask[:, i])
        rows.append(r)
        if r.size == 0:
            outputs.append(None)
            caches.append(None)
            continue
        y, c = expert.forward(h[r])
        out[r] += decision.beta[r, i, None] * y
        outputs.append(y)
        caches.append(c)
    return out, MoECache(rows, outputs, caches, h.shape[0])


def moe_backward_experts(
    experts: ExpertBank, decision: GateDecision, cache: MoECache, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. the MoE input ``h`` and w.r.t. ``beta`` (expert grads accumulate)."""
    g_out = np.asarray(upstream, dtype=np.float64)
    if g_out.shape[0] != cache.batch:
        raise StaleCacheError("upstream gradient batch does not match the cached forward pass")
    g_h = np.zeros((cache.batch, experts.dim))
    g_beta = np.zeros_like(decision.beta)
    for i, expert in enumerate(experts.experts):
        r = cache.rows[i]
        if r.size == 0:
            continue
        g_beta[r, i] = (g_out[r] * cache.outputs[i]).sum(axis=1)
        g_h[r] += expert.backward(cache.expert_caches[i], decision.beta[r, i, None] * g_out[r])
    return g_h, g_beta


def load_balance_loss(decision: GateDecision) -> tuple[float, np.ndarray]:
    """Squared coefficient of variation of per-expert importance over the batch.

    Uses the population variance. Returns the loss and its gradient w.r.t.
    every entry of ``beta``.
    """
    beta = decision.beta
    if beta.shape[0] == 0:
        raise ValueError("load balancing loss needs a non-empty batch")
    imp = beta.sum(axis=0)
    m = imp.size
    mu = imp.mean()
    var = ((imp - mu) ** 2).mean()
    loss = var / mu**2
    g_imp = 2.0 * (imp - mu) / (m * mu**2) - 2.0 * var / (m * mu**3)
    return float(loss), np.broadcast_to(g_imp, beta.shape).copy()


class MoELayer:
    """Embedding table, gate and expert bank wired together."""

    def __init__(
        self,
        hidden: int,
        n_features: int,
        n_sources: int,
        m: int,
        k: int,
        emb_dim: int,
        rng: np.random.Generator,
        label_aware: bool = True,
    ):
        if not 1 <= k <= m:
            raise ConfigError(f"top-k must satisfy 1 <= k <= m, got k={k}, m={m}")
        self.label_aware = label_aware and n_sources > 0
        self.embedding = EmbeddingTable(n_sources, emb_dim, rng) if self.label_aware else None
        gate_in = n_features + (emb_dim if self.label_aware else 0)
        self.gate = Gate(gate_in, m, k, rng)
        self.experts = ExpertBank(m, hidden, rng)

    @property
    def m(self) -> int:
        return self.gate.m

    @property
    def k(self) -> int:
        return self.gate.k

    def named_parameters(self, prefix: str = "moe"):
        params = []
        if self.embedding is not None:
            params.append((f"{prefix}.embedding", self.embedding.table, self.embedding.grad))
        params += self.gate.linear.named_parameters(f"{prefix}.gate")
        for i, e in enumerate(self.experts.experts):
            params += e.named_parameters(f"{prefix}.expert{i}")
        return params

    def layers(self):
        return [self.gate.linear, *self.experts.experts]

    def decide(self, features, noisy_labels) -> GateDecision:
        emb = embed_labels(self.embedding, noisy_labels) if self.label_aware else None
        return gate_forward(self.gate, features, emb)

    def forward(self, h, features, noisy_labels):
        decision = self.decide(features, noisy_labels)
        out, cache = moe_forward(self.experts, decision, h)
        return out, (decision, cache, noisy_labels)

    def backward(self, caches, upstream, extra_grad_beta=None) -> np.ndarray:
        decision, cache, noisy_labels = caches
        g_h, g_beta = moe_backward_experts(self.experts, decision, cache, upstream)
        if extra_grad_beta is not None:
            g_beta = g_beta + extra_grad_beta
        g_in = gate_backward(self.gate, decision, g_beta)
        if self.label_aware:
            n_feat = self.gate.in_dim - self.embedding.dim
            embed_labels_backward(self.embedding, noisy_labels, g_in[:, n_feat:])
        return g_h
