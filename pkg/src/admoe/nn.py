"""Minimal dense-network substrate: layers, BCE loss, Adam, initializers.

Everything runs in float64 with hand-written gradients. Layers accumulate
parameter gradients into their own buffers; callers zero them per batch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BCE_EPS = 1e-7


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class InitScheme(str, enum.Enum):
    HE_UNIFORM = "he_uniform"
    XAVIER_UNIFORM = "xavier_uniform"


class ShapeError(ValueError):
    """Input width does not match what a layer or table expects."""


class StaleCacheError(RuntimeError):
    """A backward pass was handed a cache from another layer or an outdated forward."""


class NonFiniteGradientError(FloatingPointError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(shape, scheme: InitScheme, rng: np.random.Generator) -> np.ndarray:
    """Uniform He or Xavier initialization.

    For a 2-D shape ``(fan_in, fan_out)``. A 1-D shape is treated as
    ``fan_in = fan_out = shape[0]``.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    fan_in = shape[0]
    fan_out = shape[-1]
    scheme = InitScheme(scheme)
    if scheme is InitScheme.HE_UNIFORM:
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _scheme_for(activation: Activation) -> InitScheme:
    return InitScheme.HE_UNIFORM if activation is Activation.RELU else InitScheme.XAVIER_UNIFORM


@dataclass
class DenseCache:
    layer_id: int
    version: int
    inputs: np.ndarray
    pre: np.ndarray
    out: np.ndarray


class DenseLayer:
    """Fully connected layer ``activation(x @ W + b)``."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: Activation | str = Activation.RELU,
        rng: np.random.Generator | None = None,
    ):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.activation = Activation(activation)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = init_params((self.in_dim, self.out_dim), _scheme_for(self.activation), rng)
        self.bias = np.zeros(self.out_dim)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        # bumped whenever parameters change, invalidating outstanding caches
        self.version = 0

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def zero_grad(self) -> None:
        self.grad_weights[...] = 0.0
        self.grad_bias[...] = 0.0

    def named_parameters(self, prefix: str):
        return [
            (f"{prefix}.weights", self.weights, self.grad_weights),
            (f"{prefix}.bias", self.bias, self.grad_bias),
        ]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            got = x.shape[1] if x.ndim == 2 else x.shape
            raise ShapeError(f"dense layer expects input width {self.in_dim}, got {got}")
        pre = x @ self.weights + self.bias
        if self.activation is Activation.RELU:
            out = np.maximum(pre, 0.0)
        elif self.activation is Activation.SIGMOID:
            out = sigmoid(pre)
        else:
            out = pre
        return out, DenseCache(id(self), self.version, x, pre, out)

    def backward(
        self, cache: DenseCache, upstream: np.ndarray, *, wrt_preactivation: bool = False
    ) -> np.ndarray:
        """Accumulate parameter gradients and return the gradient w.r.t. the input.

        With ``wrt_preactivation`` the upstream gradient is taken to be
        d(loss)/d(pre-activation), skipping the activation derivative.
        """
        if cache.layer_id != id(self) or cache.version != self.version:
            raise StaleCacheError("cache does not belong to the current state of this layer")
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != cache.pre.shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {cache.pre.shape}")
        if not wrt_preactivation:
            if self.activation is Activation.RELU:
                g = g * (cache.pre > 0)
            elif self.activation is Activation.SIGMOID:
                g = g * cache.out * (1.0 - cache.out)
        self.grad_weights += cache.inputs.T @ g
        self.grad_bias += g.sum(axis=0)
        return g @ self.weights.T


def dense_forward(layer: DenseLayer, x: np.ndarray):
    return layer.forward(x)


def dense_backward(layer: DenseLayer, cache: DenseCache, upstream: np.ndarray) -> np.ndarray:
    return layer.backward(cache, upstream)


def bce_loss(predicted, target, sample_weight=None) -> tuple[float, np.ndarray]:
    """Weighted mean binary cross-entropy and its gradient w.r.t. ``predicted``.

    Predictions are clamped to ``[1e-7, 1 - 1e-7]``; entries pinned by the
    clamp get zero gradient. A zero total weight yields loss 0.
    """
    p = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    w = np.ones_like(p) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if p.shape != y.shape or p.shape != w.shape:
        raise ShapeError(f"length mismatch: predicted {p.shape}, target {y.shape}, weight {w.shape}")
    total = w.sum()
    if total <= 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    per = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    loss = float((w * per).sum() / total)
    grad = w * (pc - y) / (pc * (1.0 - pc)) / total
    grad[(p < BCE_EPS) | (p > 1.0 - BCE_EPS)] = 0.0
    return loss, grad


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(named: Sequence[tuple[str, np.ndarray, np.ndarray]], state: AdamState) -> AdamState:
    """In-place Adam update of ``(name, param, grad)`` triples.

    Raises before touching anything if a gradient is not finite.
    """
    for name, _, grad in named:
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    if not state.m:
        state.m = [np.zeros_like(p) for _, p, _ in named]
        state.v = [np.zeros_like(p) for _, p, _ in named]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for (_, p, g), m, v in zip(named, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
