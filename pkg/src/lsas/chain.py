"""Functional core of the sub-attention chain.

Everything here operates on plain numpy arrays so the math can be checked
in float64 against independent oracles (finite differences, closed-form
products). The trainable torch counterpart lives in :mod:`lsas.attention`.

A channel vector is a 1-D array of length C, one scalar per channel. A
feature map is a (C, H, W) array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GateConfig",
    "SubAttentionChain",
    "LSASModule",
    "sigmoid",
    "global_average_pool",
    "selection_gate",
    "gate_open",
    "chain_forward",
    "chain_compose",
    "chain_gradients",
    "lsas_forward",
]


def sigmoid(x):
    """Numerically stable logistic function (branches on sign)."""
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


@dataclass(frozen=True)
class GateConfig:
    """Channel-count threshold: attention is active only where C > mu."""

    mu: int = 128

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"gate threshold must be non-negative, got {self.mu}")


@dataclass(frozen=True)
class SubAttentionChain:
    """An ordered list of per-channel affine pairs (gamma_i, beta_i).

    ``params[i]`` holds the pair for level i+1; the chain order n is
    ``len(params)``. Order 0 is the identity wrapper around sigmoid(v).
    """

    params: tuple = field(default_factory=tuple)

    def __post_init__(self):
        clean = []
        width = None
        for pair in self.params:
            gamma, beta = pair
            gamma = np.asarray(gamma, dtype=float)
            beta = np.asarray(beta, dtype=float)
            if gamma.ndim != 1 or beta.ndim != 1:
                raise ValueError("chain parameters must be 1-D channel vectors")
            if gamma.shape != beta.shape:
                raise ValueError(
                    f"gamma/beta length mismatch: {gamma.shape[0]} vs {beta.shape[0]}"
                )
            if width is None:
                width = gamma.shape[0]
            elif gamma.shape[0] != width:
                raise ValueError("all chain levels must share one channel count")
            clean.append((gamma, beta))
        object.__setattr__(self, "params", tuple(clean))

    @property
    def order(self) -> int:
        return len(self.params)

    @property
    def channels(self):
        """Channel count of the chain, or None for an order-0 chain."""
        return self.params[0][0].shape[0] if self.params else None

    @classmethod
    def identity(cls, order: int, channels: int) -> "SubAttentionChain":
        """Untrained chain: gamma_i = 1, beta_i = 0 for every level."""
        if order < 0:
            raise ValueError(f"order must be non-negative, got {order}")
        return cls(
            tuple((np.ones(channels), np.zeros(channels)) for _ in range(order))
        )


@dataclass(frozen=True)
class LSASModule:
    """Bundle of a base attention operator, a chain and a gate.

    ``base`` maps the pooled channel descriptor u to pre-sigmoid logits v;
    the base operator's own final sigmoid is replaced by the composition
    stage, which contains sigmoid(v0) as its first factor.
    """

    base: Callable[[np.ndarray], np.ndarray]
    chain: SubAttentionChain
    gate: GateConfig
    channels: int


def global_average_pool(x) -> np.ndarray:
    """Spatial mean per channel: (C, H, W) -> (C,)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected a (C, H, W) feature map, got shape {x.shape}")
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ValueError("feature map has empty spatial extent")
    return x.mean(axis=(1, 2))


def gate_open(channels: int, gate: GateConfig) -> bool:
    """The gate opens only for a strictly larger channel count."""
    return channels > gate.mu


def selection_gate(v, gate: GateConfig) -> np.ndarray:
    """Pass v through when its channel count exceeds mu, else all ones.

    The all-ones return makes the downstream element-wise multiplication the
    identity. Total function; the boundary C == mu closes the gate.
    """
    v = np.asarray(v, dtype=float)
    if gate_open(v.shape[0], gate):
        return v
    return np.ones_like(v)


def chain_forward(v0, chain: SubAttentionChain) -> list:
    """Run the affine chain: v_i = v_{i-1} * gamma_i + beta_i.

    Returns [v0, v1, ..., vn]; an order-0 chain returns [v0].
    """
    v = np.asarray(v0, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"v0 must be a channel vector, got shape {v.shape}")
    if chain.channels is not None and chain.channels != v.shape[0]:
        raise ValueError(
            f"chain is sized for {chain.channels} channels, v0 has {v.shape[0]}"
        )
    out = [v]
    for gamma, beta in chain.params:
        v = v * gamma + beta
        out.append(v)
    return out


def chain_compose(vs: Sequence) -> np.ndarray:
    """Collapse chain levels into one multiplier: prod_i sigmoid(v_i).

    Evaluated as the backward recurrence w_i = sigmoid(v_i) * w_{i+1}
    starting from w_n = sigmoid(v_n). A single level gives sigmoid(v).
    """
    if len(vs) == 0:
        raise ValueError("chain_compose needs at least one level")
    arrs = [np.asarray(v, dtype=float) for v in vs]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ValueError("all chain levels must share one channel count")
    w = sigmoid(arrs[-1])
    for v in arrs[-2::-1]:
        w = sigmoid(v) * w
    return w


def chain_gradients(v0, chain: SubAttentionChain, upstream):
    """Analytic gradients of sum(upstream * compose(forward(v0))).

    Returns (grad_v0, grad_gammas, grad_betas) where the parameter grads are
    lists with one channel vector per chain level. Matches central finite
    differences of the forward pass.
    """
    upstream = np.asarray(upstream, dtype=float)
    vs = chain_forward(v0, chain)
    if upstream.shape != vs[0].shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match v0 {vs[0].shape}"
        )
    sigs = [sigmoid(v) for v in vs]
    prod = np.ones_like(vs[0])
    for s in sigs:
        prod = prod * s

    n = chain.order
    grad_gammas = [None] * n
    grad_betas = [None] * n
    # d(prod)/d(v_i) = prod * (1 - sigmoid(v_i)); walk levels from n down to 0,
    # propagating through v_{i+1} = v_i * gamma_{i+1} + beta_{i+1}.
    a = upstream * prod * (1.0 - sigs[n])
    for i in range(n - 1, -1, -1):
        gamma, _ = chain.params[i]
        grad_gammas[i] = a * vs[i]
        grad_betas[i] = a.copy()
        a = upstream * prod * (1.0 - sigs[i]) + a * gamma
    return a, grad_gammas, grad_betas


def lsas_forward(x, module: LSASModule) -> np.ndarray:
    """Debiased output y = x * SG(compose(forward(base(GAP(x))))).

    When the gate is closed (C <= mu) the base operator is never evaluated
    and x is returned unchanged; otherwise the composed multiplier is
    broadcast over the spatial positions of every channel.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected a (C, H, W) feature map, got shape {x.shape}")
    if x.shape[0] != module.channels:
        raise ValueError(
            f"module is sized for {module.channels} channels, input has {x.shape[0]}"
        )
    if not gate_open(module.channels, module.gate):
        return x
    u = global_average_pool(x)
    v0 = np.asarray(module.base(u), dtype=float)
    if v0.shape != u.shape:
        raise ValueError(
            f"base operator returned shape {v0.shape}, expected {u.shape}"
        )
    w = chain_compose(chain_forward(v0, module.chain))
    return x * w[:, None, None]
