"""Softmax top-k gating and the load-balancing auxiliary loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ParameterError

__all__ = [
    "Router",
    "RoutingDecision",
    "gate",
    "gate_batch",
    "load_balance_loss",
    "load_balance_terms",
    "softmax",
    "top_k",
]


@dataclass
class Router:
    """Linear gate ``logits = phi @ x`` (no bias) over ``z`` experts, keeping ``k``."""

    phi: np.ndarray
    k: int

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.ndim != 2:
            raise ParameterError("phi must be a (Z, d_in) matrix")
        if not 1 <= self.k <= self.z:
            raise ParameterError(f"k must lie in [1, Z={self.z}], got {self.k}")
        if not np.all(np.isfinite(self.phi)):
            raise ParameterError("phi has non-finite entries")

    @property
    def z(self):
        return self.phi.shape[0]

    @property
    def d_in(self):
        return self.phi.shape[1]

    @classmethod
    def init(cls, z, d_in, k, std=0.02, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, std, size=(z, d_in)), k)


@dataclass
class RoutingDecision:
    """Per-token routing: full probabilities, selected experts, and their gates."""

    probs: np.ndarray
    selected: tuple
    gates: np.ndarray


def softmax(logits):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def top_k(probs, k):
    """Indices of the ``k`` largest entries per row, ties to the smaller index."""
    order = np.argsort(-np.asarray(probs), axis=-1, kind="stable")
    return order[..., :k]


def gate_batch(X, router: Router, renormalize=False):
    """Vectorized gating for a ``(B, d_in)`` batch.

    Returns ``(probs, selected, gates)`` with shapes ``(B, Z)``, ``(B, k)`` and
    ``(B, k)``.  Selected indices are sorted ascending within each row.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != router.d_in:
        raise ParameterError(
            f"router expects inputs of length {router.d_in}, got shape {X.shape}")
    probs = softmax(X @ router.phi.T)
    selected = np.sort(top_k(probs, router.k), axis=1)
    gates = np.take_along_axis(probs, selected, axis=1)
    if renormalize:
        gates = gates / gates.sum(axis=1, keepdims=True)
    return probs, selected, gates


def gate(x, router: Router, renormalize=False) -> RoutingDecision:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ParameterError("gate expects a single input vector")
    if not np.all(np.isfinite(x)):
        raise InputError("input has non-finite entries")
    probs, selected, gates = gate_batch(x[None, :], router, renormalize)
    return RoutingDecision(probs[0], tuple(int(i) for i in selected[0]), gates[0])


def load_balance_terms(probs, selected, z):
    """Dispatch fractions ``f`` and mean probabilities ``P`` over a batch."""
    probs = np.asarray(probs, dtype=float)
    selected = np.asarray(selected)
    b = probs.shape[0]
    if b == 0:
        raise ParameterError("empty batch")
    counts = np.bincount(selected.reshape(-1).astype(np.int64), minlength=z)[:z].astype(float)
    return counts / b, probs.sum(axis=0) / b


def load_balance_loss(decisions, z) -> float:
    """``Z * sum_i f_i * P_i`` for a batch of decisions (or ``(probs, selected)`` arrays)."""
    if isinstance(decisions, tuple) and len(decisions) == 2 and isinstance(decisions[0], np.ndarray):
        probs, selected = decisions
    else:
        decisions = list(decisions)
        if not decisions:
            raise ParameterError("empty batch")
        if any(len(d.probs) != z for d in decisions):
            raise ParameterError("decisions disagree on expert count")
        probs = np.stack([d.probs for d in decisions])
        selected = np.array([d.selected for d in decisions])
    f, P = load_balance_terms(probs, selected, z)
    return float(z * np.dot(f, P))
