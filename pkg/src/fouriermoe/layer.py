"""The adapted linear layer: frozen base plus gated spectral expert updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, ParameterError
from .experts import init_ensemble, numerical_rank, seed_entropy
from .router import Router, RoutingDecision, gate_batch

__all__ = [
    "AdapterSite",
    "ForwardTrace",
    "build_site",
    "composite_update",
    "effective_rank",
    "forward",
    "param_count",
]


class AdapterSite:
    """Frozen ``base`` (M x N) adapted by ``experts`` under ``router``, scaled by ``eta``.

    Experts may be any objects exposing ``dims``, ``reconstruct()``,
    ``parameters()``, ``grad_from_spatial(G)`` and ``n_scalars``.
    """

    def __init__(self, base, experts, router: Router, eta=64.0, renormalize=False):
        base = np.asarray(base, dtype=float)
        if base.ndim != 2 or not np.all(np.isfinite(base)):
            raise ParameterError("base must be a finite 2-D matrix")
        if base.flags.writeable:
            base = base.copy()
            base.setflags(write=False)
        self.base = base
        self.experts = list(experts)
        self.router = router
        self.eta = float(eta)
        self.renormalize = bool(renormalize)
        self.reconstruction_calls = 0
        if not self.experts:
            raise ParameterError("an adapter site needs at least one expert")
        for e in self.experts:
            if tuple(e.dims) != self.base.shape:
                raise ParameterError(f"expert dims {e.dims} differ from base {self.base.shape}")
        if router.z != len(self.experts):
            raise ParameterError("router expert count differs from ensemble size")
        if router.d_in != self.base.shape[1]:
            raise ParameterError("router input size must equal the layer input size N")

    @property
    def dims(self):
        return self.base.shape

    @property
    def z(self):
        return len(self.experts)

    @property
    def k(self):
        return self.router.k

    def reconstruct(self, i):
        self.reconstruction_calls += 1
        return self.experts[i].reconstruct()


@dataclass
class ForwardTrace:
    """Outputs and intermediates of one forward call through a site."""

    inputs: np.ndarray
    output: np.ndarray
    probs: np.ndarray
    selected: np.ndarray
    gates: np.ndarray
    reconstructions: dict = field(default_factory=dict)
    # expert index -> (row mask of routed tokens, expert outputs for those rows)
    routed: dict = field(default_factory=dict)

    @property
    def decisions(self):
        return [RoutingDecision(p, tuple(int(i) for i in s), g)
                for p, s, g in zip(self.probs, self.selected, self.gates)]

    @property
    def gate_matrix(self):
        B, Z = self.probs.shape
        Gm = np.zeros((B, Z))
        np.put_along_axis(Gm, self.selected, self.gates, axis=1)
        return Gm


def forward(batch, site: AdapterSite) -> ForwardTrace:
    """``h = W0 x + eta * sum_{i in S(x)} g_i(x) * (dW_i x)`` for every token.

    Each active expert is reconstructed once per call and applied only to the
    tokens routed to it.
    """
    X = np.asarray(batch, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != site.dims[1]:
        raise ParameterError(f"expected inputs of length {site.dims[1]}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite input")
    probs, selected, gates = gate_batch(X, site.router, site.renormalize)
    out = X @ site.base.T
    trace = ForwardTrace(X, out, probs, selected, gates)
    Gm = trace.gate_matrix
    for i in np.unique(selected):
        i = int(i)
        dW = site.reconstruct(i)
        trace.reconstructions[i] = dW
        rows = np.any(selected == i, axis=1)
        Y = X[rows] @ dW.T
        trace.routed[i] = (rows, Y)
        out[rows] += site.eta * Gm[rows, i:i + 1] * Y
    return trace


def composite_update(decision: RoutingDecision, site: AdapterSite, cache=None):
    """Per-token effective update ``sum_i g_i * dW_i`` over selected experts, ascending."""
    cache = {} if cache is None else cache
    out = np.zeros(site.dims)
    for i, g in sorted(zip(decision.selected, decision.gates)):
        if i not in cache:
            cache[i] = site.reconstruct(i)
        out += g * cache[i]
    return out


def effective_rank(decision, site, rel_tol=1e-10, cache=None):
    return numerical_rank(composite_update(decision, site, cache), rel_tol)


def param_count(site: AdapterSite):
    """``(expert_scalars, router_scalars, total)`` trainable scalars for one site."""
    expert = sum(e.n_scalars for e in site.experts)
    router = site.router.phi.size
    return expert, router, expert + router


def build_site(base, z, k, n, eta=64.0, bandwidth=0.12, centers=None,
               init_policy="zero", seed=0, mode="complex", frequency_bias=True,
               router_std=0.02, renormalize=False):
    """Convenience constructor: band-tiled ensemble plus a randomly initialized router."""
    base = np.asarray(base, dtype=float)
    experts = init_ensemble(base.shape, z, n, bandwidth=bandwidth, centers=centers,
                            init_policy=init_policy, seed=seed, mode=mode,
                            frequency_bias=frequency_bias)
    router = Router.init(z, base.shape[1], k, std=router_std, seed=[*seed_entropy(seed), 1_000_003])
    return AdapterSite(base, experts, router, eta=eta, renormalize=renormalize)
