"""Contrast adapters built from a template site, and a closed-form fitting oracle."""

from __future__ import annotations

import numpy as np

from ..exceptions import ParameterError
from ..experts import SpectralExpert
from ..layer import AdapterSite
from ..router import Router
from ..spectral import HalfSpectrum
from ..variants import LowRankAdapter, UnsymmetricExpert

__all__ = [
    "baseline_imag_only",
    "baseline_lowrank",
    "baseline_real_only",
    "baseline_unsymmetric",
    "design_matrix",
    "least_squares_fit",
]


def _respin(site: AdapterSite, experts):
    router = Router(site.router.phi.copy(), site.router.k)
    return AdapterSite(site.base, experts, router, eta=site.eta, renormalize=site.renormalize)


def _clamped(expert, mode):
    skeleton = HalfSpectrum(expert.dims, pair_idx=expert.pair_idx,
                            pair_vals=np.zeros(len(expert.pair_idx)),
                            self_idx=expert.self_idx, self_vals=np.zeros(len(expert.self_idx)))
    out = SpectralExpert(skeleton, band=expert.band, mode=mode)
    c = expert.coeffs
    out.set_coeffs(c.pair_vals, c.self_vals)
    return out


def baseline_real_only(site: AdapterSite) -> AdapterSite:
    """Same supports and router; imaginary parts clamped to zero."""
    return _respin(site, [_clamped(e, "real") for e in site.experts])


def baseline_imag_only(site: AdapterSite) -> AdapterSite:
    """Same supports and router; real parts (and self-conjugate bins) clamped to zero."""
    return _respin(site, [_clamped(e, "imag") for e in site.experts])


def baseline_unsymmetric(site: AdapterSite) -> AdapterSite:
    """Same full supports with independent per-bin values, current values copied."""
    return _respin(site, [UnsymmetricExpert.from_expert(e, copy_values=True)
                          for e in site.experts])


def baseline_lowrank(dims, rank, seed=0, std=None) -> LowRankAdapter:
    return LowRankAdapter(dims, rank, seed=seed, std=std)


def design_matrix(expert):
    """Columns are the flattened spatial patterns of each trainable scalar.

    Built by probing the sparse basis-kernel path with unit coefficients, so it
    never touches the FFT used in training.  Only linear parameterizations
    (spectral and unsymmetric experts) are supported.
    """
    if isinstance(expert, LowRankAdapter):
        raise ParameterError("low-rank adapters are not linear in their parameters")
    params = expert.parameters()
    saved = {k: v.copy() for k, v in params.items()}
    cols = []
    try:
        for arr in params.values():
            arr[:] = 0.0
        for arr in params.values():
            for j in range(arr.size):
                arr[j] = 1.0
                cols.append(expert.reconstruct(path="sparse").ravel())
                arr[j] = 0.0
    finally:
        for k, v in saved.items():
            params[k][:] = v
    m, n = expert.dims
    return np.array(cols).T if cols else np.zeros((m * n, 0))


def least_squares_fit(expert, target):
    """Best relative Frobenius error ``min ||dW - T|| / ||T||`` over the expert's span."""
    target = np.asarray(target, dtype=float)
    if target.shape != tuple(expert.dims):
        raise ParameterError("target shape differs from expert dims")
    A = design_matrix(expert)
    t = target.ravel()
    norm = np.linalg.norm(t)
    if norm == 0:
        return 0.0
    if A.shape[1] == 0:
        return 1.0
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    return float(np.linalg.norm(A @ coef - t) / norm)
