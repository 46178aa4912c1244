"""Spectral analysis of trained updates, matrix-file I/O and parameter accounting."""

from __future__ import annotations

import struct

import numpy as np

from ..exceptions import InputError, ParameterError
from ..experts import init_ensemble
from ..layer import AdapterSite, param_count
from ..router import Router
from ..spectral import radial_psd
from .checkpoint import MAGIC, load_checkpoint

__all__ = [
    "PAPER_SETUP",
    "count_params",
    "psd_rows",
    "read_matrix",
    "write_matrix",
]


def write_matrix(path, W):
    """Matrix file: ``u32 M, u32 N`` little-endian, then row-major f64."""
    W = np.ascontiguousarray(W, dtype="<f8")
    if W.ndim != 2:
        raise ParameterError("matrix files hold 2-D arrays")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *W.shape))
        fh.write(W.tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise InputError("matrix file is too short")
    m, n = struct.unpack("<II", data[:8])
    if len(data) != 8 + 8 * m * n:
        raise InputError(f"matrix file size does not match its {m}x{n} header")
    return np.frombuffer(data[8:], dtype="<f8").astype(float).reshape(m, n)


def _is_checkpoint(path):
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


def psd_rows(path, bins):
    """Radial PSD rows for every expert update in a checkpoint, or for a matrix file.

    Each row carries the site and expert (empty for matrix files), the band
    center the expert was sampled around, the bin's normalized radius range
    and the mean power in the bin.
    """
    bins = int(bins)
    if bins < 1:
        raise ParameterError("bins must be >= 1")
    if _is_checkpoint(path):
        state = load_checkpoint(path)
        items = []
        for s, site in enumerate(state.sites):
            for i, e in enumerate(site.experts):
                band = getattr(e, "band", None)
                items.append((s, i, band.center if band is not None else None, e.reconstruct()))
    else:
        items = [(None, None, None, read_matrix(path))]
    rows = []
    for s, i, center, W in items:
        psd = radial_psd(W, bins)
        for b, p in enumerate(psd):
            rows.append({"site": s, "expert": i, "band_center": center, "bin": b,
                         "r_lo": b / bins, "r_hi": (b + 1) / bins, "power": float(p)})
    return rows


# Large-model setting for the accounting check: 24 blocks of width 1024 with
# adapters on the query and value projections and a two-layer classification
# head (dense 1024 -> 1024, then 1024 -> 2).
PAPER_SETUP = {
    "hidden": 1024,
    "layers": 24,
    "targets": ["query", "value"],
    "n": 1008,
    "n_experts": 8,
    "top_k": 2,
    "head": [[1024, 1024], [2, 1024]],
}


def count_params(setup=None, seed=0):
    """Trainable-scalar breakdown for a stack of identical adapter sites plus a head.

    One real site is built (supports sampled, router allocated) and counted
    with :func:`param_count`; every site in the stack has the same shape and
    budget, so the stack total is that count times the site count.
    """
    setup = {**PAPER_SETUP, **(setup or {})}
    d = int(setup["hidden"])
    n_sites = int(setup["layers"]) * len(setup["targets"])
    base = np.broadcast_to(np.zeros(1), (d, d))
    experts = init_ensemble((d, d), setup["n_experts"], setup["n"], seed=seed)
    router = Router(np.zeros((setup["n_experts"], d)), setup["top_k"])
    site = AdapterSite(base, experts, router)
    expert, routing, total = param_count(site)
    head = sum(o * i + o for o, i in setup["head"])
    return {
        "sites": n_sites,
        "expert_per_site": expert,
        "router_per_site": routing,
        "adapter_total": n_sites * total,
        "head": head,
        "total": n_sites * total + head,
    }
