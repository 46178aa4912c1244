"""Property-verification driver behind ``fouriermoe verify``.

Each check returns ``(name, passed, detail)``.  Sample counts are kept small
so the whole driver runs in seconds; the test suite runs the same properties
at full scale.
"""

from __future__ import annotations

import numpy as np

from ..config import RunConfig
from ..experts import BandParams, band_distance, init_ensemble, init_expert, numerical_rank
from ..experts import sample_band_indices, spectral_overlap
from ..layer import build_site, composite_update, forward
from ..router import Router, gate_batch, load_balance_loss
from ..spectral import (
    HalfSpectrum,
    basis_kernel,
    canonical_bins,
    dft2,
    hermitian_embed,
    idft2,
    imaginary_energy,
    truncation_error,
)
from ..training import ParameterState, build_state, finite_difference_check, optimizer_step

__all__ = ["SUITES", "random_half_spectrum", "run_suite"]


def random_half_spectrum(dims, rng, density=1.0):
    pairs, selfs = canonical_bins(dims)
    keep_p = rng.random(len(pairs)) < density
    keep_s = rng.random(len(selfs)) < density
    p = int(keep_p.sum())
    return HalfSpectrum(dims, pair_idx=pairs[keep_p],
                        pair_vals=rng.normal(size=p) + 1j * rng.normal(size=p),
                        self_idx=selfs[keep_s], self_vals=rng.normal(size=int(keep_s.sum())))


def _dims(rng, hi=24):
    return int(rng.integers(1, hi + 1)), int(rng.integers(1, hi + 1))


def _core(rng):
    worst = 0.0
    for _ in range(100):
        h = random_half_spectrum(_dims(rng), rng, rng.random())
        worst = max(worst, float(np.abs(idft2(hermitian_embed(h)).imag).max()))
    yield "hermitian spectra synthesize real matrices", worst <= 1e-10, f"max |Im| = {worst:.2e}"

    positive = True
    for _ in range(50):
        dims = _dims(rng)
        if dims == (1, 1):
            continue
        F = rng.normal(size=dims) + 1j * rng.normal(size=dims)
        positive &= imaginary_energy(F, method="fast") > 0
    yield "non-hermitian spectra leave imaginary energy", bool(positive), ""

    worst = 0.0
    for _ in range(50):
        dims = _dims(rng, 12)
        F = rng.normal(size=dims) + 1j * rng.normal(size=dims)
        a, b = truncation_error(F), imaginary_energy(F, method="naive")
        worst = max(worst, abs(a - b) / max(b, 1e-300))
    yield "truncation formula equals imaginary energy", worst <= 1e-9, f"max rel = {worst:.2e}"

    worst_t = worst_r = 0.0
    for _ in range(20):
        dims = _dims(rng, 20)
        F = rng.normal(size=dims) + 1j * rng.normal(size=dims)
        worst_t = max(worst_t, float(np.abs(idft2(F) - idft2(F, method="naive")).max()))
        worst_r = max(worst_r, float(np.abs(dft2(idft2(F)) - F).max()))
    yield "fast transform matches naive sum", worst_t <= 1e-10, f"max = {worst_t:.2e}"
    yield "dft2 inverts idft2", worst_r <= 1e-9, f"max = {worst_r:.2e}"


def _experts(rng):
    ok = True
    for _ in range(30):
        dims = (int(rng.integers(2, 20)), int(rng.integers(2, 20)))
        cap = dims[0] * dims[1] - 1
        n = int(rng.integers(1, cap // 2 + 1)) * 2
        if n > cap:
            continue
        band = BandParams(float(rng.random()), float(rng.uniform(0.05, 0.5)))
        ok &= sample_band_indices(dims, n, band, int(rng.integers(1 << 30))).support_size == n
    yield "sampled supports have exactly n bins", bool(ok), ""

    d = band_distance((64, 64))
    inside = []
    for center in (0.25, 0.5, 0.75):
        e = init_expert((64, 64), 200, BandParams(center, 0.05), seed=int(rng.integers(1 << 30)))
        dist = np.array([d[u, v] for u, v in e.support()])
        inside.append(np.mean(np.abs(dist - center) <= 0.15))
    yield "band sampling concentrates near the center", min(inside) >= 0.9, \
        f"min fraction = {min(inside):.3f}"

    ok = True
    for _ in range(30):
        dims = (int(rng.integers(2, 16)), int(rng.integers(2, 16)))
        n = 2 * int(rng.integers(1, (dims[0] * dims[1] - 1) // 2 + 1))
        e = init_expert(dims, n, None, "gaussian:1", int(rng.integers(1 << 30)))
        ok &= numerical_rank(e.reconstruct()) <= min(*dims, e.support_size)
    yield "expert rank is bounded by min(M, N, K)", bool(ok), ""

    ok_kernel = ok_pair = True
    for _ in range(10):
        dims = (int(rng.integers(2, 12)), int(rng.integers(2, 12)))
        u, v = int(rng.integers(dims[0])), int(rng.integers(dims[1]))
        ok_kernel &= numerical_rank(basis_kernel((u, v), dims)) == 1
        pairs, _ = canonical_bins(dims)
        if len(pairs):
            h = HalfSpectrum(dims, pair_idx=pairs[:1], pair_vals=rng.normal(size=1) + 1j)
            ok_pair &= numerical_rank(idft2(hermitian_embed(h)).real) <= 2
    yield "basis kernels are rank one", bool(ok_kernel), ""
    yield "single-pair experts have rank at most two", bool(ok_pair), ""

    overlaps = []
    for w in (0.06, 0.12, 0.24, 0.48, 0.96):
        ens = init_ensemble((32, 32), 8, 64, bandwidth=w, seed=3)
        vals = [spectral_overlap(a, b) for i, a in enumerate(ens) for b in ens[i + 1:]]
        overlaps.append(float(np.mean(vals)))
    mono = all(a <= b for a, b in zip(overlaps, overlaps[1:]))
    yield "overlap grows with bandwidth", mono, " ".join(f"{o:.3f}" for o in overlaps)


def _router(rng):
    z, k = 8, 2
    probs = np.full((16, z), 1.0 / z)
    selected = np.array([[(2 * b) % z, (2 * b + 1) % z] for b in range(16)])
    val = load_balance_loss((probs, selected), z)
    yield "uniform routing gives loss k", abs(val - k) <= 1e-12, f"loss = {val!r}"

    probs = np.zeros((16, z))
    probs[:, 0] = 1.0
    val = load_balance_loss((probs, np.zeros((16, 1), dtype=int)), z)
    yield "collapsed routing gives loss Z", abs(val - z) <= 1e-6, f"loss = {val!r}"

    router = Router.init(z, 10, k, std=1.0, seed=int(rng.integers(1 << 30)))
    X = rng.normal(size=(64, 10))
    p, sel, g = gate_batch(X, router)
    ok = np.allclose(p.sum(axis=1), 1.0, atol=1e-12) and np.all(np.diff(sel, axis=1) > 0)
    kth = np.sort(p, axis=1)[:, -k]
    ok &= bool(np.all(g >= kth[:, None] - 1e-15))
    yield "top-k keeps the k largest probabilities", bool(ok), ""

    site = build_site(rng.normal(size=(8, 8)), 4, 2, 12, eta=1.0, init_policy="gaussian:1",
                      seed=int(rng.integers(1 << 30)), router_std=1.0)
    tr = forward(rng.normal(size=(20, 8)), site)
    ok = True
    cache = {}
    for dec in tr.decisions:
        K = sum(site.experts[i].support_size for i in dec.selected)
        ok &= numerical_rank(composite_update(dec, site, cache)) <= min(8, 8, K)
    yield "composite rank obeys the selected-support bound", bool(ok), ""


def _grad(rng):
    worst = 0.0
    for seed in range(2):
        cfg = RunConfig(task={"kind": "band_multitask"}, dims=[[8, 8], [8, 8]], n=16,
                        n_experts=4, top_k=2, eta=2.0, init="gaussian:0.2", router_std=0.5,
                        seed=seed)
        state = build_state(cfg, 8, 3)
        X = rng.normal(size=(6, 8))
        y = rng.integers(0, 3, size=6)
        worst = max(worst, finite_difference_check(state, (X, y), eps=1e-6, lam=0.1))
    yield "analytic gradients match finite differences", worst <= 1e-4, f"max rel = {worst:.2e}"

    theta = np.array([0.0])
    st = ParameterState({"theta": theta})
    for _ in range(500):
        optimizer_step(st, {"theta": 2.0 * (theta - 3.0)}, 0.05)
    yield "optimizer converges on a quadratic", abs(theta[0] - 3.0) <= 1e-3, \
        f"theta = {theta[0]:.6f}"


SUITES = {"core": _core, "experts": _experts, "router": _router, "grad": _grad}


def run_suite(name="all", seed=0):
    """Run one suite (or ``"all"``); returns the list of ``(name, passed, detail)``."""
    names = list(SUITES) if name == "all" else [name]
    results = []
    for n in names:
        rng = np.random.default_rng([seed, list(SUITES).index(n)])
        results.extend((f"{n}: {label}", bool(ok), detail) for label, ok, detail in SUITES[n](rng))
    return results
