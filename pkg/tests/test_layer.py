import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fouriermoe.exceptions import InputError, ParameterError
from fouriermoe.experts import SpectralExpert, init_ensemble, init_expert, numerical_rank
from fouriermoe.layer import (
    AdapterSite,
    build_site,
    composite_update,
    effective_rank,
    forward,
    param_count,
)
from fouriermoe.router import Router, RoutingDecision, softmax
from fouriermoe.spectral import HalfSpectrum, hermitian_embed, idft2

seed_st = st.integers(0, 2**32 - 1)


def random_site(seed, dims=(6, 5), z=4, k=2, n=8, eta=2.0):
    rng = np.random.default_rng(seed)
    return build_site(rng.normal(size=dims), z, k, n, eta=eta, init_policy="gaussian:1",
                      seed=seed, router_std=1.0)


def test_zero_init_is_base_identity(rng):
    base = rng.normal(size=(7, 9))
    site = build_site(base, 4, 2, 12, eta=64.0, seed=0, router_std=1.0)
    X = rng.normal(size=(30, 9))
    assert np.abs(forward(X, site).output - X @ base.T).max() <= 1e-12


def test_eta_zero_is_base_identity(rng):
    site = random_site(1, eta=0.0)
    X = rng.normal(size=(10, 5))
    assert np.array_equal(forward(X, site).output, X @ site.base.T)


def test_dense_oracle_3x3():
    dims = (3, 3)
    W0 = np.arange(9.0).reshape(3, 3) / 10
    a = SpectralExpert(HalfSpectrum.from_items(dims, pairs=[((0, 1), 1 + 2j)],
                                               self_conjugate=[((0, 0), 0.5)]))
    b = SpectralExpert(HalfSpectrum.from_items(dims, pairs=[((1, 1), -0.5 + 0.25j),
                                                            ((1, 2), 0.3)]))
    phi = np.array([[1.0, -1.0, 0.5], [-0.5, 1.0, 0.0]])
    site = AdapterSite(W0, [a, b], Router(phi, 1), eta=3.0)
    X = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, -0.2, 0.9]])

    def dense(pairs, selfs):
        F = np.zeros(dims, complex)
        for (u, v), c in pairs:
            F[u, v] = c
            F[(-u) % 3, (-v) % 3] = np.conj(c)
        for (u, v), c in selfs:
            F[u, v] = c
        return idft2(F, method="naive").real

    dW = [dense([((0, 1), 1 + 2j)], [((0, 0), 0.5)]),
          dense([((1, 1), -0.5 + 0.25j), ((1, 2), 0.3)], [])]
    out = forward(X, site).output
    for x, h in zip(X, out):
        p = softmax(phi @ x)
        i = int(np.argmax(p))
        expected = W0 @ x + 3.0 * p[i] * (dW[i] @ x)
        assert np.abs(h - expected).max() <= 1e-10


def test_forward_errors():
    site = random_site(0)
    with pytest.raises(ParameterError):
        forward(np.zeros((2, 4)), site)
    with pytest.raises(InputError):
        forward(np.full((2, 5), np.nan), site)


def test_site_validation():
    e = init_ensemble((4, 4), 2, 4)
    with pytest.raises(ParameterError):
        AdapterSite(np.zeros((4, 5)), e, Router(np.zeros((2, 5)), 1))
    with pytest.raises(ParameterError):
        AdapterSite(np.zeros((4, 4)), e, Router(np.zeros((3, 4)), 1))
    with pytest.raises(ParameterError):
        AdapterSite(np.zeros((4, 4)), [], Router(np.zeros((1, 4)), 1))


def test_base_is_frozen():
    site = random_site(0)
    with pytest.raises(ValueError):
        site.base[0, 0] = 1.0


@given(seed_st, st.integers(1, 40))
def test_reconstruction_once_per_active_expert(seed, B):
    site = random_site(seed, z=6, k=2)
    X = np.random.default_rng(seed).normal(size=(B, 5))
    tr = forward(X, site)
    active = set(np.unique(tr.selected).tolist())
    assert site.reconstruction_calls == len(active)
    assert set(tr.reconstructions) == active


@given(seed_st, st.floats(-5, 5))
def test_output_linear_in_eta(seed, eta):
    site = random_site(seed, eta=1.0)
    X = np.random.default_rng(seed).normal(size=(8, 5))
    h0 = X @ site.base.T
    d1 = forward(X, site).output - h0
    site.eta = eta
    d = forward(X, site).output - h0
    assert np.abs(d - eta * d1).max() <= 1e-10 * (1 + abs(eta))


def test_composite_update_examples(rng):
    site = random_site(2, z=3, k=2)
    W = [e.reconstruct() for e in site.experts]
    zero = RoutingDecision(np.zeros(3), (0, 1), np.zeros(2))
    assert not np.any(composite_update(zero, site))
    one = RoutingDecision(np.array([1.0, 0, 0]), (1,), np.array([1.0]))
    assert np.array_equal(composite_update(one, site), W[1])
    two = RoutingDecision(np.array([0.6, 0, 0.4]), (0, 2), np.array([0.6, 0.4]))
    assert np.abs(composite_update(two, site) - (0.6 * W[0] + 0.4 * W[2])).max() <= 1e-12


def test_per_token_forward_matches_composite_update(rng):
    site = random_site(5, z=4, k=2)
    X = rng.normal(size=(12, 5))
    tr = forward(X, site)
    cache = {}
    for x, h, dec in zip(X, tr.output, tr.decisions):
        expected = site.base @ x + site.eta * composite_update(dec, site, cache) @ x
        assert np.abs(h - expected).max() <= 1e-12


def test_param_count_examples():
    e = SpectralExpert(HalfSpectrum.from_items((4, 4), pairs=[((0, 1), 0)]))
    site = AdapterSite(np.zeros((4, 4)), [e], Router(np.zeros((1, 4)), 1))
    assert param_count(site) == (2, 4, 6)


def test_param_count_large_site():
    d = 1024
    base = np.broadcast_to(np.zeros(1), (d, d))
    experts = init_ensemble((d, d), 8, 1008, seed=0)
    site = AdapterSite(base, experts, Router(np.zeros((8, d)), 2))
    assert param_count(site) == (8064, 8192, 8064 + 8192)


def test_param_count_matches_enumeration_on_random_configs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, n = int(rng.integers(2, 20)), int(rng.integers(2, 20))
        z = int(rng.integers(1, 6))
        budget = 2 * int(rng.integers(1, (m * n - 1) // 2 + 1))
        mode = ["complex", "real", "imag"][int(rng.integers(3))]
        site = build_site(np.zeros((m, n)), z, int(rng.integers(1, z + 1)), budget,
                          seed=int(rng.integers(1 << 30)), mode=mode)
        scalars = 0
        for e in site.experts:
            h = e.coeffs
            per = {"complex": 2 * len(h.pair_idx) + len(h.self_idx),
                   "real": len(h.pair_idx) + len(h.self_idx),
                   "imag": len(h.pair_idx)}[mode]
            scalars += per
            assert sum(a.size for a in e.parameters().values()) == per
        assert param_count(site) == (scalars, z * n, scalars + z * n)


def test_effective_rank_examples():
    site = build_site(np.zeros((6, 6)), 3, 2, 10, seed=0)
    dec = RoutingDecision(np.full(3, 1 / 3), (0, 1), np.full(2, 1 / 3))
    assert effective_rank(dec, site) == 0
    e = SpectralExpert(HalfSpectrum.from_items((6, 6), pairs=[((1, 2), 1 - 1j)]))
    single = AdapterSite(np.zeros((6, 6)), [e], Router(np.zeros((1, 6)), 1))
    dec = RoutingDecision(np.ones(1), (0,), np.ones(1))
    assert effective_rank(dec, single) <= 2


def test_effective_rank_bound_over_routing_outcomes(rng):
    site = build_site(rng.normal(size=(10, 10)), 5, 2, 12, eta=1.0, init_policy="gaussian:1",
                      seed=9, router_std=1.0)
    tr = forward(rng.normal(size=(100, 10)), site)
    cache = {}
    for dec in tr.decisions:
        K = sum(site.experts[i].support_size for i in dec.selected)
        assert effective_rank(dec, site, cache=cache) <= min(10, 10, K)


def test_narrow_experts_give_lower_rank_updates(rng):
    dims = (12, 12)
    narrow = init_expert(dims, 4, None, "gaussian:1", seed=1)
    wide = init_expert(dims, 16, None, "gaussian:1", seed=2)
    assert wide.support_size == 4 * narrow.support_size
    phi = np.zeros((2, 12))
    phi[0, 0], phi[1, 0] = 20.0, -20.0
    site = AdapterSite(np.zeros(dims), [narrow, wide], Router(phi, 1), eta=1.0)
    X = rng.normal(size=(40, 12))
    tr = forward(X, site)
    ranks = {0: set(), 1: set()}
    for dec in tr.decisions:
        ranks[dec.selected[0]].add(effective_rank(dec, site))
    assert ranks[0] and ranks[1]
    assert max(ranks[0]) < min(ranks[1])
    assert numerical_rank(narrow.reconstruct()) <= 4
