"""Band-limited spectral experts.

An expert owns a fixed set of active frequency bins (sampled once from a
Gaussian bandpass profile) and trains only the complex coefficients on them.
Coefficients live in canonical half-spectrum form, so every reconstruction is
exactly real.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import CapacityError, FrequencyRangeError, ParameterError
from .spectral import (
    HalfSpectrum,
    basis_kernel,
    canonical_bins,
    dft2,
    hermitian_embed,
    idft2,
)

__all__ = [
    "BandParams",
    "SpectralExpert",
    "band_distance",
    "band_probability",
    "default_centers",
    "init_ensemble",
    "init_expert",
    "numerical_rank",
    "parse_init_policy",
    "reconstruct",
    "sample_band_indices",
    "seed_entropy",
    "spectral_overlap",
]

MODES = ("complex", "real", "imag")


@dataclass(frozen=True)
class BandParams:
    """Gaussian bandpass profile: normalized center frequency and bandwidth."""

    center: float
    bandwidth: float

    def __post_init__(self):
        if not 0.0 <= self.center <= 1.0:
            raise ParameterError(f"band center must lie in [0, 1], got {self.center}")
        if not self.bandwidth > 0:
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth}")


def default_centers(z):
    """Evenly tiled centers ``(i + 1/2) / Z``."""
    return [(i + 0.5) / z for i in range(z)]


def _axis_coord(size):
    k = np.arange(size)
    half = size // 2
    c = np.minimum(k, size - k).astype(float)
    return c / half if half > 0 else np.zeros(size)


@lru_cache(maxsize=64)
def _distance_grid(m, n):
    du = _axis_coord(m)[:, None]
    dv = _axis_coord(n)[None, :]
    d = np.sqrt(du ** 2 + dv ** 2) / np.sqrt(2.0)
    d.setflags(write=False)
    return d


def band_distance(dims):
    """Normalized radial distance of every bin from DC; the corner bin is 1."""
    m, n = (int(d) for d in dims)
    return _distance_grid(m, n)


def _profile(d, center, bandwidth):
    out = np.zeros_like(d, dtype=float)
    pos = d > 0
    ratio = (d[pos] ** 2 - center ** 2) / (d[pos] * bandwidth)
    out[pos] = np.exp(-(ratio ** 2))
    return out


def band_probability(idx, dims, band: BandParams) -> float:
    """Gaussian bandpass weight of one bin; zero at DC, where the profile is singular."""
    if not band.bandwidth > 0:
        raise ParameterError("bandwidth must be positive")
    u, v = (int(i) for i in idx)
    m, n = (int(d) for d in dims)
    if not (0 <= u < m and 0 <= v < n):
        raise FrequencyRangeError(f"index {(u, v)} out of range for dims {(m, n)}")
    d = band_distance(dims)[u, v]
    return float(_profile(np.array([d]), band.center, band.bandwidth)[0])


@lru_cache(maxsize=256)
def _candidate_weights(m, n, center, bandwidth):
    pairs, selfs = canonical_bins((m, n))
    selfs = selfs[(selfs[:, 0] != 0) | (selfs[:, 1] != 0)]
    d = _distance_grid(m, n)
    if center is None:
        wp = np.ones(len(pairs))
        ws = np.ones(len(selfs))
    else:
        wp = _profile(d[pairs[:, 0], pairs[:, 1]], center, bandwidth)
        ws = _profile(d[selfs[:, 0], selfs[:, 1]], center, bandwidth)
    return pairs, selfs, np.concatenate([wp, ws])


def sample_band_indices(dims, n, band, seed) -> HalfSpectrum:
    """Sample an active index set whose full symmetric support has exactly ``n`` bins.

    Candidates are canonical pair representatives (cost 2) and non-DC
    self-conjugate bins (cost 1), weighted by :func:`band_probability`
    (``band=None`` weights all candidates equally).  Drawing order is an
    exponential race, i.e. weighted sampling without replacement.  A
    self-conjugate bin is taken while the remaining budget is even only if
    another one is still available to restore parity.  Zero-weight candidates
    are reached, in random order, only after every positive-weight one.

    Returns a zero-valued :class:`HalfSpectrum` skeleton in row-major order.
    """
    m, k = (int(d) for d in dims)
    n = int(n)
    if n < 2 or n % 2:
        raise ParameterError(f"n must be an even integer >= 2, got {n}")
    if band is None:
        pairs, selfs, w = _candidate_weights(m, k, None, None)
    else:
        pairs, selfs, w = _candidate_weights(m, k, float(band.center), float(band.bandwidth))
    n_pairs, n_selfs = len(pairs), len(selfs)
    if n > 2 * n_pairs + n_selfs:
        raise CapacityError(
            f"n={n} exceeds the {2 * n_pairs + n_selfs} non-DC bins of dims {(m, k)}")

    rng = np.random.default_rng(seed)
    keys = rng.exponential(size=len(w))
    tiebreak = rng.random(len(w))
    with np.errstate(divide="ignore", over="ignore"):
        keys = np.where(w > 0, keys / np.where(w > 0, w, 1.0), np.inf)
    order = _race_order(keys, tiebreak, n)

    take_pairs, take_selfs = _walk(order, n, n_pairs, n_selfs)
    if take_pairs is None:
        order = _race_order(keys, tiebreak, len(w))
        take_pairs, take_selfs = _walk(order, n, n_pairs, n_selfs)
    pair_idx = pairs[np.sort(np.asarray(take_pairs, dtype=int))]
    self_idx = selfs[np.sort(np.asarray(take_selfs, dtype=int) - n_pairs)]
    return HalfSpectrum((m, k), pair_idx=pair_idx, pair_vals=np.zeros(len(pair_idx)),
                        self_idx=self_idx, self_vals=np.zeros(len(self_idx)))


def _race_order(keys, tiebreak, need):
    total = len(keys)
    if need + 8 < total:
        # the walk needs about need/2 + a few candidates
        top = np.argpartition(keys, need + 8)[: need + 8]
        if np.all(np.isfinite(keys[top])):
            return top[np.lexsort((tiebreak[top], keys[top]))]
    return np.lexsort((tiebreak, keys))


def _walk(order, n, n_pairs, n_selfs):
    remaining = n
    selfs_left = n_selfs
    take_pairs, take_selfs, deferred = [], [], []
    for c in order:
        if remaining == 0:
            break
        if remaining == 1 and deferred:
            take_selfs.append(deferred.pop(0))
            remaining = 0
            break
        if c < n_pairs:
            if remaining >= 2:
                take_pairs.append(c)
                remaining -= 2
            continue
        if remaining % 2 == 1 or selfs_left >= 2:
            take_selfs.append(c)
            remaining -= 1
            selfs_left -= 1
        else:
            deferred.append(c)
    if remaining == 1 and deferred:
        take_selfs.append(deferred.pop(0))
        remaining = 0
    if remaining:
        return None, None
    return take_pairs, take_selfs


def parse_init_policy(policy):
    """Normalize an init policy to ``("zero", 0.0)`` or ``("gaussian", sigma)``.

    Accepts ``"zero"``, ``"gaussian:0.1"``, ``("gaussian", 0.1)`` or
    ``{"gaussian": 0.1}``.
    """
    if policy is None or policy == "zero":
        return ("zero", 0.0)
    if isinstance(policy, str) and policy.startswith("gaussian"):
        _, _, sigma = policy.partition(":")
        policy = ("gaussian", float(sigma) if sigma else 1.0)
    if isinstance(policy, dict) and len(policy) == 1 and "gaussian" in policy:
        policy = ("gaussian", policy["gaussian"])
    if isinstance(policy, (tuple, list)) and len(policy) == 2 and policy[0] == "gaussian":
        sigma = float(policy[1])
        if sigma < 0 or not np.isfinite(sigma):
            raise ParameterError(f"gaussian sigma must be finite and >= 0, got {sigma}")
        return ("gaussian", sigma)
    raise ParameterError(f"unknown init policy {policy!r}")


class SpectralExpert:
    """Trainable coefficients on a fixed conjugate-symmetric support.

    ``mode`` selects which scalars train: ``"complex"`` (real and imaginary
    parts), ``"real"`` (imaginary parts clamped to zero) or ``"imag"`` (real
    parts and self-conjugate bins clamped to zero).  Clamped scalars are not
    parameters at all; they cannot drift.
    """

    kind = "spectral"

    def __init__(self, skeleton: HalfSpectrum, band=None, mode="complex"):
        if mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
        self.dims = skeleton.dims
        self.band = band
        self.mode = mode
        self.pair_idx = skeleton.pair_idx.copy()
        self.self_idx = skeleton.self_idx.copy()
        self.pair_idx.setflags(write=False)
        self.self_idx.setflags(write=False)
        self._store = {
            "pair_re": np.real(skeleton.pair_vals).astype(float).copy(),
            "pair_im": np.imag(skeleton.pair_vals).astype(float).copy(),
            "self_re": skeleton.self_vals.astype(float).copy(),
        }
        if mode == "real":
            self._store["pair_im"][:] = 0.0
        elif mode == "imag":
            self._store["pair_re"][:] = 0.0
            self._store["self_re"][:] = 0.0

    @property
    def trainable_names(self):
        if self.mode == "complex":
            return ("pair_re", "pair_im", "self_re")
        if self.mode == "real":
            return ("pair_re", "self_re")
        return ("pair_im",)

    def parameters(self):
        """Trainable arrays by name, in canonical order; mutate in place to update."""
        return {name: self._store[name] for name in self.trainable_names}

    @property
    def n_scalars(self):
        return sum(a.size for a in self.parameters().values())

    @property
    def coeffs(self) -> HalfSpectrum:
        s = self._store
        return HalfSpectrum(self.dims, pair_idx=self.pair_idx,
                            pair_vals=s["pair_re"] + 1j * s["pair_im"],
                            self_idx=self.self_idx, self_vals=s["self_re"])

    def set_coeffs(self, pair_vals=None, self_vals=None):
        if pair_vals is not None:
            pair_vals = np.asarray(pair_vals, dtype=complex)
            if pair_vals.shape != self._store["pair_re"].shape:
                raise ParameterError("pair coefficient count does not match support")
            if self.mode != "imag":
                self._store["pair_re"][:] = pair_vals.real
            if self.mode != "real":
                self._store["pair_im"][:] = pair_vals.imag
        if self_vals is not None:
            self_vals = np.asarray(self_vals, dtype=float)
            if self_vals.shape != self._store["self_re"].shape:
                raise ParameterError("self-conjugate coefficient count does not match support")
            if self.mode != "imag":
                self._store["self_re"][:] = self_vals

    @property
    def support_size(self):
        return 2 * len(self.pair_idx) + len(self.self_idx)

    def support(self):
        return self.coeffs.support()

    def reconstruct(self, path="dense"):
        """Real spatial update ``idft2(hermitian_embed(coeffs))``.

        ``path="sparse"`` sums coefficient-weighted basis kernels over the
        support instead of running the FFT.
        """
        m, n = self.dims
        if path == "dense":
            S = idft2(hermitian_embed(self.coeffs))
            return np.ascontiguousarray(S.real)
        if path == "sparse":
            s = self._store
            out = np.zeros((m, n))
            for (u, v), a, b in zip(self.pair_idx, s["pair_re"], s["pair_im"]):
                out += 2.0 * np.real((a + 1j * b) * basis_kernel((u, v), self.dims))
            for (u, v), a in zip(self.self_idx, s["self_re"]):
                out += a * np.real(basis_kernel((u, v), self.dims))
            return out / (m * n)
        raise ParameterError(f"unknown reconstruction path {path!r}")

    def grad_from_spatial(self, G):
        """Map a gradient w.r.t. the spatial update onto the trainable coefficients.

        By linearity of the inverse DFT, ``dL/da = (2/MN) Re(dft2(G))[u, v]``
        and ``dL/db = (2/MN) Im(dft2(G))[u, v]`` for a pair; self-conjugate
        bins get ``(1/MN) Re(dft2(G))[u, v]``.
        """
        m, n = self.dims
        X = dft2(G)
        pu, pv = self.pair_idx[:, 0], self.pair_idx[:, 1]
        su, sv = self.self_idx[:, 0], self.self_idx[:, 1]
        full = {
            "pair_re": 2.0 * X[pu, pv].real / (m * n),
            "pair_im": 2.0 * X[pu, pv].imag / (m * n),
            "self_re": X[su, sv].real / (m * n),
        }
        return {name: full[name] for name in self.trainable_names}

    def check_structure(self):
        s = self._store
        assert s["pair_re"].shape == s["pair_im"].shape == (len(self.pair_idx),)
        assert s["self_re"].shape == (len(self.self_idx),)
        if self.mode == "real":
            assert not np.any(s["pair_im"])
        if self.mode == "imag":
            assert not np.any(s["pair_re"]) and not np.any(s["self_re"])

    def __repr__(self):
        band = (f"center={self.band.center:.3g}, W={self.band.bandwidth:.3g}"
                if self.band is not None else "uniform")
        return (f"SpectralExpert(dims={self.dims}, pairs={len(self.pair_idx)}, "
                f"self={len(self.self_idx)}, {band}, mode={self.mode!r})")


def init_expert(dims, n, band, init_policy="zero", seed=0, mode="complex") -> SpectralExpert:
    """Sample an expert's support and initialize its coefficients.

    The default ``"zero"`` policy makes the adapted layer exactly equal to the
    base layer at step 0.
    """
    kind, sigma = parse_init_policy(init_policy)
    skeleton = sample_band_indices(dims, n, band, seed)
    expert = SpectralExpert(skeleton, band=band, mode=mode)
    if kind == "gaussian" and sigma > 0:
        # independent stream so coefficient draws never perturb index sampling
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        p = len(expert.pair_idx)
        re = rng.normal(0.0, sigma, size=p)
        im = rng.normal(0.0, sigma, size=p)
        self_vals = rng.normal(0.0, sigma, size=len(expert.self_idx))
        expert.set_coeffs(re + 1j * im, self_vals)
    return expert


def init_ensemble(dims, z, n, bandwidth=0.12, centers=None, init_policy="zero",
                  seed=0, mode="complex", frequency_bias=True):
    """Build ``z`` experts with tiled band centers; ``frequency_bias=False`` samples uniformly."""
    if z < 1:
        raise ParameterError("need at least one expert")
    centers = default_centers(z) if centers is None else list(centers)
    if len(centers) != z:
        raise ParameterError("one center per expert required")
    experts = []
    for i, c in enumerate(centers):
        band = BandParams(float(c), float(bandwidth))
        skeleton_band = band if frequency_bias else None
        e = init_expert(dims, n, skeleton_band, init_policy, seed=[*seed_entropy(seed), i],
                        mode=mode)
        e.band = band if frequency_bias else None
        experts.append(e)
    return experts


def seed_entropy(seed):
    """Flatten an int or nested int list into a list usable as ``SeedSequence`` entropy."""
    if isinstance(seed, (list, tuple, np.ndarray)):
        out = []
        for s in seed:
            out.extend(seed_entropy(s))
        return out
    return [int(seed)]


def reconstruct(expert, path="dense"):
    return expert.reconstruct(path=path)


def numerical_rank(W, rel_tol=1e-10) -> int:
    """Count singular values above ``rel_tol`` times the largest; zero matrix has rank 0."""
    if not 0 < rel_tol < 1:
        raise ParameterError("rel_tol must lie in (0, 1)")
    s = np.linalg.svd(np.asarray(W), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def spectral_overlap(a, b) -> float:
    """``|supp(a) & supp(b)| / min(|supp(a)|, |supp(b)|)`` over full symmetric supports."""
    if tuple(a.dims) != tuple(b.dims):
        raise ParameterError(f"dimension mismatch: {a.dims} vs {b.dims}")
    sa, sb = a.support(), b.support()
    denom = min(len(sa), len(sb))
    if denom == 0:
        return 0.0
    return len(sa & sb) / denom
