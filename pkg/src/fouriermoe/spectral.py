"""Two-dimensional DFT machinery and Hermitian-symmetry helpers.

Conventions: the forward transform is unnormalized and the inverse carries
``1/(M*N)``::

    S(q, y) = 1/(MN) * sum_{u,v} F(u, v) * exp(+2j*pi*(u*q/M + v*y/N))

Two transform paths are provided.  ``method="fast"`` runs a mixed-radix
Cooley-Tukey FFT along each axis (prime-length factors fall back to a direct
DFT of that length); ``method="naive"`` evaluates the four-index sum directly
and exists as the reference the fast path is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import FrequencyRangeError, InputError, ParameterError

__all__ = [
    "HalfSpectrum",
    "basis_kernel",
    "canonical_bins",
    "canonical_index",
    "dft2",
    "hermitian_embed",
    "idft2",
    "imaginary_energy",
    "is_hermitian",
    "is_self_conjugate",
    "radial_psd",
    "reflect_index",
    "reflect_matrix",
    "truncation_error",
]


def _check_dims(dims):
    m, n = (int(d) for d in dims)
    if m < 1 or n < 1:
        raise ParameterError(f"matrix dimensions must be positive, got {dims!r}")
    return m, n


def _check_index(idx, dims):
    m, n = _check_dims(dims)
    u, v = (int(i) for i in idx)
    if not (0 <= u < m and 0 <= v < n):
        raise FrequencyRangeError(f"index {(u, v)} out of range for dims {(m, n)}")
    return u, v, m, n


def _as_matrix(a, dtype):
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("matrix contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# index reflection

def reflect_index(idx, dims):
    """Return ``(-u mod M, -v mod N)``, the conjugate partner of ``idx``."""
    u, v, m, n = _check_index(idx, dims)
    return (-u) % m, (-v) % n


def is_self_conjugate(idx, dims):
    return reflect_index(idx, dims) == tuple(int(i) for i in idx)


def canonical_index(idx, dims):
    """Lexicographically smaller member of ``{idx, reflect(idx)}``."""
    u, v, _, _ = _check_index(idx, dims)
    return min((u, v), reflect_index((u, v), dims))


@lru_cache(maxsize=128)
def _canonical_bins(m, n):
    uu, vv = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    ru, rv = (-uu) % m, (-vv) % n
    self_mask = (uu == ru) & (vv == rv)
    # row-major key comparison picks the canonical member of each pair
    rep_mask = (uu * n + vv) < (ru * n + rv)
    pairs = np.stack([uu[rep_mask], vv[rep_mask]], axis=1)
    selfs = np.stack([uu[self_mask], vv[self_mask]], axis=1)
    pairs.setflags(write=False)
    selfs.setflags(write=False)
    return pairs, selfs


def canonical_bins(dims):
    """Enumerate the spectrum's canonical pair representatives and self-conjugate bins.

    Both arrays have shape ``(count, 2)`` and are in row-major order.  DC is
    included among the self-conjugate bins.
    """
    m, n = _check_dims(dims)
    return _canonical_bins(m, n)


def reflect_matrix(a):
    """Spatial or spectral reflection ``A(q, y) -> A(-q mod M, -y mod N)``."""
    a = np.asarray(a)
    return np.roll(a[::-1, ::-1], shift=(1, 1), axis=(0, 1))


# ---------------------------------------------------------------------------
# half-spectrum storage

@dataclass
class HalfSpectrum:
    """Sparse conjugate-symmetric spectrum stored by canonical representative.

    ``pair_idx[i]`` carries the complex value ``pair_vals[i]``; its reflection
    implicitly carries the conjugate.  Self-conjugate bins hold real scalars,
    so the imaginary part at DC/Nyquist bins cannot exist in this storage.
    """

    dims: tuple
    pair_idx: np.ndarray = field(default=None)
    pair_vals: np.ndarray = field(default=None)
    self_idx: np.ndarray = field(default=None)
    self_vals: np.ndarray = field(default=None)

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.pair_idx = _index_array(self.pair_idx)
        self.self_idx = _index_array(self.self_idx)
        self.pair_vals = (np.zeros(0, complex) if self.pair_vals is None
                          else np.asarray(self.pair_vals, dtype=complex).reshape(-1))
        self.self_vals = (np.zeros(0) if self.self_vals is None
                          else np.asarray(self.self_vals, dtype=float).reshape(-1))
        if len(self.pair_vals) != len(self.pair_idx):
            raise ParameterError("pair_idx and pair_vals lengths differ")
        if len(self.self_vals) != len(self.self_idx):
            raise ParameterError("self_idx and self_vals lengths differ")
        self.validate()

    @classmethod
    def from_items(cls, dims, pairs=(), self_conjugate=()):
        """Build from ``[((u, v), value), ...]`` lists."""
        pairs = list(pairs)
        selfs = list(self_conjugate)
        return cls(
            dims,
            pair_idx=[p[0] for p in pairs],
            pair_vals=[p[1] for p in pairs],
            self_idx=[s[0] for s in selfs],
            self_vals=[s[1] for s in selfs],
        )

    def validate(self):
        m, n = self.dims
        seen = set()
        for u, v in self.pair_idx:
            u, v, _, _ = _check_index((u, v), self.dims)
            r = ((-u) % m, (-v) % n)
            if r == (u, v):
                raise ParameterError(f"pair representative {(u, v)} is self-conjugate")
            if (u, v) > r:
                raise ParameterError(f"pair representative {(u, v)} is not canonical")
            if (u, v) in seen or r in seen:
                raise ParameterError(f"index {(u, v)} appears twice")
            seen.update({(u, v), r})
        for u, v in self.self_idx:
            u, v, _, _ = _check_index((u, v), self.dims)
            if ((-u) % m, (-v) % n) != (u, v):
                raise ParameterError(f"{(u, v)} is not a self-conjugate bin")
            if (u, v) in seen:
                raise ParameterError(f"index {(u, v)} appears twice")
            seen.add((u, v))
        if not (np.all(np.isfinite(self.pair_vals)) and np.all(np.isfinite(self.self_vals))):
            raise InputError("non-finite coefficient")

    @property
    def support_size(self):
        """Number of nonzero-eligible bins in the full symmetric spectrum."""
        return 2 * len(self.pair_idx) + len(self.self_idx)

    def support(self):
        """Set of every bin (both pair members) this spectrum may occupy."""
        m, n = self.dims
        out = {(int(u), int(v)) for u, v in self.self_idx}
        for u, v in self.pair_idx:
            out.add((int(u), int(v)))
            out.add((int(-u) % m, int(-v) % n))
        return out


def _index_array(idx):
    if idx is None:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.asarray(idx, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return arr.reshape(-1, 2)


def hermitian_embed(h: HalfSpectrum) -> np.ndarray:
    """Expand a half spectrum into its dense Hermitian-symmetric matrix."""
    m, n = h.dims
    F = np.zeros((m, n), dtype=complex)
    if len(h.pair_idx):
        u, v = h.pair_idx[:, 0], h.pair_idx[:, 1]
        F[u, v] = h.pair_vals
        F[(-u) % m, (-v) % n] = np.conj(h.pair_vals)
    if len(h.self_idx):
        F[h.self_idx[:, 0], h.self_idx[:, 1]] = h.self_vals
    return F


def is_hermitian(F, tol=0.0) -> bool:
    if tol < 0:
        raise ParameterError("tol must be non-negative")
    F = np.asarray(F, dtype=complex)
    return bool(np.max(np.abs(F - np.conj(reflect_matrix(F)))) <= tol)


# ---------------------------------------------------------------------------
# transforms

def _smallest_factor(n):
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=256)
def _twiddles(n, p, sign):
    # w[r, K] = exp(sign * 2j*pi * r*K / n); reduce r*K mod n for accuracy
    r = np.arange(p)[:, None]
    k = np.arange(n)[None, :]
    w = np.exp(sign * 2j * np.pi * ((r * k) % n) / n)
    w.setflags(write=False)
    return w


def _dft_last(a, sign):
    n = a.shape[-1]
    return a @ _twiddles(n, n, sign).T


def _fft_last(a, sign):
    """Mixed-radix decimation-in-time FFT along the last axis."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    p = _smallest_factor(n)
    if p == n:
        return _dft_last(a, sign)
    m = n // p
    # residue r collects samples x[j*p + r]
    sub = np.swapaxes(a.reshape(*a.shape[:-1], m, p), -1, -2)
    sub = _fft_last(sub, sign)  # (..., p, m)
    tw = _twiddles(n, p, sign)  # (p, n)
    kmod = np.arange(n) % m
    out = np.zeros(a.shape, dtype=complex)
    for r in range(p):
        out += tw[r] * sub[..., r, kmod]
    return out


def _fft2(a, sign):
    a = _fft_last(a.astype(complex), sign)
    return np.swapaxes(_fft_last(np.swapaxes(a, -1, -2), sign), -1, -2)


def _naive_transform(a, sign):
    m, n = a.shape
    u = np.arange(m)[:, None]
    v = np.arange(n)[None, :]
    out = np.empty((m, n), dtype=complex)
    for q in range(m):
        for y in range(n):
            phase = ((u * q) % m) / m + ((v * y) % n) / n
            out[q, y] = np.sum(a * np.exp(sign * 2j * np.pi * phase))
    return out


def idft2(F, method="fast") -> np.ndarray:
    """Inverse 2-D DFT with ``1/(MN)`` normalization."""
    F = _as_matrix(F, complex)
    m, n = F.shape
    if method == "fast":
        return _fft2(F, +1) / (m * n)
    if method == "naive":
        return _naive_transform(F, +1) / (m * n)
    raise ParameterError(f"unknown method {method!r}")


def dft2(S, method="fast") -> np.ndarray:
    """Unnormalized forward 2-D DFT; ``idft2(dft2(S)) == S``."""
    S = _as_matrix(S, complex)
    if method == "fast":
        return _fft2(S, -1)
    if method == "naive":
        return _naive_transform(S, -1)
    raise ParameterError(f"unknown method {method!r}")


def basis_kernel(idx, dims) -> np.ndarray:
    """Rank-1 Fourier kernel ``B(q, y) = exp(2j*pi*(u*q/M + v*y/N))``."""
    u, v, m, n = _check_index(idx, dims)
    f = np.exp(2j * np.pi * ((u * np.arange(m)) % m) / m)
    g = np.exp(2j * np.pi * ((v * np.arange(n)) % n) / n)
    return np.outer(f, g)


# ---------------------------------------------------------------------------
# truncation and spectral energy

def truncation_error(F) -> float:
    """Energy discarded by ``Re(idft2(F))``, computed in the spectral domain.

    Equals ``sum(Im(idft2(F))**2)``; the constant ``1/(4MN)`` follows from
    Parseval under the ``1/(MN)`` inverse normalization.
    """
    F = _as_matrix(F, complex)
    m, n = F.shape
    diff = F - np.conj(reflect_matrix(F))
    return float(np.sum(np.abs(diff) ** 2) / (4 * m * n))


def imaginary_energy(F, method="naive") -> float:
    """Spatial-domain ``sum(Im(idft2(F))**2)``; brute force by default."""
    return float(np.sum(np.imag(idft2(F, method=method)) ** 2))


def _centered_radius(dims):
    m, n = dims
    u = np.arange(m)
    v = np.arange(n)
    cu = np.minimum(u, m - u)[:, None]
    cv = np.minimum(v, n - v)[None, :]
    return np.sqrt(cu ** 2 + cv ** 2)


def radial_psd(W, bins) -> np.ndarray:
    """Radially binned mean power ``|dft2(W)|^2``.

    Radius uses centered frequencies ``(min(u, M-u), min(v, N-v))`` normalized
    by the largest radius on the grid; bins split ``[0, 1]`` uniformly.  Empty
    bins report zero.
    """
    bins = int(bins)
    if bins < 1:
        raise ParameterError("bins must be >= 1")
    W = _as_matrix(W, float)
    power = np.abs(dft2(W)) ** 2
    r = _centered_radius(W.shape)
    rmax = r.max()
    rn = r / rmax if rmax > 0 else np.zeros_like(r)
    which = np.minimum((rn * bins).astype(int), bins - 1).ravel()
    sums = np.bincount(which, weights=power.ravel(), minlength=bins)
    counts = np.bincount(which, minlength=bins)
    out = np.zeros(bins)
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz]
    return out
