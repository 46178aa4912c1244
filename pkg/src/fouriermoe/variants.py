"""Contrast adapters that share the expert interface of :class:`SpectralExpert`."""

from __future__ import annotations

import numpy as np

from .exceptions import ParameterError
from .spectral import dft2, idft2, truncation_error

__all__ = ["LowRankAdapter", "UnsymmetricExpert"]


class UnsymmetricExpert:
    """Independent complex coefficient on every active bin; the update is ``Re(idft2(F))``.

    Nothing ties a bin to its reflection, so the inverse transform is complex
    in general and the imaginary part is discarded.
    """

    kind = "unsymmetric"
    trainable_names = ("re", "im")

    def __init__(self, dims, bins, band=None, values=None):
        self.dims = tuple(int(d) for d in dims)
        bins = np.asarray(sorted({(int(u), int(v)) for u, v in np.asarray(bins).reshape(-1, 2)}),
                          dtype=np.int64).reshape(-1, 2)
        m, n = self.dims
        if len(bins) and not (np.all((0 <= bins[:, 0]) & (bins[:, 0] < m))
                              and np.all((0 <= bins[:, 1]) & (bins[:, 1] < n))):
            raise ParameterError("bin index out of range")
        bins.setflags(write=False)
        self.bins = bins
        self.band = band
        vals = np.zeros(len(bins), complex) if values is None else np.asarray(values, complex)
        if vals.shape != (len(bins),):
            raise ParameterError("one value per bin required")
        self._store = {"re": vals.real.copy(), "im": vals.imag.copy()}

    @classmethod
    def from_expert(cls, expert, copy_values=False):
        """Same support as ``expert``; optionally carry over its (symmetric) values."""
        F = None
        if copy_values:
            from .spectral import hermitian_embed
            F = hermitian_embed(expert.coeffs)
        bins = sorted(expert.support())
        vals = None if F is None else np.array([F[u, v] for u, v in bins])
        return cls(expert.dims, bins, band=getattr(expert, "band", None), values=vals)

    def parameters(self):
        return dict(self._store)

    @property
    def n_scalars(self):
        return 2 * len(self.bins)

    @property
    def support_size(self):
        return len(self.bins)

    def support(self):
        return {(int(u), int(v)) for u, v in self.bins}

    def spectrum(self):
        F = np.zeros(self.dims, dtype=complex)
        if len(self.bins):
            F[self.bins[:, 0], self.bins[:, 1]] = self._store["re"] + 1j * self._store["im"]
        return F

    def reconstruct(self, path="dense"):
        return np.ascontiguousarray(idft2(self.spectrum(), method="fast" if path == "dense" else "naive").real)

    def truncation_error(self):
        return truncation_error(self.spectrum())

    def grad_from_spatial(self, G):
        m, n = self.dims
        X = dft2(G)
        vals = X[self.bins[:, 0], self.bins[:, 1]]
        return {"re": vals.real / (m * n), "im": vals.imag / (m * n)}

    def check_structure(self):
        assert self._store["re"].shape == self._store["im"].shape == (len(self.bins),)


class LowRankAdapter:
    """``dW = B @ A`` with ``B`` zero-initialized and ``A`` Gaussian."""

    kind = "lowrank"
    trainable_names = ("A", "B")

    def __init__(self, dims, rank, seed=0, std=None):
        m, n = (int(d) for d in dims)
        if not 1 <= rank <= min(m, n):
            raise ParameterError(f"rank must lie in [1, {min(m, n)}], got {rank}")
        self.dims = (m, n)
        self.rank = int(rank)
        self.band = None
        std = 1.0 / np.sqrt(n) if std is None else float(std)
        rng = np.random.default_rng(seed)
        self._store = {"A": rng.normal(0.0, std, size=(rank, n)), "B": np.zeros((m, rank))}

    def parameters(self):
        return dict(self._store)

    @property
    def n_scalars(self):
        return self._store["A"].size + self._store["B"].size

    def reconstruct(self, path="dense"):
        return self._store["B"] @ self._store["A"]

    def grad_from_spatial(self, G):
        return {"A": self._store["B"].T @ G, "B": G @ self._store["A"].T}

    def check_structure(self):
        assert self._store["A"].shape == (self.rank, self.dims[1])
        assert self._store["B"].shape == (self.dims[0], self.rank)
