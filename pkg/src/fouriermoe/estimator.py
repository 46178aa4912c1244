"""scikit-learn estimators wrapping a single spectral mixture-of-experts site."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .config import RunConfig
from .harness.tasks import Dataset
from .router import softmax
from .training import build_state, model_forward, train

__all__ = ["FourierMoEClassifier", "FourierMoERegressor"]


class _FourierMoEBase(BaseEstimator):
    def __init__(self, width=None, n=16, n_experts=4, top_k=2, eta=64.0, lam=0.01,
                 lr=0.01, epochs=10, batch_size=32, warmup_ratio=0.06, bandwidth=0.12,
                 init="zero", variant="fourier", base_std=None, random_state=0):
        self.width = width
        self.n = n
        self.n_experts = n_experts
        self.top_k = top_k
        self.eta = eta
        self.lam = lam
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.warmup_ratio = warmup_ratio
        self.bandwidth = bandwidth
        self.init = init
        self.variant = variant
        self.base_std = base_std
        self.random_state = random_state

    def _config(self, kind, dims):
        seed = 0 if self.random_state is None else int(self.random_state)
        return RunConfig(task={"kind": kind}, dims=[list(dims)], n=self.n,
                         n_experts=self.n_experts, top_k=self.top_k, eta=self.eta,
                         lam=self.lam, lr=self.lr, epochs=self.epochs,
                         batch_size=self.batch_size, warmup_ratio=self.warmup_ratio,
                         bandwidth=self.bandwidth, init=self.init, variant=self.variant,
                         base_std=self.base_std, seed=seed)

    def _fit(self, X, y, kind, n_out, dims):
        self.config_ = self._config(kind, dims)
        empty = X[:0]
        data = Dataset("classify" if kind == "classify" else "regress", X, y, empty, y[:0],
                       n_classes=n_out if kind == "classify" else None)
        self.state_ = build_state(self.config_, X.shape[1], n_out, task_kind=data.kind)
        self.state_, log = train(self.config_, data, state=self.state_)
        self.loss_curve_ = [r["loss_total"] for r in log.steps]
        return self

    def _raw(self, X):
        check_is_fitted(self, "state_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return model_forward(self.state_, X)[0]


class FourierMoEClassifier(ClassifierMixin, _FourierMoEBase):
    """Adapter site of size ``width x n_features`` followed by a linear softmax head."""

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        width = self.width or X.shape[1]
        return self._fit(X, y_idx, "classify", len(self.classes_), (width, X.shape[1]))

    def predict_proba(self, X):
        return softmax(self._raw(X))

    def predict(self, X):
        raw = self._raw(X)
        return self.classes_[np.argmax(raw, axis=1)]


class FourierMoERegressor(RegressorMixin, _FourierMoEBase):
    """Adapter site mapping ``n_features`` inputs directly to the targets (no head)."""

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        self._1d = y.ndim == 1
        Y = y.reshape(len(y), -1)
        return self._fit(X, Y, "regress", Y.shape[1], (Y.shape[1], X.shape[1]))

    def predict(self, X):
        out = self._raw(X)
        return out[:, 0] if self._1d else out
