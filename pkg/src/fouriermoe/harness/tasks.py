"""Synthetic task generators.  Every generator is a pure function of its spec."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..exceptions import ParameterError
from ..experts import BandParams, default_centers, sample_band_indices, seed_entropy
from ..spectral import hermitian_embed, idft2, reflect_matrix

__all__ = [
    "Dataset",
    "TaskSpec",
    "TASK_KINDS",
    "gen_band_multitask",
    "gen_odd_target",
    "gen_target",
    "gen_target_fit",
    "gen_toy_classify",
    "make_dataset",
    "reference_accuracy",
]

TASK_KINDS = ("target_fit", "band_multitask", "toy_classify")
TARGETS = ("odd", "even", "random", "lowrank")


@dataclass
class TaskSpec:
    """Generator parameters.

    ``dims`` is ``(M, N)``: target-fit tasks fit an M x N matrix; classifiers
    draw inputs of length N and build M x N generating discriminators.
    """

    kind: str
    dims: tuple = (16, 16)
    n_classes: int = 4
    n_tasks: int = 4
    noise: float = 1.0
    separation: float = 4.0
    task_offset: float = 0.0
    n_per_task: int = 200
    n_coeffs: int = 16
    bandwidth: float = 0.08
    target: str = "odd"
    rank: int = 2
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.validate()

    def validate(self):
        if self.kind not in TASK_KINDS:
            raise ParameterError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if len(self.dims) != 2 or min(self.dims) < 1:
            raise ParameterError("dims must be two positive integers")
        if self.kind == "target_fit":
            if self.target not in TARGETS:
                raise ParameterError(f"target must be one of {TARGETS}")
            if self.target == "lowrank" and not 1 <= self.rank <= min(self.dims):
                raise ParameterError("rank out of range")
            return
        if not 1 <= self.n_tasks <= 8:
            raise ParameterError("task count must lie in [1, 8]")
        if not 2 <= self.n_classes <= self.dims[0]:
            raise ParameterError("need 2 <= n_classes <= M")
        if self.noise < 0 or not self.separation > 0 or self.task_offset < 0:
            raise ParameterError("noise must be >= 0 and separation > 0")
        if self.n_per_task < 5:
            raise ParameterError("need at least 5 samples per task")
        if self.n_coeffs < 2 or self.n_coeffs % 2:
            raise ParameterError("n_coeffs must be an even integer >= 2")

    @classmethod
    def from_dict(cls, data, dims=None):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown task keys: {', '.join(unknown)}")
        if "dims" not in data and dims is not None:
            data["dims"] = dims
        return cls(**data)

    def to_dict(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d


@dataclass
class Dataset:
    kind: str  # "classify" or "regress"
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    n_classes: int | None = None
    task_train: np.ndarray | None = None
    task_test: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def gen_odd_target(dims, seed=0):
    """Random circularly odd matrix ``(R - R o reflect) / 2``."""
    m, n = (int(d) for d in dims)
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(m, n))
    T = 0.5 * (R - reflect_matrix(R))
    T[0, 0] = 0.0
    assert np.array_equal(T, -reflect_matrix(T))
    return T


def gen_target(dims, kind="odd", seed=0, rank=2):
    m, n = (int(d) for d in dims)
    if kind == "odd":
        return gen_odd_target(dims, seed)
    rng = np.random.default_rng(seed)
    if kind == "even":
        R = rng.normal(size=(m, n))
        return 0.5 * (R + reflect_matrix(R))
    if kind == "random":
        return rng.normal(size=(m, n))
    if kind == "lowrank":
        return rng.normal(size=(m, rank)) @ rng.normal(size=(rank, n)) / np.sqrt(rank)
    raise ParameterError(f"unknown target kind {kind!r}")


def gen_target_fit(spec: TaskSpec) -> Dataset:
    """Inputs are the N basis vectors; outputs are the target's columns.

    A single adapter site with a zero base fits the target exactly when its
    ``eta * dW`` equals it, so the relative output error is the relative
    matrix error.
    """
    T = gen_target(spec.dims, spec.target, spec.seed, spec.rank)
    X = np.eye(spec.dims[1])
    Y = T.T.copy()
    return Dataset("regress", X, Y, X.copy(), Y.copy(), meta={"target": T})


def _discriminator(dims, n_classes, n_coeffs, band, seed):
    """``(C + 1) x N`` directions sharing one sampled support inside ``band``.

    Row ``c`` is row ``c`` of a matrix reconstructed from independent random
    coefficients on that support, so every row's frequency content along the
    input axis comes from the band.  The extra last row is the task offset
    direction.
    """
    skeleton = sample_band_indices(dims, n_coeffs, band, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed_entropy(seed)).spawn(1)[0])
    p = len(skeleton.pair_idx)
    rows = []
    for c in range(n_classes + 1):
        skeleton.pair_vals = rng.normal(size=p) + 1j * rng.normal(size=p)
        skeleton.self_vals = rng.normal(size=len(skeleton.self_idx))
        rows.append(idft2(hermitian_embed(skeleton)).real[c])
    return np.array(rows)


def _orthonormal_rows(rows):
    """Gram-Schmidt on the rows; keeps the row span (hence its frequency content)."""
    q, r = np.linalg.qr(rows.T)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-8 * diag.max():
        raise ParameterError("discriminator rows are linearly dependent; raise n_coeffs")
    return (q * np.sign(np.diag(r))).T


def _gaussian_classes(spec, discriminators, seed):
    rng = np.random.default_rng([*seed_entropy(seed), 99])
    c, per = spec.n_classes, spec.n_per_task
    X, y, task = [], [], []
    means = []
    for t, D in enumerate(discriminators):
        basis = _orthonormal_rows(D)
        mu = spec.separation * basis[:c] + spec.task_offset * basis[c]
        means.append(mu)
        labels = rng.integers(0, c, size=per)
        X.append(mu[labels] + spec.noise * rng.normal(size=(per, D.shape[1])))
        y.append(labels)
        task.append(np.full(per, t))
    X, y, task = np.concatenate(X), np.concatenate(y), np.concatenate(task)
    order = rng.permutation(len(y))
    X, y, task = X[order], y[order], task[order]
    cut = int(round(0.8 * len(y)))
    return Dataset("classify", X[:cut], y[:cut], X[cut:], y[cut:], n_classes=c,
                   task_train=task[:cut], task_test=task[cut:],
                   meta={"discriminators": discriminators, "means": means})


def gen_band_multitask(spec: TaskSpec) -> Dataset:
    """``T`` classification tasks whose generating discriminators live in distinct bands.

    Task ``t``'s discriminator is reconstructed from random coefficients on
    bins sampled around center ``(t + 1/2) / T``.  Class means are its
    ``C`` rows, orthonormalized and scaled to norm ``separation``, so the
    nearest-mean rule is a linear discriminator spanned by band-``t`` rows.
    Inputs add isotropic noise.
    Tasks are mixed uniformly and split 80/20 into train and test.
    """
    if spec.kind != "band_multitask":
        spec = TaskSpec(**{**spec.to_dict(), "kind": "band_multitask"})
    centers = default_centers(spec.n_tasks)
    discs = [_discriminator(spec.dims, spec.n_classes, spec.n_coeffs,
                            BandParams(c, spec.bandwidth), [spec.seed, t])
             for t, c in enumerate(centers)]
    return _gaussian_classes(spec, discs, spec.seed)


def gen_toy_classify(spec: TaskSpec) -> Dataset:
    """Single-task variant with a discriminator drawn uniformly over all bins."""
    discs = [_discriminator(spec.dims, spec.n_classes, spec.n_coeffs, None, [spec.seed, t])
             for t in range(spec.n_tasks)]
    return _gaussian_classes(spec, discs, spec.seed)


def reference_accuracy(dataset: Dataset, split="test"):
    """Accuracy of the nearest-class-mean rule that knows each sample's task."""
    X = dataset.X_test if split == "test" else dataset.X_train
    y = dataset.y_test if split == "test" else dataset.y_train
    task = dataset.task_test if split == "test" else dataset.task_train
    means = dataset.meta["means"]
    pred = np.empty(len(y), dtype=int)
    for t, mu in enumerate(means):
        rows = task == t
        d = ((X[rows, None, :] - mu[None]) ** 2).sum(axis=2)
        pred[rows] = np.argmin(d, axis=1)
    return float(np.mean(pred == y)) if len(y) else float("nan")


_GENERATORS = {
    "target_fit": gen_target_fit,
    "band_multitask": gen_band_multitask,
    "toy_classify": gen_toy_classify,
}


def make_dataset(task, dims=None) -> Dataset:
    """Build a dataset from a :class:`TaskSpec` or a task dict (``dims`` fills a missing field)."""
    spec = task if isinstance(task, TaskSpec) else TaskSpec.from_dict(task, dims)
    return _GENERATORS[spec.kind](spec)
