"""Composite objective, analytic gradients, AdamW and the training loop.

The model is a chain of adapter sites followed by a task head: linear
(``C x M``), dense-tanh-dense when ``head_hidden`` is set, or a fixed readout
of the first C outputs.
Classification tasks use mean cross-entropy on the head logits; regression
tasks use mean squared error on the last site's output.

Top-k selection is treated as a constant during differentiation.  Gradients
reach the router through the selected gate values and through the
load-balancing term's mean probabilities; the auxiliary loss is averaged over
sites.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError, TrainingError
from .experts import init_ensemble, seed_entropy
from .layer import AdapterSite, forward
from .router import Router, load_balance_terms, softmax
from .variants import LowRankAdapter, UnsymmetricExpert

__all__ = [
    "LossBreakdown",
    "ParameterState",
    "TrainLog",
    "TrainState",
    "backward",
    "build_state",
    "evaluate",
    "finite_difference_check",
    "gradient_check",
    "linear_schedule",
    "loss_and_grads",
    "model_forward",
    "optimizer_step",
    "routing_frequencies",
    "total_loss",
    "train",
]


@dataclass
class LossBreakdown:
    task: float
    aux: float
    lam: float
    total: float


class ParameterState:
    """Named trainable arrays plus AdamW moments and a step counter."""

    def __init__(self, params=None):
        self._params = dict(params or {})
        self.moments = {}
        self.step = 0

    def named_parameters(self):
        return list(self._params.items())

    def group_of(self, name):
        return "default"


class TrainState(ParameterState):
    """Adapter sites, task head, optimizer moments and step count."""

    def __init__(self, sites, head=None, task_kind="classify", n_outputs=None, seed=0):
        super().__init__()
        if task_kind not in ("classify", "regress"):
            raise ParameterError(f"unknown task kind {task_kind!r}")
        self.sites = list(sites)
        self.head = dict(head or {})
        self.task_kind = task_kind
        self.n_outputs = n_outputs
        self.seed = seed
        for a, b in zip(self.sites, self.sites[1:]):
            if b.dims[1] != a.dims[0]:
                raise ParameterError("sites do not chain")

    def named_parameters(self):
        out = []
        for s, site in enumerate(self.sites):
            for i, expert in enumerate(site.experts):
                for name, arr in expert.parameters().items():
                    out.append((f"sites.{s}.experts.{i}.{name}", arr))
            out.append((f"sites.{s}.router.phi", site.router.phi))
        for name in ("hidden_weight", "hidden_bias", "weight", "bias"):
            if name in self.head:
                out.append((f"head.{name}", self.head[name]))
        return out

    def group_of(self, name):
        if ".experts." in name:
            return "expert"
        if ".router." in name:
            return "router"
        return "head"

    @property
    def n_scalars(self):
        return sum(a.size for _, a in self.named_parameters())

    def check_invariants(self):
        for site in self.sites:
            for expert in site.experts:
                expert.check_structure()


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# forward / loss

def model_forward(state: TrainState, X):
    """Run every site and the head; returns ``(outputs, traces, head_cache)``."""
    h = np.asarray(X, dtype=float)
    traces = []
    for site in state.sites:
        tr = forward(h, site)
        traces.append(tr)
        h = tr.output
    cache = {"h": h}
    if state.task_kind == "regress":
        return h, traces, cache
    if not state.head:
        return h[:, :state.n_outputs], traces, cache
    if "hidden_weight" in state.head:
        a = np.tanh(h @ state.head["hidden_weight"].T + state.head["hidden_bias"])
        cache["a"] = a
        return a @ state.head["weight"].T + state.head["bias"], traces, cache
    return h @ state.head["weight"].T + state.head["bias"], traces, cache


def _task_loss(state, out, y):
    B = out.shape[0]
    if state.task_kind == "regress":
        y = np.asarray(y, dtype=float).reshape(out.shape)
        diff = out - y
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    y = np.asarray(y, dtype=int)
    shifted = out - out.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(B), y]))
    d = softmax(out)
    d[np.arange(B), y] -= 1.0
    return loss, d / B


def _aux_loss(traces):
    vals = []
    for tr in traces:
        z = tr.probs.shape[1]
        f, P = load_balance_terms(tr.probs, tr.selected, z)
        vals.append(z * float(np.dot(f, P)))
    return float(np.mean(vals))


def _site_backward(site: AdapterSite, tr, dH, aux_weight, grads, prefix):
    X = tr.inputs
    B, Z = tr.probs.shape
    dX = dH @ site.base
    Gm = tr.gate_matrix
    dGate = np.zeros((B, Z))
    for i, expert in enumerate(site.experts):
        if i not in tr.routed:
            for name, arr in expert.parameters().items():
                grads[f"{prefix}.experts.{i}.{name}"] = np.zeros_like(arr)
            continue
        rows, Y = tr.routed[i]
        dW = tr.reconstructions[i]
        g = Gm[rows, i:i + 1]
        dHr = dH[rows]
        dX[rows] += site.eta * g * (dHr @ dW)
        G = site.eta * (g * dHr).T @ X[rows]
        for name, val in expert.grad_from_spatial(G).items():
            grads[f"{prefix}.experts.{i}.{name}"] = val
        dGate[rows, i] = site.eta * np.sum(dHr * Y, axis=1)

    P = tr.probs
    dP = np.zeros((B, Z))
    dg = np.take_along_axis(dGate, tr.selected, axis=1)
    if site.renormalize:
        p_sel = np.take_along_axis(P, tr.selected, axis=1)
        s = p_sel.sum(axis=1, keepdims=True)
        dpsel = (dg - np.sum(dg * tr.gates, axis=1, keepdims=True)) / s
    else:
        dpsel = dg
    np.put_along_axis(dP, tr.selected, dpsel, axis=1)
    if aux_weight:
        f, _ = load_balance_terms(P, tr.selected, Z)
        dP += aux_weight * Z * f[None, :] / B
    dlogits = P * (dP - np.sum(dP * P, axis=1, keepdims=True))
    grads[f"{prefix}.router.phi"] = dlogits.T @ X
    dX += dlogits @ site.router.phi
    return dX


def loss_and_grads(state: TrainState, X, y, lam=0.0, need_grads=True):
    """Composite loss and, optionally, its gradient for every trainable array."""
    if lam < 0:
        raise ParameterError("lambda must be >= 0")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("empty batch")
    out, traces, cache = model_forward(state, X)
    task, dout = _task_loss(state, out, y)
    aux = _aux_loss(traces)
    breakdown = LossBreakdown(task, aux, float(lam), task + lam * aux)
    if not need_grads:
        return breakdown, None, traces

    grads = {}
    if state.task_kind == "regress":
        dH = dout
    elif not state.head:
        dH = np.zeros_like(cache["h"])
        dH[:, :state.n_outputs] = dout
    elif "hidden_weight" in state.head:
        a = cache["a"]
        grads["head.weight"] = dout.T @ a
        grads["head.bias"] = dout.sum(axis=0)
        da = dout @ state.head["weight"]
        dpre = da * (1.0 - a ** 2)
        grads["head.hidden_weight"] = dpre.T @ cache["h"]
        grads["head.hidden_bias"] = dpre.sum(axis=0)
        dH = dpre @ state.head["hidden_weight"]
    else:
        grads["head.weight"] = dout.T @ cache["h"]
        grads["head.bias"] = dout.sum(axis=0)
        dH = dout @ state.head["weight"]

    aux_weight = lam / len(state.sites)
    for s in reversed(range(len(state.sites))):
        dH = _site_backward(state.sites[s], traces[s], dH, aux_weight, grads, f"sites.{s}")
    return breakdown, grads, traces


def total_loss(batch, state, lam=0.0) -> LossBreakdown:
    X, y = batch
    return loss_and_grads(state, X, y, lam, need_grads=False)[0]


def backward(batch, state, lam=0.0):
    X, y = batch
    return loss_and_grads(state, X, y, lam)[1]


# ---------------------------------------------------------------------------
# gradient verification

def gradient_check(loss_fn, params, grads, eps=1e-6, return_details=False):
    """Compare ``grads`` with central differences of ``loss_fn()`` over every scalar.

    ``params`` maps names to arrays that ``loss_fn`` reads; each scalar is
    perturbed in place and restored.  Relative error uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    worst = 0.0
    details = []
    for name, arr in params:
        g = np.asarray(grads[name]).reshape(arr.shape)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_fn()
            flat[j] = orig - eps
            lm = loss_fn()
            flat[j] = orig
            num = (lp - lm) / (2 * eps)
            ana = float(gflat[j])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if not math.isfinite(err):
                err = math.inf
            worst = max(worst, err)
            if return_details:
                details.append((name, j, ana, num, err))
    return (worst, details) if return_details else worst


def finite_difference_check(state, batch, eps=1e-6, lam=0.0, return_details=False):
    """Max relative error between :func:`backward` and central finite differences."""
    X, y = batch
    grads = backward(batch, state, lam)
    return gradient_check(lambda: total_loss((X, y), state, lam).total,
                          state.named_parameters(), grads, eps, return_details)


# ---------------------------------------------------------------------------
# optimizer

def optimizer_step(state, grads, lr, betas=(0.9, 0.999), weight_decay=0.0, eps=1e-8,
                   clip_norm=None):
    """One AdamW step with decoupled weight decay; ``lr`` may map group -> rate."""
    b1, b2 = betas
    if not (0 <= b1 < 1 and 0 <= b2 < 1):
        raise ParameterError("betas must lie in [0, 1)")
    params = state.named_parameters()
    for name, _ in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name} at step {state.step}",
                                parameter=name)
    scale = 1.0
    if clip_norm is not None:
        norm = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
        if norm > clip_norm:
            scale = clip_norm / norm
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        rate = lr[state.group_of(name)] if isinstance(lr, dict) else lr
        if not rate > 0:
            raise ParameterError("learning rate must be positive")
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=float) * scale
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p), np.zeros_like(p))
        m, v = state.moments[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p -= rate * weight_decay * p
        p -= rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def linear_schedule(step, total_steps, warmup_steps):
    """Linear warmup from 0 then linear decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return step / warmup_steps
    return max(0.0, (total_steps - step) / max(1, total_steps - warmup_steps))


# ---------------------------------------------------------------------------
# model construction and training loop

def _make_experts(config, dims, site_seed):
    z, n = config.n_experts, config.n
    variant = config.variant
    if variant == "lowrank":
        return [LowRankAdapter(dims, config.rank, seed=[*site_seed, i]) for i in range(z)]
    mode = {"real_only": "real", "imag_only": "imag"}.get(variant, "complex")
    experts = init_ensemble(dims, z, n, bandwidth=config.bandwidth, centers=config.centers,
                            init_policy=config.init, seed=site_seed, mode=mode,
                            frequency_bias=variant != "random_index")
    if variant == "unsymmetric":
        experts = [UnsymmetricExpert.from_expert(e, copy_values=True) for e in experts]
    return experts


def build_state(config, n_features, n_outputs, task_kind="classify", seed=None):
    """Fresh model for ``config``: random frozen bases, experts, routers and head."""
    seed = config.seed if seed is None else seed
    dims = config.site_dims()
    if dims[0][1] != n_features:
        raise ParameterError(f"first site expects N={dims[0][1]} inputs, task has {n_features}")
    rng = np.random.default_rng([*seed_entropy(seed), 11])
    sites = []
    for s, (m, n) in enumerate(dims):
        std = 1.0 / math.sqrt(n) if config.base_std is None else config.base_std
        base = rng.normal(0.0, std, size=(m, n)) if std > 0 else np.zeros((m, n))
        site_seed = [*seed_entropy(seed), s]
        experts = _make_experts(config, (m, n), site_seed)
        router = Router.init(config.n_experts, n, config.top_k, std=config.router_std,
                             seed=[*site_seed, 1_000_003])
        sites.append(AdapterSite(base, experts, router, eta=config.eta,
                                 renormalize=config.renormalize_gates))
    head = {}
    if task_kind == "classify" and config.readout == "fixed":
        if n_outputs > dims[-1][0]:
            raise ParameterError("fixed readout needs n_classes <= the last site's M")
    elif task_kind == "classify":
        m_last = dims[-1][0]
        hrng = np.random.default_rng([*seed_entropy(seed), 13])
        width = m_last
        if config.head_hidden:
            hstd = 1.0 / math.sqrt(m_last) if config.head_std is None else config.head_std
            head["hidden_weight"] = hrng.normal(0.0, hstd, size=(config.head_hidden, m_last))
            head["hidden_bias"] = np.zeros(config.head_hidden)
            width = config.head_hidden
        hstd = 1.0 / math.sqrt(width) if config.head_std is None else config.head_std
        head["weight"] = hrng.normal(0.0, hstd, size=(n_outputs, width))
        head["bias"] = np.zeros(n_outputs)
    elif dims[-1][0] != n_outputs:
        raise ParameterError("regression target width must equal the last site's M")
    return TrainState(sites, head, task_kind=task_kind, n_outputs=n_outputs, seed=seed)


def evaluate(state, X, y, task_ids=None):
    """Accuracy (classification) or relative Frobenius error (regression)."""
    out, _, _ = model_forward(state, X)
    if state.task_kind == "regress":
        y = np.asarray(y, dtype=float).reshape(out.shape)
        denom = np.linalg.norm(y)
        rel = float(np.linalg.norm(out - y) / denom) if denom > 0 else float(np.linalg.norm(out))
        return {"rel_error": rel, "mse": float(np.mean((out - y) ** 2))}
    pred = np.argmax(out, axis=1)
    y = np.asarray(y)
    res = {"accuracy": float(np.mean(pred == y))}
    if task_ids is not None:
        task_ids = np.asarray(task_ids)
        res["task_accuracy"] = {int(t): float(np.mean(pred[task_ids == t] == y[task_ids == t]))
                                for t in np.unique(task_ids)}
    return res


def routing_frequencies(state, X):
    """Per-site dispatch fractions ``f`` over the inputs ``X``."""
    _, traces, _ = model_forward(state, X)
    return [load_balance_terms(tr.probs, tr.selected, tr.probs.shape[1])[0] for tr in traces]


def state_for_dataset(config, dataset, seed=None):
    kind = "regress" if dataset.kind == "regress" else "classify"
    n_out = dataset.y_train.shape[1] if kind == "regress" else dataset.n_classes
    return build_state(config, dataset.X_train.shape[1], n_out, task_kind=kind, seed=seed)


def train(config, dataset, seed=None, state=None, on_step=None):
    """Run ``config.epochs`` epochs of minibatch AdamW; bit-reproducible for a fixed seed.

    Returns ``(state, log)``; ``log.steps`` holds one record per optimizer
    step and ``log.evals`` one held-out evaluation per epoch (none when the
    test split is empty).
    """
    seed = config.seed if seed is None else seed
    if state is None:
        state = state_for_dataset(config, dataset, seed)
    log = TrainLog()
    n_train = dataset.X_train.shape[0]
    if config.epochs == 0 or n_train == 0:
        return state, log
    per_epoch = math.ceil(n_train / config.batch_size)
    total = config.epochs * per_epoch
    warmup = math.ceil(config.warmup_ratio * total)
    rng = np.random.default_rng([*seed_entropy(seed), 17])
    unsym = [e for site in state.sites for e in site.experts if isinstance(e, UnsymmetricExpert)]
    base_lr = {"expert": config.expert_rate, "router": config.router_rate,
               "head": config.head_rate}
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            t0 = time.perf_counter()
            idx = order[start:start + config.batch_size]
            loss, grads, _ = loss_and_grads(state, dataset.X_train[idx], dataset.y_train[idx],
                                            config.lam)
            mult = linear_schedule(state.step, total, warmup)
            lrs = {g: r * mult if mult > 0 else 0.0 for g, r in base_lr.items()}
            if mult > 0:
                optimizer_step(state, grads, lrs, betas=tuple(config.betas),
                               weight_decay=config.weight_decay, eps=config.eps,
                               clip_norm=config.clip_norm)
            else:
                _check_finite(grads, state.step)
                state.step += 1
            state.check_invariants()
            wall = (time.perf_counter() - t0) * 1e3 if config.record_wall_time else 0.0
            record = {"step": state.step, "lr": lrs["expert"], "loss_task": loss.task,
                      "loss_aux": loss.aux, "loss_total": loss.total, "wall_ms": wall}
            if unsym:
                record["truncation_error"] = sum(e.truncation_error() for e in unsym)
            log.steps.append(record)
            if on_step is not None:
                on_step(record)
        if len(dataset.X_test):
            ev = evaluate(state, dataset.X_test, dataset.y_test,
                          getattr(dataset, "task_test", None))
            log.evals.append({"epoch": epoch + 1, "step": state.step, **ev})
    return state, log


def _check_finite(grads, step):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name} at step {step}",
                                parameter=name)
