"""Run configuration: every hyperparameter of a training run, JSON round-trippable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .exceptions import ConfigError
from .experts import parse_init_policy

__all__ = ["RunConfig", "VARIANTS", "load_config"]

VARIANTS = ("fourier", "real_only", "imag_only", "unsymmetric", "random_index", "lowrank")


@dataclass
class RunConfig:
    """Hyperparameters of a run.  ``task`` and ``dims`` have no defaults.

    ``dims`` lists each adapter site's ``[M, N]``; sites are chained, so each
    site's N equals the previous site's M and the first N equals the task's
    input width.  ``lr``, when set, overrides the three per-group rates.
    ``readout="fixed"`` classifies with the first C outputs of the last site
    instead of a trainable head.
    """

    task: dict
    dims: list
    n: int = 16
    n_experts: int = 4
    top_k: int = 2
    eta: float = 64.0
    lam: float = 0.01
    lr: float | None = None
    expert_lr: float = 0.01
    router_lr: float = 0.01
    head_lr: float = 0.01
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 32
    warmup_ratio: float = 0.06
    bandwidth: float = 0.12
    centers: list | None = None
    init: object = "zero"
    router_std: float = 0.02
    base_std: float | None = None
    head_std: float | None = None
    head_hidden: int | None = None
    readout: str = "linear"
    variant: str = "fourier"
    rank: int = 2
    renormalize_gates: bool = False
    clip_norm: float | None = None
    seed: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def expert_rate(self):
        return self.expert_lr if self.lr is None else self.lr

    @property
    def router_rate(self):
        return self.router_lr if self.lr is None else self.lr

    @property
    def head_rate(self):
        return self.head_lr if self.lr is None else self.lr

    def site_dims(self):
        return [tuple(int(x) for x in d) for d in self.dims]

    def validate(self):
        if not isinstance(self.task, dict) or "kind" not in self.task:
            raise ConfigError("task must be an object with a 'kind' field")
        dims = self.dims
        if (isinstance(dims, (list, tuple)) and len(dims) == 2
                and all(isinstance(d, int) for d in dims)):
            self.dims = dims = [list(dims)]
        if not dims or not all(isinstance(d, (list, tuple)) and len(d) == 2 for d in dims):
            raise ConfigError("dims must be a non-empty list of [M, N] pairs")
        sd = self.site_dims()
        if any(m < 1 or n < 1 for m, n in sd):
            raise ConfigError("site dimensions must be positive")
        for (m_prev, _), (_, n_next) in zip(sd, sd[1:]):
            if n_next != m_prev:
                raise ConfigError("consecutive sites must chain: N of a site equals M of the previous")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.n_experts < 1 or not 1 <= self.top_k <= self.n_experts:
            raise ConfigError("need n_experts >= 1 and 1 <= top_k <= n_experts")
        if self.variant != "lowrank" and (self.n < 2 or self.n % 2):
            raise ConfigError("n must be an even integer >= 2")
        if self.variant == "lowrank" and not all(1 <= self.rank <= min(d) for d in sd):
            raise ConfigError("rank must lie in [1, min(M, N)] for every site")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        for name in ("expert_rate", "router_rate", "head_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError("learning rates must be positive")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("warmup_ratio must lie in [0, 1)")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if self.centers is not None:
            if len(self.centers) != self.n_experts or not all(0 <= c <= 1 for c in self.centers):
                raise ConfigError("centers needs one value in [0, 1] per expert")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when set")
        if self.readout not in ("linear", "fixed"):
            raise ConfigError("readout must be 'linear' or 'fixed'")
        if self.readout == "fixed" and self.head_hidden is not None:
            raise ConfigError("head_hidden requires the linear readout")
        if self.head_hidden is not None and self.head_hidden < 1:
            raise ConfigError("head_hidden must be positive when set")
        try:
            parse_init_policy(self.init)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        missing = [k for k in ("task", "dims") if k not in data]
        if missing:
            raise ConfigError(f"missing required keys: {', '.join(missing)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = asdict(self)
        if isinstance(d["init"], tuple):
            d["init"] = list(d["init"])
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(data)
