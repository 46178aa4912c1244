"""Multi-seed experiment drivers: ablation, expert scaling, run reports."""

from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from ..config import RunConfig
from ..exceptions import ParameterError
from ..training import train
from .tasks import make_dataset

__all__ = [
    "ABLATION_AXES",
    "ablate",
    "collect_runs",
    "expert_scaling",
    "format_csv",
    "run_seed",
    "summarize",
]

# ablation axis -> variant with that component removed
ABLATION_AXES = {
    "imaginary": "real_only",
    "real": "imag_only",
    "symmetry": "unsymmetric",
    "band": "random_index",
}


def _metric(ev):
    return ev["accuracy"] if "accuracy" in ev else ev["rel_error"]


def run_seed(config: RunConfig, offset=0, **changes):
    """Train ``config`` (with ``changes``) on seed ``config.seed + offset``; returns final eval.

    The task's own seed moves with the run seed, so each offset is an
    independent draw of data and initialization.
    """
    task = dict(config.task)
    task["seed"] = int(task.get("seed", 0)) + offset
    cfg = config.replace(task=task, seed=config.seed + offset, **changes)
    dataset = make_dataset(cfg.task, cfg.site_dims()[0])
    _, log = train(cfg, dataset)
    if not log.evals:
        raise ParameterError("ablation runs need at least one epoch")
    return log.evals[-1]


def ablate(config: RunConfig, axes=None, seeds=5):
    """Full method plus one variant per axis, each on ``seeds`` paired seeds.

    Returns rows ``{"variant", "axis", "seed", "metric"}`` ordered by variant
    then seed.
    """
    axes = list(ABLATION_AXES) if axes is None else list(axes)
    bad = [a for a in axes if a not in ABLATION_AXES]
    if bad:
        raise ParameterError(f"unknown ablation axis {bad[0]!r}; choose from {list(ABLATION_AXES)}")
    plan = [("fourier", "full")] + [(ABLATION_AXES[a], a) for a in axes]
    rows = []
    for variant, axis in plan:
        for i in range(seeds):
            ev = run_seed(config, i, variant=variant)
            rows.append({"variant": variant, "axis": axis, "seed": config.seed + i,
                         "metric": float(_metric(ev))})
    return rows


def expert_scaling(config: RunConfig, budgets=None, seeds=3):
    """Metric per spectral budget ``n`` (``budgets`` maps label -> n)."""
    budgets = budgets or {"tiny": 4, "small": 16, "medium": 64, "large": 200}
    rows = []
    for label, n in budgets.items():
        for i in range(seeds):
            ev = run_seed(config, i, n=int(n))
            rows.append({"budget": label, "n": int(n), "seed": config.seed + i,
                         "metric": float(_metric(ev))})
    return rows


def summarize(rows, key):
    """Mean metric per ``key`` value, in first-appearance order."""
    out = {}
    for r in rows:
        out.setdefault(r[key], []).append(r["metric"])
    return {k: float(np.mean(v)) for k, v in out.items()}


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def format_csv(rows, columns=None):
    """CSV text with a header row, ``\\n`` line endings and round-trip float formatting."""
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


REPORT_COLUMNS = ["run", "task", "variant", "n", "n_experts", "top_k", "seed", "steps",
                  "final_loss", "accuracy", "rel_error", "trainable_params"]


def collect_runs(root):
    """One row per ``summary.json`` found under ``root`` (sorted by relative path)."""
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        if "summary.json" in filenames:
            found.append(dirpath)
    rows = []
    for d in sorted(found):
        with open(os.path.join(d, "summary.json"), encoding="utf-8") as fh:
            s = json.load(fh)
        cfg = s.get("config", {})
        ev = s.get("final_eval") or {}
        rows.append({
            "run": os.path.relpath(d, root),
            "task": cfg.get("task", {}).get("kind"),
            "variant": cfg.get("variant"),
            "n": cfg.get("n"),
            "n_experts": cfg.get("n_experts"),
            "top_k": cfg.get("top_k"),
            "seed": cfg.get("seed"),
            "steps": s.get("steps"),
            "final_loss": s.get("final_loss"),
            "accuracy": ev.get("accuracy"),
            "rel_error": ev.get("rel_error"),
            "trainable_params": s.get("trainable_params"),
        })
    return rows
