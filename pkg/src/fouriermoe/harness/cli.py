"""Command-line entry point: ``fouriermoe <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..config import RunConfig, load_config
from ..exceptions import FourierMoEError
from ..training import evaluate, state_for_dataset, train
from . import analysis, experiments
from .checkpoint import load_checkpoint, save_checkpoint
from .tasks import make_dataset
from .verify import SUITES, run_suite

__all__ = ["build_parser", "main"]

CHECKPOINT_NAME = "checkpoint.fmoe"


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(text, out):
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    dataset = make_dataset(config.task, config.site_dims()[0])
    os.makedirs(args.out, exist_ok=True)
    state = state_for_dataset(config, dataset)
    with open(os.path.join(args.out, "metrics.jsonl"), "w", encoding="utf-8",
              newline="\n") as fh:
        state, log = train(config, dataset, state=state,
                           on_step=lambda rec: fh.write(_dumps(rec) + "\n"))
    _write_text(os.path.join(args.out, "eval.jsonl"),
                "".join(_dumps(e) + "\n" for e in log.evals))
    _write_text(os.path.join(args.out, "config.json"), _dumps(config.to_dict()) + "\n")
    save_checkpoint(state, os.path.join(args.out, CHECKPOINT_NAME), config)
    summary = {
        "config": config.to_dict(),
        "steps": state.step,
        "final_loss": log.steps[-1]["loss_total"] if log.steps else None,
        "final_eval": log.evals[-1] if log.evals else None,
        "trainable_params": state.n_scalars,
    }
    _write_text(os.path.join(args.out, "summary.json"), _dumps(summary) + "\n")
    print(_dumps({"out": args.out, "steps": state.step, "final_eval": summary["final_eval"]}))
    return 0


def _parse_task(text, saved_config):
    if text == "config":
        if saved_config is None:
            raise FourierMoEError("checkpoint carries no config; pass an explicit task")
        return saved_config["task"], saved_config
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            task = json.load(fh)
    else:
        try:
            task = json.loads(text)
        except json.JSONDecodeError:
            raise FourierMoEError(f"--task is neither a file nor JSON: {text!r}") from None
    return task, saved_config


def cmd_eval(args):
    state, saved = load_checkpoint(args.checkpoint, with_config=True)
    task, saved = _parse_task(args.task, saved)
    first_n = state.sites[0].dims[1]
    dataset = make_dataset(task, (saved["dims"][0] if saved else [first_n, first_n]))
    res = evaluate(state, dataset.X_test, dataset.y_test, dataset.task_test)
    if "task_accuracy" in res:
        res["task_accuracy"] = {str(k): v for k, v in res["task_accuracy"].items()}
    print(_dumps(res))
    return 0


def cmd_verify(args):
    results = run_suite(args.suite, seed=args.seed)
    for name, ok, detail in results:
        line = f"{'PASS' if ok else 'FAIL'} {name}"
        print(f"{line} ({detail})" if detail else line)
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} passed")
    return 1 if failed else 0


def cmd_analyze(args):
    rows = analysis.psd_rows(args.input, args.bins)
    _emit(experiments.format_csv(rows), args.out)
    return 0


def cmd_ablate(args):
    config = load_config(args.config)
    axes = None if args.axis is None else [args.axis]
    rows = experiments.ablate(config, axes, seeds=args.seeds)
    _emit(experiments.format_csv(rows), args.out)
    means = experiments.summarize(rows, "variant")
    for variant, mean in means.items():
        print(f"# {variant}: mean {mean!r}", file=sys.stderr)
    return 0


def cmd_report(args):
    rows = experiments.collect_runs(args.runs)
    _emit(experiments.format_csv(rows, experiments.REPORT_COLUMNS), args.out)
    return 0


def cmd_count(args):
    setup = {"hidden": args.hidden, "layers": args.layers, "n": args.n,
             "n_experts": args.experts, "top_k": args.top_k}
    setup["head"] = [[args.hidden, args.hidden], [args.classes, args.hidden]]
    counts = analysis.count_params(setup)
    rows = [{"item": k, "scalars": v} for k, v in counts.items()]
    _emit(experiments.format_csv(rows), None)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fouriermoe",
                                description="Spectral mixture-of-experts adapters.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a RunConfig JSON")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a task")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", required=True,
                   help="task JSON, a path to one, or 'config' for the checkpoint's own task")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("analyze-spectrum", help="radial PSD of expert updates")
    a.add_argument("--input", required=True, help="checkpoint or matrix file")
    a.add_argument("--bins", type=int, required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("ablate", help="full method against ablated variants")
    b.add_argument("--config", required=True)
    b.add_argument("--axis", choices=list(experiments.ABLATION_AXES))
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--out")
    b.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="summarize training runs as CSV")
    r.add_argument("--runs", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("count-params", help="trainable-scalar accounting for a large setup")
    c.add_argument("--hidden", type=int, default=analysis.PAPER_SETUP["hidden"])
    c.add_argument("--layers", type=int, default=analysis.PAPER_SETUP["layers"])
    c.add_argument("--n", type=int, default=analysis.PAPER_SETUP["n"])
    c.add_argument("--experts", type=int, default=analysis.PAPER_SETUP["n_experts"])
    c.add_argument("--top-k", type=int, default=analysis.PAPER_SETUP["top_k"])
    c.add_argument("--classes", type=int, default=2)
    c.set_defaults(func=cmd_count)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FourierMoEError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
