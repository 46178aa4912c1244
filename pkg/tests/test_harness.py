import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fouriermoe.config import RunConfig
from fouriermoe.exceptions import (
    CheckpointCorruptError,
    CheckpointIOError,
    CheckpointVersionError,
    ParameterError,
)
from fouriermoe.experts import init_expert
from fouriermoe.harness import analysis, experiments
from fouriermoe.harness.baselines import (
    baseline_imag_only,
    baseline_lowrank,
    baseline_real_only,
    baseline_unsymmetric,
    least_squares_fit,
)
from fouriermoe.harness.checkpoint import (
    FORMAT_VERSION,
    dump_checkpoint,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
from fouriermoe.harness.cli import main
from fouriermoe.harness.tasks import (
    TaskSpec,
    gen_odd_target,
    gen_target,
    make_dataset,
    reference_accuracy,
)
from fouriermoe.layer import AdapterSite, build_site, forward
from fouriermoe.router import Router
from fouriermoe.spectral import dft2, imaginary_energy, reflect_matrix, truncation_error
from fouriermoe.training import build_state, train
from fouriermoe.variants import UnsymmetricExpert

seed_st = st.integers(0, 2**32 - 1)
dims_st = st.tuples(st.integers(1, 12), st.integers(1, 12))


# generators ------------------------------------------------------------------

def test_odd_target_trivial_dims():
    assert not np.any(gen_odd_target((1, 1), seed=3))


@given(dims_st, seed_st)
def test_odd_target_is_odd_with_anti_hermitian_spectrum(dims, seed):
    T = gen_odd_target(dims, seed)
    assert np.abs(T + reflect_matrix(T)).max() <= 1e-15
    assert T[0, 0] == 0
    F = dft2(T)
    # real and odd: the spectrum is odd under reflection and purely imaginary
    assert np.abs(F + reflect_matrix(F)).max() <= 1e-9
    assert np.abs(F.real).max() <= 1e-9


def test_generators_are_deterministic():
    for task in ({"kind": "band_multitask"}, {"kind": "toy_classify"},
                 {"kind": "target_fit", "target": "random"}):
        a, b = make_dataset(task, (16, 16)), make_dataset(task, (16, 16))
        assert np.array_equal(a.X_train, b.X_train) and np.array_equal(a.y_test, b.y_test)
    other = make_dataset({"kind": "band_multitask", "seed": 1}, (16, 16))
    assert not np.array_equal(other.X_train, make_dataset({"kind": "band_multitask"}, (16, 16)).X_train)


def test_noise_free_single_task_is_separable():
    ds = make_dataset({"kind": "band_multitask", "n_tasks": 1, "noise": 0.0}, (16, 16))
    mu = ds.meta["means"][0]
    pred = np.argmax(ds.X_train @ mu.T, axis=1)
    assert np.mean(pred == ds.y_train) == 1.0
    assert reference_accuracy(ds, "train") == 1.0


def test_reference_classifier_on_four_tasks():
    for seed in range(5):
        ds = make_dataset({"kind": "band_multitask", "n_tasks": 4, "seed": seed}, (16, 16))
        assert reference_accuracy(ds) >= 0.95


def test_multitask_split_and_labels():
    ds = make_dataset({"kind": "band_multitask", "n_tasks": 3, "n_per_task": 50}, (8, 8))
    assert len(ds.y_train) == 120 and len(ds.y_test) == 30
    assert set(np.unique(ds.task_train)) == {0, 1, 2}
    assert ds.X_train.shape[1] == 8 and ds.n_classes == 4


def test_discriminators_live_in_their_band():
    from fouriermoe.experts import band_distance
    dims = (32, 32)
    ds = make_dataset({"kind": "band_multitask", "n_tasks": 4, "bandwidth": 0.05}, dims)
    # a row of a reconstruction only carries the column frequencies of its support
    v_hat = band_distance((1, 32))[0]
    centroid = []
    for D in ds.meta["discriminators"]:
        power = np.sum(np.abs(np.fft.fft(D[:-1], axis=1)) ** 2, axis=0)
        centroid.append(float(np.sum(power * v_hat) / np.sum(power)))
    assert all(a < b for a, b in zip(centroid, centroid[1:]))


def test_task_spec_validation():
    with pytest.raises(ParameterError):
        TaskSpec.from_dict({"kind": "band_multitask", "bogus": 1})
    with pytest.raises(ParameterError):
        TaskSpec(kind="band_multitask", n_tasks=9)
    with pytest.raises(ParameterError):
        TaskSpec(kind="nope")
    with pytest.raises(ParameterError):
        gen_target((4, 4), "weird")
    spec = TaskSpec.from_dict({"kind": "toy_classify"}, dims=[8, 8])
    assert TaskSpec.from_dict(spec.to_dict()) == spec


# baselines ---------------------------------------------------------------------

def template_site(seed=0, dims=(8, 8), n=24):
    rng = np.random.default_rng(seed)
    return build_site(rng.normal(size=dims), 3, 2, n, eta=1.0, init_policy="gaussian:1",
                      seed=seed, router_std=1.0)


def test_real_only_output_is_even():
    site = baseline_real_only(template_site())
    for e in site.experts:
        W = e.reconstruct()
        assert np.abs(W - reflect_matrix(W)).max() <= 1e-10


def test_imag_only_output_is_odd():
    for e in baseline_imag_only(template_site()).experts:
        W = e.reconstruct()
        assert np.abs(W + reflect_matrix(W)).max() <= 1e-10


@pytest.mark.parametrize("dims", [(6, 6), (5, 7), (8, 4)])
def test_least_squares_even_and_odd_targets(dims):
    n = 2 * ((dims[0] * dims[1] - 1) // 2)
    full = init_expert(dims, n, None, "zero", seed=0)
    template = AdapterSite(np.zeros(dims), [full], Router(np.zeros((1, dims[1])), 1))
    real = baseline_real_only(template).experts[0]
    even = gen_target(dims, "even", seed=1)
    even[0, 0] = 0.0
    assert abs(least_squares_fit(full, even) - least_squares_fit(real, even)) <= 1e-6
    odd = gen_odd_target(dims, seed=2)
    assert least_squares_fit(full, odd) <= 1e-6
    assert least_squares_fit(real, odd) >= 0.999


def test_unsymmetric_with_symmetric_values_matches_main():
    site = template_site(1)
    uns = baseline_unsymmetric(site)
    X = np.random.default_rng(0).normal(size=(10, 8))
    for e in uns.experts:
        assert e.truncation_error() == 0.0
    assert np.abs(forward(X, uns).output - forward(X, site).output).max() <= 1e-12


def test_unsymmetric_random_values_truncation_matches_brute_force(rng):
    e = UnsymmetricExpert.from_expert(init_expert((6, 6), 20, None, seed=0))
    for arr in e.parameters().values():
        arr[:] = rng.normal(size=arr.shape)
    F = e.spectrum()
    assert e.truncation_error() == pytest.approx(imaginary_energy(F), rel=1e-9)
    assert e.truncation_error() == truncation_error(F) > 0
    cfg = RunConfig(task={"kind": "target_fit", "target": "odd"}, dims=[[6, 6]], n=20,
                    n_experts=1, top_k=1, variant="unsymmetric", base_std=0.0, lam=0.0,
                    epochs=1, batch_size=6, eta=1.0)
    state, log = train(cfg, make_dataset(cfg.task, [6, 6]))
    logged = log.steps[-1]["truncation_error"]
    expert = state.sites[0].experts[0]
    assert logged == pytest.approx(imaginary_energy(expert.spectrum(), method="naive"),
                                   rel=1e-9, abs=1e-18)


def test_lowrank_baseline():
    lr = baseline_lowrank((6, 5), 2, seed=0)
    assert not np.any(lr.reconstruct())
    rng = np.random.default_rng(0)
    for _ in range(20):
        lr.parameters()["B"][:] = rng.normal(size=(6, 2))
        assert np.linalg.matrix_rank(lr.reconstruct()) <= 2
    with pytest.raises(ParameterError):
        baseline_lowrank((4, 4), 5)
    with pytest.raises(ParameterError):
        least_squares_fit(lr, np.zeros((6, 5)))


def _fit_config(seed, variant):
    return RunConfig(task={"kind": "target_fit", "target": "odd", "dims": [9, 7], "seed": seed},
                     dims=[[9, 7]], n=62, n_experts=1, top_k=1, eta=64.0, lr=0.01,
                     batch_size=7, base_std=0.0, lam=0.0, warmup_ratio=0.0, bandwidth=0.5,
                     epochs=600, variant=variant, seed=seed)


def test_target_fit_main_not_worse_than_unsymmetric():
    for seed in range(5):
        main_err = experiments.run_seed(_fit_config(seed, "fourier"))["rel_error"]
        uns_err = experiments.run_seed(_fit_config(seed, "unsymmetric"))["rel_error"]
        assert main_err <= uns_err + 1e-9
        assert main_err <= 1e-3


# checkpoint ----------------------------------------------------------------------

def _states():
    base = dict(task={"kind": "band_multitask"}, dims=[[8, 8], [8, 8]], n=12, n_experts=3,
                top_k=2, init="gaussian:0.1")
    yield build_state(RunConfig(**{**base, "init": "zero"}), 8, 4)
    for variant in ("real_only", "imag_only", "unsymmetric", "random_index", "lowrank"):
        yield build_state(RunConfig(**base, variant=variant), 8, 4)
    yield build_state(RunConfig(**base, head_hidden=5), 8, 4)
    yield build_state(RunConfig(**base, readout="fixed"), 8, 4)
    yield build_state(RunConfig(**{**base, "dims": [[8, 8]]}), 8, 8, task_kind="regress")


def _assert_same(a, b):
    pa, pb = a.named_parameters(), b.named_parameters()
    assert [n for n, _ in pa] == [n for n, _ in pb]
    for (_, x), (_, y) in zip(pa, pb):
        assert x.tobytes() == y.tobytes()
    for sa, sb in zip(a.sites, b.sites):
        assert sa.base.tobytes() == sb.base.tobytes()
        assert sa.eta == sb.eta and sa.k == sb.k
        for ea, eb in zip(sa.experts, sb.experts):
            assert type(ea) is type(eb)
            assert ea.support() == eb.support() if hasattr(ea, "support") else True
    assert a.step == b.step and a.task_kind == b.task_kind and a.n_outputs == b.n_outputs


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    for j, state in enumerate(_states()):
        path = tmp_path / f"s{j}.fmoe"
        save_checkpoint(state, path, {"note": j})
        loaded, cfg = load_checkpoint(path, with_config=True)
        _assert_same(state, loaded)
        assert cfg == {"note": j}
        assert dump_checkpoint(loaded, cfg) == path.read_bytes()


def test_checkpoint_keeps_trained_moments(tmp_path):
    cfg = RunConfig(task={"kind": "band_multitask", "n_per_task": 20}, dims=[[16, 16]],
                    epochs=1, batch_size=16)
    state, _ = train(cfg, make_dataset(cfg.task, [16, 16]))
    loaded = parse_checkpoint(dump_checkpoint(state, cfg.to_dict()))[0]
    _assert_same(state, loaded)
    for name, (m, v) in state.moments.items():
        assert m.tobytes() == loaded.moments[name][0].tobytes()
        assert v.tobytes() == loaded.moments[name][1].tobytes()


def test_checkpoint_rejects_corruption():
    state = next(_states())
    data = dump_checkpoint(state, {"a": 1})
    for cut in (0, 3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(CheckpointCorruptError):
            parse_checkpoint(data[:cut])
    for pos in (4 + 4 + 5, len(data) // 2, len(data) - 6):
        flipped = bytearray(data)
        flipped[pos] ^= 0x01
        with pytest.raises(CheckpointCorruptError):
            parse_checkpoint(bytes(flipped))
    with pytest.raises(CheckpointCorruptError):
        parse_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointCorruptError):
        parse_checkpoint(data + b"\0")


def test_checkpoint_version_mismatch():
    import struct
    import zlib
    data = bytearray(dump_checkpoint(next(_states())))
    data[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    body = bytes(data[:-4])
    data = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(CheckpointVersionError, match="version"):
        parse_checkpoint(data)


def test_checkpoint_io_errors(tmp_path):
    with pytest.raises(CheckpointIOError):
        load_checkpoint(tmp_path / "missing.fmoe")
    with pytest.raises(CheckpointIOError):
        save_checkpoint(next(_states()), tmp_path / "no" / "dir" / "x.fmoe")


# analysis ------------------------------------------------------------------------

def test_matrix_file_round_trip(tmp_path, rng):
    W = rng.normal(size=(5, 7))
    path = tmp_path / "w.bin"
    analysis.write_matrix(path, W)
    assert path.stat().st_size == 8 + 8 * 35
    assert np.array_equal(analysis.read_matrix(path), W)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(Exception):
        analysis.read_matrix(path)


def test_count_params_large_setup():
    counts = analysis.count_params()
    assert counts["sites"] == 48
    assert counts["expert_per_site"] == 8 * 1008
    assert counts["router_per_site"] == 8 * 1024
    assert counts["adapter_total"] == 48 * (8064 + 8192)
    assert abs(counts["total"] - 1.49e6) <= 0.25 * 1.49e6


def test_csv_formatting():
    text = experiments.format_csv([{"a": 0.1, "b": None, "c": 3}])
    assert text == "a,b,c\n0.1,,3\n"


def test_summarize_and_scaling_smoke():
    rows = [{"variant": "x", "metric": 1.0}, {"variant": "x", "metric": 0.0},
            {"variant": "y", "metric": 0.5}]
    assert experiments.summarize(rows, "variant") == {"x": 0.5, "y": 0.5}
    with pytest.raises(ParameterError):
        experiments.ablate(RunConfig(task={"kind": "toy_classify"}, dims=[[8, 8]]), ["bogus"])


def test_expert_scaling_medium_beats_tiny():
    cfg = RunConfig(task={"kind": "toy_classify", "n_tasks": 1, "n_per_task": 400,
                          "noise": 1.0}, dims=[[16, 16]], n_experts=4, top_k=2, eta=4.0,
                    lr=0.01, epochs=10, base_std=0.0, readout="fixed")
    rows = experiments.expert_scaling(cfg, seeds=3)
    means = experiments.summarize(rows, "budget")
    assert list(means) == ["tiny", "small", "medium", "large"]
    assert means["medium"] >= means["tiny"]


# CLI -----------------------------------------------------------------------------

def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(tmp_path, name="cfg.json", **kw):
    cfg = dict(task={"kind": "band_multitask", "n_per_task": 30}, dims=[[16, 16]], epochs=2,
               batch_size=16, eta=4.0, base_std=0.0, readout="fixed")
    cfg.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_cli_verify(capsys):
    code, out, _ = run_cli(capsys, "verify", "--suite", "core")
    lines = [ln for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert code == 0 and lines and all(ln.startswith("PASS") for ln in lines)
    code, out, _ = run_cli(capsys, "verify")
    assert code == 0 and "FAIL" not in out


def test_cli_verify_reports_failure(capsys, monkeypatch):
    from fouriermoe.harness import verify
    monkeypatch.setitem(verify.SUITES, "core", lambda rng: iter([("broken", False, "")]))
    code, out, _ = run_cli(capsys, "verify", "--suite", "core")
    assert code == 1 and "FAIL core: broken" in out


def test_cli_train_eval_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    code, _, _ = run_cli(capsys, "train", "--config", cfg, "--out", out, "--seed", 3)
    assert code == 0
    for name in ("metrics.jsonl", "eval.jsonl", "config.json", "checkpoint.fmoe", "summary.json"):
        assert (out / name).exists()
    last = json.loads((out / "eval.jsonl").read_text().splitlines()[-1])
    code, text, _ = run_cli(capsys, "eval", "--checkpoint", out / "checkpoint.fmoe",
                            "--task", "config")
    assert code == 0
    res = json.loads(text)
    assert abs(res["accuracy"] - last["accuracy"]) <= 1e-12
    task = json.loads((out / "config.json").read_text())["task"]
    code, text, _ = run_cli(capsys, "eval", "--checkpoint", out / "checkpoint.fmoe",
                            "--task", json.dumps(task))
    assert code == 0 and json.loads(text)["accuracy"] == res["accuracy"]
    records = [json.loads(ln) for ln in (out / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records] == list(range(1, len(records) + 1))


def test_cli_outputs_are_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for d in ("a", "b"):
        assert run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / d)[0] == 0
    for name in ("metrics.jsonl", "eval.jsonl", "config.json", "checkpoint.fmoe", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for d in ("a", "b"):
        run_cli(capsys, "analyze-spectrum", "--input", tmp_path / d / "checkpoint.fmoe",
                "--bins", 6, "--out", tmp_path / f"{d}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_cli_analyze_spectrum_peaks_in_band(tmp_path, capsys):
    cfg = write_config(tmp_path, dims=[[32, 32]], n=96, n_experts=4, bandwidth=0.05,
                       init="gaussian:1", epochs=0,
                       task={"kind": "band_multitask", "n_per_task": 10})
    run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "run")
    bins = 8
    code, _, _ = run_cli(capsys, "analyze-spectrum", "--input", tmp_path / "run" / "checkpoint.fmoe",
                         "--bins", bins, "--out", tmp_path / "psd.csv")
    assert code == 0
    import csv
    rows = list(csv.DictReader((tmp_path / "psd.csv").open()))
    assert len(rows) == 4 * bins
    for expert in range(4):
        mine = [r for r in rows if r["expert"] == str(expert)]
        peak = max(mine, key=lambda r: float(r["power"]))
        center = float(peak["band_center"])
        assert float(peak["r_lo"]) - 1 / bins <= center <= float(peak["r_hi"]) + 1 / bins


def test_cli_analyze_matrix_file(tmp_path, capsys):
    analysis.write_matrix(tmp_path / "w.bin", np.ones((4, 4)))
    code, _, _ = run_cli(capsys, "analyze-spectrum", "--input", tmp_path / "w.bin", "--bins", 2,
                         "--out", tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert code == 0 and lines[0] == "site,expert,band_center,bin,r_lo,r_hi,power"
    # bin 0 holds DC plus the four radius-1 bins: 256 / 5
    assert lines[1].endswith(",51.2") and float(lines[2].split(",")[-1]) <= 1e-20


def test_cli_report(tmp_path, capsys):
    cfg = write_config(tmp_path, epochs=1)
    run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "runs" / "r1")
    run_cli(capsys, "train", "--config", cfg, "--out", tmp_path / "runs" / "r2", "--seed", 1)
    code, out, _ = run_cli(capsys, "report", "--runs", tmp_path / "runs")
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("run,task,variant")
    assert [ln.split(",")[0] for ln in lines[1:]] == ["r1", "r2"]


def test_cli_ablate_small(tmp_path, capsys):
    cfg = write_config(tmp_path, epochs=1)
    code, out, err = run_cli(capsys, "ablate", "--config", cfg, "--axis", "imaginary",
                             "--seeds", 2)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "variant,axis,seed,metric"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["fourier"] * 2 + ["real_only"] * 2
    assert "# fourier: mean" in err


def test_cli_count_params(capsys):
    code, out, _ = run_cli(capsys, "count-params")
    rows = dict(ln.split(",") for ln in out.splitlines()[1:])
    assert code == 0 and int(rows["total"]) == 1831938


def test_cli_usage_and_input_errors(tmp_path, capsys):
    assert run_cli(capsys, "bogus")[0] == 2
    assert run_cli(capsys, "train", "--config", "x.json")[0] == 2
    assert run_cli(capsys, "verify", "--suite", "nope")[0] == 2
    code, _, err = run_cli(capsys, "train", "--config", tmp_path / "none.json", "--out", tmp_path)
    assert code == 2 and "error" in err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": {"kind": "band_multitask"}, "dims": [[8, 8]], "zzz": 1}))
    assert run_cli(capsys, "train", "--config", bad, "--out", tmp_path / "o")[0] == 2
    junk = tmp_path / "junk.fmoe"
    junk.write_bytes(b"FMOE\0\0")
    assert run_cli(capsys, "eval", "--checkpoint", junk, "--task", "config")[0] == 2
