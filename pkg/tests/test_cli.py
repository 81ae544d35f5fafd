"""End-to-end command-line flows, exit codes, and byte-level determinism.

Everything runs in-process through main(argv), so monkeypatching reaches the
single-job benchmark path and coverage stays honest.
"""

import json
import os

import numpy as np
import pytest

import ebcrl.cli as cli
from ebcrl.cli import main


def write_config(path, **overrides):
    cfg = {
        "schema": 1,
        "d_z": 2,
        "d_x": 5,
        "edges": [[1, 2]],
        "kappa": 0.1,
        "sigma_z": 1.5,
        "sigma_x2": 0.5,
        "domains": [
            {"targets": [], "n": 60, "weight": 1.0},
            {"targets": [1], "n": 60, "weight": 1.0},
            {"targets": [2], "n": 60, "weight": 1.0},
        ],
        "seed": 7,
        "em": {"iterations": 3, "knots": 5, "lambda": 1e-5},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return str(path)


def test_generate_writes_dataset_and_manifest(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "data"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    for name in ("meta.json", "domain_01.csv", "true_Z_01.csv", "true_A.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 7
    assert "manifest.json" in manifest["outputs"]
    assert manifest["outputs"] == sorted(manifest["outputs"])


def test_generate_is_deterministic(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["generate", "--config", cfg, "--out", str(b)]) == 0
    for name in ("meta.json", "domain_01.csv", "domain_02.csv", "true_A.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_generate_seed_override(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["generate", "--config", cfg, "--out", str(b), "--seed", "9"]) == 0
    meta = json.loads((b / "meta.json").read_text())
    assert meta["seed"] == 9
    assert (a / "domain_01.csv").read_bytes() != (b / "domain_01.csv").read_bytes()


def test_full_pipeline(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    data = tmp_path / "data"
    fit = tmp_path / "fit"
    ev = tmp_path / "eval"
    figs = tmp_path / "figs"
    assert main(["generate", "--config", cfg, "--out", str(data)]) == 0
    assert main(["fit", str(data), "--config", cfg, "--method", "true-dag", "--out", str(fit)]) == 0
    for name in ("estimate.json", "trace.csv", "zhat_01.csv", "manifest.json"):
        assert (fit / name).exists()
    est = json.loads((fit / "estimate.json").read_text())
    assert est["method"] == "true-dag"
    assert est["iterations_run"] == 3
    assert est["em_config"]["iterations"] == 3

    assert main(["eval", str(data), str(fit), "--out", str(ev)]) == 0
    lines = (ev / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "run_id,seed,method,environment,metric,value"
    # frobenius + pooled relmse + one relmse row per domain
    assert len(lines) == 1 + 2 + 3

    assert main(["plot", str(ev / "metrics.csv"), "--out", str(figs)]) == 0
    assert (figs / "methods_relmse.svg").exists()
    assert (figs / "methods_frobenius.svg").exists()
    assert (figs / "environments_relmse.svg").exists()


def test_fit_oracle_holds_truth(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    data = tmp_path / "data"
    fit = tmp_path / "fit"
    ev = tmp_path / "eval"
    assert main(["generate", "--config", cfg, "--out", str(data)]) == 0
    assert main(["fit", str(data), "--config", cfg, "--out", str(fit), "--oracle"]) == 0
    est = json.loads((fit / "estimate.json").read_text())
    true_A = np.loadtxt(data / "true_A.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(np.asarray(est["O"]) - true_A)) < 1e-12
    assert est["D"] == [1.0, 1.0]
    # the estimate is exactly the truth, so the mixing error vanishes
    assert main(["eval", str(data), str(fit), "--out", str(ev)]) == 0
    rows = (ev / "metrics.csv").read_text().strip().splitlines()[1:]
    frob = [r.split(",") for r in rows if r.split(",")[4] == "frobenius"]
    assert float(frob[0][5]) == 0.0


def test_eval_requires_truth(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    data = tmp_path / "data"
    fit = tmp_path / "fit"
    assert main(["generate", "--config", cfg, "--out", str(data)]) == 0
    assert main(["fit", str(data), "--config", cfg, "--out", str(fit)]) == 0
    meta = json.loads((data / "meta.json").read_text())
    meta.pop("true_a_file")
    for dom in meta["domains"]:
        dom.pop("true_z_file")
    (data / "meta.json").write_text(json.dumps(meta))
    assert main(["eval", str(data), str(fit), "--out", str(tmp_path / "ev")]) == 2


def test_config_error_exit_codes(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    out = str(tmp_path / "o")
    assert main(["generate", "--config", str(bad_json), "--out", out]) == 2

    bad_schema = write_config(tmp_path / "schema.json", schema=99)
    assert main(["generate", "--config", bad_schema, "--out", out]) == 2

    zero_n = write_config(tmp_path / "zero.json", domains=[{"targets": [], "n": 0}])
    assert main(["generate", "--config", zero_n, "--out", out]) == 2

    cyclic = write_config(tmp_path / "cyc.json", edges=[[1, 2], [2, 1]])
    assert main(["generate", "--config", cyclic, "--out", out]) == 2

    missing = str(tmp_path / "nope.json")
    assert main(["generate", "--config", missing, "--out", out]) == 4


def test_fit_rejects_unknown_method(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    data = tmp_path / "data"
    assert main(["generate", "--config", cfg, "--out", str(data)]) == 0
    code = main(["fit", str(data), "--config", cfg, "--method", "banana", "--out", str(tmp_path / "f")])
    assert code == 2
    assert main(["fit", str(tmp_path / "missing"), "--out", str(tmp_path / "f")]) == 4


def test_benchmark_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "bench"
    code = main(
        ["benchmark", "--config", cfg, "--out", str(out), "--method", "true-dag,pca", "--runs", "2"]
    )
    assert code == 0
    for name in (
        "metrics.csv",
        "summary.csv",
        "methods_relmse.svg",
        "methods_frobenius.svg",
        "environments_relmse.svg",
        "manifest.json",
    ):
        assert (out / name).exists()
    assert (out / "runs" / "run_000" / "metrics.csv").exists()
    assert (out / "runs" / "run_001" / "metrics.csv").exists()
    summary = (out / "summary.csv").read_text().strip().splitlines()
    assert summary[0] == "method,environment,metric,median,iqr,n_runs"
    assert all(line.endswith(",2") for line in summary[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failures"] == []


def test_benchmark_all_methods_one_run(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "bench"
    assert main(["benchmark", "--config", cfg, "--out", str(out), "--runs", "1"]) == 0
    methods = set()
    for line in (out / "metrics.csv").read_text().strip().splitlines()[1:]:
        methods.add(line.split(",")[2])
    assert methods == {"true-dag", "no-shrinkage", "empty", "complete", "pooled", "pca"}
    # single run: every IQR is exactly zero
    for line in (out / "summary.csv").read_text().strip().splitlines()[1:]:
        assert line.split(",")[4] == "0.0"


def test_benchmark_bytes_identical_across_jobs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--method", "true-dag,pca", "--runs", "2"]
    assert main(["benchmark", "--config", cfg, "--out", str(a), "--jobs", "1"] + args) == 0
    assert main(["benchmark", "--config", cfg, "--out", str(b), "--jobs", "2"] + args) == 0
    for name in ("metrics.csv", "summary.csv", "methods_relmse.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_benchmark_isolates_failed_runs(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "bench"
    real = cli.generate_benchmark
    calls = {"n": 0}

    def flaky(config, rng):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ValueError("synthetic failure")
        return real(config, rng)

    monkeypatch.setattr(cli, "generate_benchmark", flaky)
    code = main(
        ["benchmark", "--config", cfg, "--out", str(out), "--method", "pca", "--runs", "2"]
    )
    assert code == 0
    assert (out / "runs" / "run_000" / "error.txt").exists()
    assert "synthetic failure" in (out / "runs" / "run_000" / "error.txt").read_text()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failures"] == [{"run": 0, "error": "ValueError: synthetic failure"}]
    run_ids = {
        line.split(",")[0] for line in (out / "metrics.csv").read_text().strip().splitlines()[1:]
    }
    assert run_ids == {"1"}


def test_benchmark_every_run_failed(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "cfg.json")

    def broken(config, rng):
        raise ValueError("nope")

    monkeypatch.setattr(cli, "generate_benchmark", broken)
    code = main(
        ["benchmark", "--config", cfg, "--out", str(tmp_path / "o"), "--method", "pca", "--runs", "2"]
    )
    assert code == 3


def test_benchmark_rejects_bad_method_and_counts(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = str(tmp_path / "o")
    assert main(["benchmark", "--config", cfg, "--out", out, "--method", "banana"]) == 2
    assert main(["benchmark", "--config", cfg, "--out", out, "--runs", "0"]) == 2
    assert main(["benchmark", "--config", cfg, "--out", out, "--jobs", "0"]) == 2


def test_benchmark_sweep(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", sweep={"param": "n_e", "values": [40, 80]})
    out = tmp_path / "bench"
    code = main(
        ["benchmark", "--config", cfg, "--out", str(out), "--method", "pca", "--runs", "1"]
    )
    assert code == 0
    assert (out / "sweep_metrics.csv").exists()
    assert (out / "sweep_relmse.svg").exists()
    assert (out / "sweep" / "n_e_40" / "runs" / "run_000" / "metrics.csv").exists()
    lines = (out / "sweep_metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "param,param_value,run_id,seed,method,environment,metric,value"
    assert {line.split(",")[1] for line in lines[1:]} == {"40", "80"}


def test_benchmark_sweep_validation(tmp_path):
    out = str(tmp_path / "o")
    bad_param = write_config(
        tmp_path / "a.json", sweep={"param": "kappa", "values": [1]}
    )
    assert main(["benchmark", "--config", bad_param, "--out", out, "--method", "pca"]) == 2
    empty = write_config(tmp_path / "b.json", sweep={"param": "n_e", "values": []})
    assert main(["benchmark", "--config", empty, "--out", out, "--method", "pca"]) == 2


def test_plot_rejects_bad_metrics_files(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("run_id,seed,method,environment,metric,value\n")
    assert main(["plot", str(empty), "--out", str(tmp_path / "f")]) == 2
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("a,b,c\n1,2,3\n")
    assert main(["plot", str(wrong), "--out", str(tmp_path / "f")]) == 2
    assert main(["plot", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "f")]) == 4
