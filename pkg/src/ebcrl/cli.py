"""Command-line harness: generate data, fit methods, evaluate, benchmark, plot.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O
failure. Benchmark runs derive per-run seeds from (master seed, run index)
and can execute in parallel; outputs merge in run-index order, so results
do not depend on the job count.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .em import METHODS, EmConfig, NonFiniteError, load_result, run_method, save_result
from .graph import CycleError
from .metrics import evaluate_result, summarize
from .plots import plot_environments, plot_methods, plot_sweep
from .scm import (
    BenchmarkConfig,
    ConfigError,
    generate_benchmark,
    load_dataset,
    make_rng,
    save_dataset,
)

METRIC_COLUMNS = ("run_id", "seed", "method", "environment", "metric", "value")
SUMMARY_COLUMNS = ("method", "environment", "metric", "median", "iqr", "n_runs")


def _load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if cfg.get("schema", 1) != 1:
        raise ConfigError(f"{path}: unsupported schema {cfg.get('schema')!r}")
    return cfg


def _write_manifest(outdir, payload):
    payload = dict(payload)
    payload.setdefault("outputs", [])
    payload["outputs"] = sorted(set(payload["outputs"]) | {"manifest.json"})
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return "manifest.json"


def _write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            value = r["value"]
            if not isinstance(value, str):
                value = repr(float(value))
            w.writerow([r["run_id"], r["seed"], r["method"], r["environment"], r["metric"], value])


def _read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(METRIC_COLUMNS):
            raise ConfigError(f"{path}: expected columns {','.join(METRIC_COLUMNS)}")
        rows = []
        for line in reader:
            if len(line) != len(METRIC_COLUMNS):
                raise ConfigError(f"{path}: malformed row {line!r}")
            rows.append(dict(zip(METRIC_COLUMNS, line)))
    return rows


def _write_summary_csv(path, summary_rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in summary_rows:
            w.writerow(
                [
                    r["method"],
                    r["environment"],
                    r["metric"],
                    repr(float(r["median"])),
                    repr(float(r["iqr"])),
                    r["n_runs"],
                ]
            )


def _em_config(cfg_dict, oracle=False):
    em_cfg = EmConfig.from_dict(cfg_dict.get("em", {}))
    if oracle:
        em_cfg = replace(em_cfg, oracle=True)
    return em_cfg


def _parse_methods(spec):
    if spec is None or spec == "all":
        return list(METHODS)
    methods = [m.strip() for m in spec.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method '{m}' (choose from {', '.join(METHODS)})")
    if not methods:
        raise ConfigError("empty method list")
    return methods


def cmd_generate(args):
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    bench = BenchmarkConfig.from_dict(cfg)
    seed = args.seed if args.seed is not None else bench.seed
    bench = replace(bench, seed=seed)
    dataset = generate_benchmark(bench, make_rng(seed))
    os.makedirs(args.out, exist_ok=True)
    files = save_dataset(dataset, args.out)
    _write_manifest(
        args.out,
        {
            "command": "generate",
            "seed": seed,
            "config": cfg,
            "outputs": files,
            "elapsed_seconds": time.monotonic() - t0,
        },
    )
    print(f"wrote {len(dataset.domains)}-domain dataset to {args.out}")
    return 0


def cmd_fit(args):
    t0 = time.monotonic()
    dataset = load_dataset(args.data)
    cfg = _load_config(args.config) if args.config else {}
    em_cfg = _em_config(cfg, oracle=args.oracle)
    if args.method not in METHODS:
        raise ConfigError(f"unknown method '{args.method}' (choose from {', '.join(METHODS)})")
    result = run_method(dataset, em_cfg, args.method)
    os.makedirs(args.out, exist_ok=True)
    files = save_result(result, args.out, config=em_cfg)
    _write_manifest(
        args.out,
        {
            "command": "fit",
            "method": args.method,
            "seed": dataset.seed,
            "config": cfg,
            "outputs": files,
            "elapsed_seconds": time.monotonic() - t0,
        },
    )
    print(f"fit method={args.method} sigma2={result.estimate.sigma2:.6g} -> {args.out}")
    return 0


def cmd_eval(args):
    t0 = time.monotonic()
    dataset = load_dataset(args.data)
    if dataset.true_A is None or dataset.true_Z is None:
        raise ConfigError(f"{args.data}: dataset has no ground-truth files")
    rows = []
    for rdir in args.results:
        result = load_result(rdir)
        for metric, env, value in evaluate_result(dataset, result):
            rows.append(
                {
                    "run_id": 0,
                    "seed": dataset.seed if dataset.seed is not None else "",
                    "method": result.method,
                    "environment": env,
                    "metric": metric,
                    "value": value,
                }
            )
    os.makedirs(args.out, exist_ok=True)
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), rows)
    _write_manifest(
        args.out,
        {
            "command": "eval",
            "results": list(args.results),
            "outputs": ["metrics.csv"],
            "elapsed_seconds": time.monotonic() - t0,
        },
    )
    print(f"wrote {len(rows)} metric rows to {os.path.join(args.out, 'metrics.csv')}")
    return 0


def _run_one(payload):
    """One benchmark run in isolation; returns (run index, error or None).

    Must stay module-level picklable for the process pool. Writes its own
    run directory; the parent merges in run-index order.
    """
    cfg_dict, master_seed, run_idx, methods, oracle, rundir = payload
    try:
        bench = BenchmarkConfig.from_dict(cfg_dict)
        em_cfg = _em_config(cfg_dict, oracle=oracle)
        dataset = generate_benchmark(bench, make_rng(master_seed, run_idx))
        rows = []
        for method in methods:
            result = run_method(dataset, em_cfg, method)
            for metric, env, value in evaluate_result(dataset, result):
                rows.append(
                    {
                        "run_id": run_idx,
                        "seed": master_seed,
                        "method": method,
                        "environment": env,
                        "metric": metric,
                        "value": value,
                    }
                )
        os.makedirs(rundir, exist_ok=True)
        _write_metrics_csv(os.path.join(rundir, "metrics.csv"), rows)
        return run_idx, None
    except Exception as exc:  # noqa: BLE001 - run isolation by contract
        os.makedirs(rundir, exist_ok=True)
        with open(os.path.join(rundir, "error.txt"), "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        return run_idx, f"{type(exc).__name__}: {exc}"


def _execute_runs(cfg_dict, master_seed, n_runs, methods, oracle, runs_root, jobs):
    tasks = [
        (cfg_dict, master_seed, r, methods, oracle, os.path.join(runs_root, f"run_{r:03d}"))
        for r in range(n_runs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]
    rows, failures, files = [], [], []
    for run_idx, err in sorted(outcomes):
        rel = os.path.relpath(tasks[run_idx][5], os.path.dirname(runs_root))
        if err is None:
            rows.extend(_read_metrics_csv(os.path.join(tasks[run_idx][5], "metrics.csv")))
            files.append(os.path.join(rel, "metrics.csv"))
        else:
            failures.append({"run": run_idx, "error": err})
            files.append(os.path.join(rel, "error.txt"))
    return rows, failures, files


def _apply_sweep_value(cfg_dict, param, value):
    cfg = copy.deepcopy(cfg_dict)
    if param == "n_e":
        for dom in cfg["domains"]:
            dom["n"] = int(value)
    elif param == "d_z":
        v = int(value)
        cfg["d_z"] = v
        cfg["edges"] = [[j, j + 1] for j in range(1, v)]
        n0 = int(cfg["domains"][0]["n"])
        cfg["domains"] = [{"targets": [j], "n": n0, "weight": 1.0} for j in range(1, v + 1)]
    else:
        raise ConfigError(f"unknown sweep parameter '{param}' (use 'n_e' or 'd_z')")
    return cfg


def run_benchmark(cfg_dict, out_dir, methods, n_runs, jobs=1, seed=None, oracle=False):
    """Generate-fit-eval over n_runs fresh draws; write tables and figures.

    Returns (metric rows, summary rows, failures). Each run draws its own
    mechanism weights and mixing matrix from the (seed, run index) stream.
    """
    bench = BenchmarkConfig.from_dict(cfg_dict)
    _em_config(cfg_dict, oracle=oracle)
    if n_runs < 1:
        raise ConfigError("need at least one run")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    master_seed = seed if seed is not None else bench.seed

    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    rows, failures, run_files = _execute_runs(
        cfg_dict, master_seed, n_runs, methods, oracle, os.path.join(out_dir, "runs"), jobs
    )
    outputs.extend(run_files)
    _write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    outputs.append("metrics.csv")

    summary_rows = []
    if rows:
        summary_rows = summarize(
            [{**r, "value": float(r["value"])} for r in rows]
        )
        _write_summary_csv(os.path.join(out_dir, "summary.csv"), summary_rows)
        outputs.append("summary.csv")
        float_rows = [{**r, "value": float(r["value"])} for r in rows]
        for metric in ("relmse", "frobenius"):
            if any(r["metric"] == metric for r in float_rows):
                name = f"methods_{metric}.svg"
                plot_methods(float_rows, metric, os.path.join(out_dir, name))
                outputs.append(name)
        if any(r["metric"] == "relmse" and r["environment"] != "all" for r in float_rows):
            plot_environments(float_rows, os.path.join(out_dir, "environments_relmse.svg"))
            outputs.append("environments_relmse.svg")

    sweep = cfg_dict.get("sweep")
    sweep_rows = []
    if sweep is not None:
        try:
            param = sweep["param"]
            values = list(sweep["values"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid sweep section: {exc}") from exc
        if not values:
            raise ConfigError("sweep values must be nonempty")
        for value in values:
            sub_cfg = _apply_sweep_value(cfg_dict, param, value)
            sub_root = os.path.join(out_dir, "sweep", f"{param}_{value}", "runs")
            sub_rows, sub_failures, sub_files = _execute_runs(
                sub_cfg, master_seed, n_runs, methods, oracle, sub_root, jobs
            )
            outputs.extend(os.path.join("sweep", f"{param}_{value}", f) for f in sub_files)
            for r in sub_rows:
                sweep_rows.append({**r, "param": param, "param_value": value})
            failures.extend(
                {**f, "sweep": f"{param}={value}"} for f in sub_failures
            )
        if sweep_rows:
            _write_sweep_csv(os.path.join(out_dir, "sweep_metrics.csv"), sweep_rows)
            outputs.append("sweep_metrics.csv")
            float_sweep = [{**r, "value": float(r["value"])} for r in sweep_rows]
            for metric in ("relmse", "frobenius"):
                if any(r["metric"] == metric for r in float_sweep):
                    name = f"sweep_{metric}.svg"
                    plot_sweep(float_sweep, metric, os.path.join(out_dir, name))
                    outputs.append(name)

    return rows, summary_rows, failures, outputs, master_seed, sweep_rows


def _write_sweep_csv(path, rows):
    cols = ("param", "param_value") + METRIC_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            value = r["value"]
            if not isinstance(value, str):
                value = repr(float(value))
            w.writerow(
                [
                    r["param"],
                    r["param_value"],
                    r["run_id"],
                    r["seed"],
                    r["method"],
                    r["environment"],
                    r["metric"],
                    value,
                ]
            )


def cmd_benchmark(args):
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    methods = _parse_methods(args.method)
    rows, summary_rows, failures, outputs, master_seed, _ = run_benchmark(
        cfg,
        args.out,
        methods,
        n_runs=args.runs,
        jobs=args.jobs,
        seed=args.seed,
        oracle=args.oracle,
    )
    _write_manifest(
        args.out,
        {
            "command": "benchmark",
            "seed": master_seed,
            "methods": methods,
            "runs": args.runs,
            "jobs": args.jobs,
            "oracle": args.oracle,
            "config": cfg,
            "failures": failures,
            "outputs": outputs,
            "elapsed_seconds": time.monotonic() - t0,
        },
    )
    ok = args.runs - len([f for f in failures if "sweep" not in f])
    print(f"benchmark: {ok}/{args.runs} runs succeeded, outputs in {args.out}")
    if not rows:
        print("error: every run failed", file=sys.stderr)
        return 3
    return 0


def cmd_plot(args):
    t0 = time.monotonic()
    rows = _read_metrics_csv(args.metrics)
    if not rows:
        raise ConfigError(f"{args.metrics}: no metric rows")
    float_rows = [{**r, "value": float(r["value"])} for r in rows]
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for metric in sorted({r["metric"] for r in float_rows}):
        if any(r["environment"] == "all" for r in float_rows if r["metric"] == metric):
            name = f"methods_{metric}.svg"
            plot_methods(float_rows, metric, os.path.join(args.out, name))
            outputs.append(name)
    if any(r["metric"] == "relmse" and r["environment"] != "all" for r in float_rows):
        plot_environments(float_rows, os.path.join(args.out, "environments_relmse.svg"))
        outputs.append("environments_relmse.svg")
    if not outputs:
        raise ConfigError(f"{args.metrics}: nothing plottable in the metrics file")
    _write_manifest(
        args.out,
        {
            "command": "plot",
            "source": args.metrics,
            "outputs": outputs,
            "elapsed_seconds": time.monotonic() - t0,
        },
    )
    print(f"wrote {len(outputs)} figures to {args.out}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ebcrl",
        description="Multi-domain causal representation learning via empirical Bayes EM.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="draw one synthetic multi-domain dataset")
    p.add_argument("--config", required=True, help="JSON benchmark config")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one method on a dataset directory")
    p.add_argument("data", help="dataset directory from 'generate'")
    p.add_argument("--config", default=None, help="JSON config with an 'em' section")
    p.add_argument("--method", default="true-dag", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--out", required=True, help="output result directory")
    p.add_argument("--oracle", action="store_true", help="hold ground-truth A and sigma2 fixed")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score fitted results against ground truth")
    p.add_argument("data", help="dataset directory with truth files")
    p.add_argument("results", nargs="+", help="result directories from 'fit'")
    p.add_argument("--out", required=True, help="output directory for metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="run the full generate/fit/eval loop")
    p.add_argument("--config", required=True, help="JSON benchmark config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", default="all", help="comma-separated methods or 'all'")
    p.add_argument("--runs", type=int, default=5, help="number of independent runs")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--oracle", action="store_true", help="hold ground-truth A and sigma2 fixed")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot", help="render figures from a metrics CSV")
    p.add_argument("metrics", help="metrics.csv produced by eval or benchmark")
    p.add_argument("--out", required=True, help="output directory for SVG files")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CycleError as exc:
        print(f"error: graph: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
