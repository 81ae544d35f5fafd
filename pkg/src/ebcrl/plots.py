"""Static SVG figures for benchmark results.

All figures are rendered headless with a fixed hash salt and no date
metadata, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "ebcrl"

import matplotlib.pyplot as plt  # noqa: E402

_METRIC_LABEL = {"relmse": "relative MSE", "frobenius": "squared Frobenius error"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def plot_methods(records, metric, path):
    """Box plot over runs of the run-level metric, one box per method."""
    data = {}
    for r in records:
        if r["metric"] == metric and r["environment"] == "all":
            data.setdefault(r["method"], []).append(float(r["value"]))
    if not data:
        raise ValueError(f"no records for metric '{metric}'")
    methods = sorted(data)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.boxplot([data[m] for m in methods])
    ax.set_xticks(range(1, len(methods) + 1))
    ax.set_xticklabels(methods, rotation=20, ha="right")
    flat = [v for m in methods for v in data[m]]
    if min(flat) > 0 and max(flat) / min(flat) > 1e3:
        ax.set_yscale("log")
    ax.set_ylabel(_METRIC_LABEL.get(metric, metric))
    ax.set_title(f"{_METRIC_LABEL.get(metric, metric)} by method")
    fig.tight_layout()
    _save(fig, path)
    return path


def plot_environments(records, path, metric="relmse"):
    """Grouped bars of the per-environment median metric for each method."""
    groups = {}
    for r in records:
        if r["metric"] == metric and r["environment"] != "all":
            key = (r["method"], int(r["environment"]))
            groups.setdefault(key, []).append(float(r["value"]))
    if not groups:
        raise ValueError(f"no per-environment records for metric '{metric}'")
    methods = sorted({m for m, _ in groups})
    envs = sorted({e for _, e in groups})
    width = 0.8 / len(methods)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i, m in enumerate(methods):
        xs = [e + (i - (len(methods) - 1) / 2.0) * width for e in envs]
        ys = [float(np.median(groups[(m, e)])) if (m, e) in groups else 0.0 for e in envs]
        ax.bar(xs, ys, width=width, label=m)
    ax.set_xticks(envs)
    ax.set_xticklabels([str(e) for e in envs])
    ax.set_xlabel("environment")
    ax.set_ylabel(f"median {_METRIC_LABEL.get(metric, metric)}")
    ax.set_title(f"per-environment {_METRIC_LABEL.get(metric, metric)}")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    return path


def plot_sweep(records, metric, path):
    """Median metric versus the swept parameter, one line per method."""
    groups = {}
    param_name = None
    for r in records:
        if r["metric"] == metric and r["environment"] == "all":
            param_name = r["param"]
            key = (r["method"], float(r["param_value"]))
            groups.setdefault(key, []).append(float(r["value"]))
    if not groups:
        raise ValueError(f"no sweep records for metric '{metric}'")
    methods = sorted({m for m, _ in groups})
    values = sorted({v for _, v in groups})
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for m in methods:
        ys = [float(np.median(groups[(m, v)])) if (m, v) in groups else np.nan for v in values]
        ax.plot(values, ys, marker="o", label=m)
    ax.set_xlabel(param_name or "parameter")
    ax.set_ylabel(f"median {_METRIC_LABEL.get(metric, metric)}")
    ax.set_title(f"{_METRIC_LABEL.get(metric, metric)} sweep")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    return path
