"""Figures and summary tables from the accumulated results files.

All figures render to SVG with a fixed hash salt and no date metadata, so a
rerun over the same results is byte-identical. Every figure is stamped with
the configuration hash it was built from.
"""

from __future__ import annotations

import io
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .store import append_csv, atomic_write_text

METHOD_ORDER = ["coin", "vanilla", "task-arithmetic", "distill"]


def _style(cfg_hash: str):
    plt.rcParams["svg.hashsalt"] = cfg_hash
    plt.rcParams["figure.figsize"] = (6.0, 3.6)
    plt.rcParams["font.size"] = 9


def _save(fig, path: str, cfg_hash: str) -> None:
    fig.text(0.99, 0.01, f"cfg {cfg_hash}", ha="right", va="bottom",
             fontsize=6, color="0.55")
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def _methods_in(rows, col):
    present = {r[col] for r in rows}
    ordered = [m for m in METHOD_ORDER if m in present]
    return ordered + sorted(present - set(ordered))


def check_single_config(rows, col=0):
    hashes = {r[col] for r in rows}
    if len(hashes) > 1:
        raise ValueError(f"results mix different config hashes: {sorted(hashes)}")
    return next(iter(hashes))


# Result table columns (see cli.py): nda.csv rows are
# [config, scenario, method, seed, expert, nda, expert_accuracy, test_size]


def render_nda_figure(rows, path: str, cfg_hash: str) -> None:
    """Grouped bars: decoding accuracy per expert and the average, by method."""
    _style(cfg_hash)
    scenario = rows[0][1]
    methods = _methods_in(rows, 2)
    experts = sorted({r[4] for r in rows if r[4] != "avg"})
    groups = experts + ["avg"]
    by_key = defaultdict(list)
    for r in rows:
        by_key[(r[2], r[4])].append(float(r[5]))
    fig, ax = plt.subplots()
    width = 0.8 / len(methods)
    x = np.arange(len(groups))
    for k, method in enumerate(methods):
        means = [np.mean(by_key[(method, g)]) for g in groups]
        stds = [np.std(by_key[(method, g)]) for g in groups]
        ax.bar(x + k * width, means, width, yerr=stds, capsize=2, label=method)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([f"expert {g}" if g != "avg" else "average" for g in groups])
    ax.set_ylabel("normalized decoding accuracy (%)")
    ax.set_title(f"decoding accuracy, {scenario}")
    ax.axhline(100.0, color="0.7", linewidth=0.8, linestyle="--")
    ax.legend(fontsize=8)
    _save(fig, path, cfg_hash)


# ablate_p.csv rows: [config, scenario, method, seed, p, expert, nda]


def render_p_ablation(rows, path: str, cfg_hash: str) -> None:
    """Average decoding accuracy as a function of the probe size."""
    _style(cfg_hash)
    methods = _methods_in(rows, 2)
    fig, ax = plt.subplots()
    for method in methods:
        per_p = defaultdict(list)
        for r in rows:
            if r[2] == method and r[5] == "avg":
                per_p[int(r[4])].append(float(r[6]))
        ps = sorted(per_p)
        ax.plot(ps, [np.mean(per_p[p]) for p in ps], marker="o", label=method)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("probe size P")
    ax.set_ylabel("avg normalized decoding accuracy (%)")
    ax.set_title("effect of the probe size")
    ax.legend(fontsize=8)
    _save(fig, path, cfg_hash)


# latency_raw.csv rows: [config, policy, seed, expert, arrival, completion, path, decode_agree]


def render_latency_cdf(rows, path: str, cfg_hash: str) -> None:
    """Empirical CDF of query latency per policy."""
    _style(cfg_hash)
    fig, ax = plt.subplots()
    policies = sorted({r[1] for r in rows})
    for policy in policies:
        lat = np.sort([
            float(r[5]) - float(r[4])
            for r in rows
            if r[1] == policy and r[5] != ""
        ])
        if lat.size == 0:
            continue
        ax.plot(lat, np.arange(1, lat.size + 1) / lat.size, label=policy)
    ax.set_xscale("log")
    ax.set_xlabel("latency")
    ax.set_ylabel("fraction of queries")
    ax.set_title("query latency distribution")
    ax.legend(fontsize=8)
    _save(fig, path, cfg_hash)


# distill_curve.csv rows: [config, scenario, seed, epoch, train_decode_nda, test_nda, coding_loss]


def render_distill_curve(rows, path: str, cfg_hash: str) -> None:
    """Decoded accuracy on the training probe vs the held-out test sets."""
    _style(cfg_hash)
    per_epoch_train = defaultdict(list)
    per_epoch_test = defaultdict(list)
    for r in rows:
        per_epoch_train[int(r[3])].append(float(r[4]))
        per_epoch_test[int(r[3])].append(float(r[5]))
    epochs = sorted(per_epoch_train)
    fig, ax = plt.subplots()
    ax.plot(epochs, [np.mean(per_epoch_train[e]) for e in epochs], label="train probe")
    ax.plot(epochs, [np.mean(per_epoch_test[e]) for e in epochs], label="test")
    ax.set_xlabel("distillation epoch")
    ax.set_ylabel("avg normalized decoding accuracy (%)")
    ax.set_title("distillation: train vs test decoding accuracy")
    ax.legend(fontsize=8)
    _save(fig, path, cfg_hash)


def summary_table(nda_rows) -> str:
    """Plain-text table of mean avg-accuracy per method, seeds aggregated."""
    methods = _methods_in(nda_rows, 2)
    scenario = nda_rows[0][1]
    lines = [f"scenario: {scenario}", ""]
    experts = sorted({r[4] for r in nda_rows if r[4] != "avg"})
    header = ["method"] + [f"expert {e}" for e in experts] + ["avg"]
    lines.append("  ".join(f"{h:>16}" for h in header))
    for method in methods:
        cells = [f"{method:>16}"]
        for g in experts + ["avg"]:
            vals = [float(r[5]) for r in nda_rows if r[2] == method and r[4] == g]
            cells.append(f"{np.mean(vals):16.2f}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def write_summary_csv(path: str, nda_rows, cfg_hash: str) -> None:
    methods = _methods_in(nda_rows, 2)
    experts = sorted({r[4] for r in nda_rows if r[4] != "avg"})
    header = ["config", "scenario", "method"] + [f"nda_{e}" for e in experts] + ["avg"]
    rows = []
    scenario = nda_rows[0][1]
    for method in methods:
        row = [cfg_hash, scenario, method]
        for g in experts + ["avg"]:
            vals = [float(r[5]) for r in nda_rows if r[2] == method and r[4] == g]
            row.append(float(np.mean(vals)))
        rows.append(row)
    if os.path.exists(path):
        os.unlink(path)
    append_csv(path, header, rows)
