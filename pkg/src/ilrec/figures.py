"""Figure rendering for report files.

Every function reads the delimited report artifacts written by the bench and
evaluation paths and renders a PNG next to them; nothing here feeds back into
the pipeline.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        for row in reader:
            rows.append(dict(zip(header, row)))
    return rows


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 3.6), dpi=130)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, out_path):
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return Path(out_path)


def render_token_histograms(csv_by_mode: dict, out_path):
    """Overlaid per-mode prompt-length histograms (bin_start, count files)."""
    fig, ax = _new_axes("Prompt length by representation mode", "tokens per user prompt", "users")
    for mode, path in sorted(csv_by_mode.items()):
        rows = _read_csv(path)
        xs = [float(r["bin_start"]) for r in rows]
        ys = [int(r["count"]) for r in rows]
        ax.step(xs, ys, where="post", label=mode)
    ax.set_xscale("log")
    ax.legend()
    return _save(fig, out_path)


def render_overlap(positive_csv, negative_csv, out_path, positive_mean=None,
                   negative_mean=None):
    """Matched vs deranged cosine-similarity histograms."""
    fig, ax = _new_axes("Image/description similarity", "cosine similarity", "items")
    for label, path, color in (("matched pairs", positive_csv, "tab:blue"),
                               ("shuffled pairs", negative_csv, "tab:orange")):
        rows = _read_csv(path)
        xs = [float(r["bin_start"]) for r in rows]
        ys = [int(r["count"]) for r in rows]
        ax.bar(xs, ys, width=0.05, align="edge", alpha=0.6, label=label, color=color)
    for mean, color in ((positive_mean, "tab:blue"), (negative_mean, "tab:orange")):
        if mean is not None:
            ax.axvline(mean, color=color, linestyle="--", linewidth=1)
    ax.legend()
    return _save(fig, out_path)


def render_budget_sweep(sweep_csv, out_path, metric="hit@5"):
    """Metric vs context budget, one line per mode."""
    rows = _read_csv(sweep_csv)
    fig, ax = _new_axes("Context-window sweep", "context budget (tokens)", metric)
    modes = sorted({r["mode"] for r in rows})
    for mode in modes:
        pts = [(r["budget"], float(r[metric])) for r in rows if r["mode"] == mode]
        xs = [1_000_000 if b == "none" else int(b) for b, _ in pts]
        ys = [y for _, y in pts]
        order = sorted(range(len(xs)), key=lambda i: xs[i])
        ax.plot([xs[i] for i in order], [ys[i] for i in order], marker="o", label=mode)
    ax.set_xscale("log")
    ax.legend()
    return _save(fig, out_path)


def render_timing(timing_csv, out_path):
    """Wall seconds per user-length group, one line per mode."""
    rows = _read_csv(timing_csv)
    fig, ax = _new_axes("Scoring time by history length", "sequence-length group", "seconds")
    groups = list(dict.fromkeys(r["group"] for r in rows))
    for mode in sorted({r["mode"] for r in rows}):
        ys = [float(r["wall_seconds"]) for r in rows if r["mode"] == mode]
        ax.plot(groups[: len(ys)], ys, marker="s", label=mode)
    ax.legend()
    return _save(fig, out_path)


def render_group_bars(groups_csv, out_path, metric="hit@5"):
    """Per-popularity-group metric bars, one bar cluster per group."""
    rows = [r for r in _read_csv(groups_csv) if r.get("metric") == metric]
    fig, ax = _new_axes(f"{metric} by item-popularity group", "group (1 = coldest)", metric)
    labels = sorted({r["group"] for r in rows})
    runs = sorted({r.get("run", "model") for r in rows})
    width = 0.8 / max(len(runs), 1)
    for j, run in enumerate(runs):
        vals = []
        for g in labels:
            match = [float(r["value"]) for r in rows if r["group"] == g and r.get("run", "model") == run]
            vals.append(match[0] if match else 0.0)
        xs = [i + j * width for i in range(len(labels))]
        ax.bar(xs, vals, width=width, label=run)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(labels))])
    ax.set_xticklabels(labels)
    ax.legend()
    return _save(fig, out_path)
