"""Figure rendering for correlation, trajectory, and score outputs.

Purely additive to the data pipeline: figures are drawn from the
delimited outputs the other subcommands already wrote, and nothing
downstream reads them back.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_BUCKET_COLORS = {"low": "#2a9d8f", "medium": "#e9a03b", "high": "#d1495b", None: "#777777"}


def render_correlation_figure(
    report: dict, scatter_rows: "list[dict]", out_path: "str | Path"
) -> Path:
    """One panel per metric: normalized scatter plus the fitted line."""
    entries = [e for e in report["metrics"] if "r" in e]
    if not entries:
        raise ValueError("correlation report has no usable metric entries")
    cols = 2 if len(entries) > 1 else 1
    rows = (len(entries) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(5.5 * cols, 4.2 * rows),
                             squeeze=False)
    by_metric: dict = {}
    for row in scatter_rows:
        by_metric.setdefault(row["metric"], []).append(row)
    for ax, entry in zip(axes.flat, entries):
        metric = entry["metric"]
        points = by_metric.get(metric, [])
        xs = [float(p["metric_z"]) for p in points]
        ys = [float(p["label_z"]) for p in points]
        ax.scatter(xs, ys, s=18, alpha=0.75, color="#32628d", edgecolors="none")
        if xs:
            lo, hi = min(xs), max(xs)
            ax.plot(
                [lo, hi],
                [entry["slope"] * lo + entry["intercept"],
                 entry["slope"] * hi + entry["intercept"]],
                color="#c0392b", linewidth=1.6,
            )
        ax.set_title(f"{metric}  (r={entry['r']:.3f}, p={entry['p']:.2e}, n={entry['n']})",
                     fontsize=10)
        ax.set_xlabel(f"{metric} (z)")
        ax.set_ylabel(f"{report.get('label', 'label')} (z)")
        ax.grid(True, alpha=0.25)
    for ax in axes.flat[len(entries):]:
        ax.set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_trajectory_figure(
    table: dict, summary: dict, out_path: "str | Path"
) -> Path:
    """Decayed option curves with the entropy trace on a twin axis."""
    fig, ax = plt.subplots(figsize=(7.2, 4.4))
    positions = table["positions"]
    for j, option in enumerate(table["options"]):
        ax.plot(positions, [row[j] for row in table["decayed"]],
                label=f"option {option}", linewidth=1.5)
    ax.set_xlabel("position t")
    ax.set_ylabel("decayed cumulative preference")
    ax.grid(True, alpha=0.25)
    twin = ax.twinx()
    twin.plot(positions, table["entropy"], color="#444444", linewidth=1.0,
              linestyle="--", label="H_t (bits)")
    twin.set_ylabel("token entropy H_t (bits)")
    bucket = summary.get("bucket")
    color = _BUCKET_COLORS.get(bucket, "#777777")
    title = f"{table['sample_id']}  crossings={summary['crossing_count']}"
    if bucket:
        title += f"  bucket={bucket}"
    ax.set_title(title, color=color, fontsize=11)
    handles1, labels1 = ax.get_legend_handles_labels()
    handles2, labels2 = twin.get_legend_handles_labels()
    ax.legend(handles1 + handles2, labels1 + labels2, fontsize=8, loc="center right")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_eas_histogram(score_rows: "list[dict]", out_path: "str | Path") -> Path:
    values = [row["eas"] for row in score_rows if row.get("eas") is not None]
    if not values:
        raise ValueError("no eas values to plot")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.hist(values, bins=min(30, max(5, len(values) // 3)), color="#32628d",
            alpha=0.85)
    ax.set_xlabel("entropy area score")
    ax.set_ylabel("samples")
    ax.set_title(f"EAS distribution over {len(values)} samples", fontsize=11)
    ax.grid(True, alpha=0.25)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def load_scatter_csv(path: "str | Path") -> "list[dict]":
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def load_json(path: "str | Path") -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
