"""Evaluation reports: JSON scalars + per-block CSV + matplotlib figures.

The report path writes three artifacts next to each other:
  <stem>.json   aggregate metrics and the per-block breakdown
  <stem>.csv    the same breakdown, one row per block
  <stem>.png    histogram figures for the per-block metrics
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

BREAKDOWN_FIELDS = (
    "block_id", "n_buildings", "layout_sim", "overlap_pct",
    "out_block_pct", "position_err_pct", "coverage_err_pct",
)


def write_report(stem, aggregate: dict, breakdown: list):
    """Write <stem>.json/.csv/.png; returns the three paths."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    json_path = stem.with_suffix(".json")
    csv_path = stem.with_suffix(".csv")
    png_path = stem.with_suffix(".png")

    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"aggregate": aggregate, "per_block": breakdown}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BREAKDOWN_FIELDS,
                                extrasaction="ignore")
        writer.writeheader()
        for row in breakdown:
            writer.writerow(row)

    _figures(png_path, breakdown)
    return json_path, csv_path, png_path


def _figures(png_path, breakdown):
    metrics = [
        ("layout_sim", "L-Sim (m$^2$)"),
        ("overlap_pct", "overlap (%)"),
        ("out_block_pct", "out-of-block (%)"),
        ("position_err_pct", "position error (%)"),
        ("coverage_err_pct", "coverage error (%)"),
        ("n_buildings", "buildings per block"),
    ]
    fig, axes = plt.subplots(2, 3, figsize=(12, 7))
    for ax, (key, label) in zip(axes.ravel(), metrics):
        values = [row[key] for row in breakdown if key in row
                  and row[key] is not None]
        if values:
            ax.hist(values, bins=min(20, max(3, len(values) // 2)),
                    color="#4e79a7", edgecolor="white")
        ax.set_xlabel(label)
        ax.set_ylabel("blocks")
    fig.suptitle("per-block layout metrics")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def training_figure(png_path, history, window: int = 100):
    """Loss curve with a moving average; history is a list of dicts."""
    totals = [h["total"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(totals, color="#bab0ac", linewidth=0.7, label="step loss")
    if len(totals) >= window:
        kernel = [1.0 / window] * window
        smooth = []
        for i in range(window - 1, len(totals)):
            smooth.append(sum(totals[i - window + 1:i + 1]) / window)
        ax.plot(range(window - 1, len(totals)), smooth, color="#e15759",
                linewidth=1.5, label="%d-step mean" % window)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
