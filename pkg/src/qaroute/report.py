"""Evaluation report rendering: delimited metric output plus matplotlib
figures (confusion heatmap and per-action bar chart) written next to it."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import ACTIONS, EvalReport


def write_metrics_csv(report: EvalReport, path: Path) -> None:
    d = report.to_dict()
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["metric", "action", "value"])
        for a in ACTIONS:
            pa = d["per_action"][a.value]
            for m in ("precision", "recall", "f1"):
                w.writerow([m, a.value, f"{pa[m]:.6f}"])
        w.writerow(["accuracy", "", f"{d['accuracy']:.6f}"])
        w.writerow(["macro_f1", "", f"{d['macro_f1']:.6f}"])
        h = d["hallucination_rate"]
        w.writerow(["hallucination_rate", "",
                    "" if h is None else f"{h:.6f}"])
        w.writerow(["coverage_fraction", "", f"{d['coverage_fraction']:.6f}"])
        w.writerow(["total", "", str(d["total"])])


def render_confusion_figure(report: EvalReport, path: Path) -> None:
    counts = report.matrix.counts
    labels = [a.value for a in ACTIONS]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(3), labels)
    ax.set_yticks(range(3), labels)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Gold")
    ax.set_title("Action confusion matrix")
    vmax = counts.max() if counts.size else 0
    for i in range(3):
        for j in range(3):
            color = "white" if vmax and counts[i, j] > vmax / 2 else "black"
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center",
                    color=color)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_per_action_figure(report: EvalReport, path: Path) -> None:
    labels = [a.value for a in ACTIONS]
    metrics = {
        "precision": [report.matrix.precision(a) for a in ACTIONS],
        "recall": [report.matrix.recall(a) for a in ACTIONS],
        "f1": [report.matrix.f1(a) for a in ACTIONS],
    }
    x = np.arange(3)
    width = 0.25
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for i, (name, vals) in enumerate(metrics.items()):
        ax.bar(x + (i - 1) * width, vals, width, label=name)
    ax.set_xticks(x, labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("Score")
    ax.set_title("Per-action metrics")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write the full report bundle: JSON, text table, delimited metrics, and
    the two figures. Returns the written paths."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    p = d / "report.json"
    p.write_text(report.to_json() + "\n", encoding="utf-8")
    paths.append(p)
    p = d / "report.txt"
    p.write_text(report.to_table() + "\n", encoding="utf-8")
    paths.append(p)
    p = d / "metrics.csv"
    write_metrics_csv(report, p)
    paths.append(p)
    p = d / "confusion_matrix.png"
    render_confusion_figure(report, p)
    paths.append(p)
    p = d / "per_action_metrics.png"
    render_per_action_figure(report, p)
    paths.append(p)
    return paths
