"""File outputs for model evaluation and session metrics.

Every report lands as deterministic JSON and CSV next to matplotlib figures
rendered headlessly, so runs can be diffed and eyeballed from the same folder.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .features_ml import CvReport
from .session_engine import SessionMetrics

CLASS_NAMES = ("Low", "Neutral", "High")


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _confusion_figure(matrix: np.ndarray, title: str, path: str) -> None:
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(3), CLASS_NAMES)
    ax.set_yticks(range(3), CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    threshold = matrix.max() / 2 if matrix.max() else 0.5
    for i in range(3):
        for j in range(3):
            color = "white" if matrix[i, j] > threshold else "black"
            ax.text(j, i, str(int(matrix[i, j])), ha="center", va="center",
                    color=color)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_cv_outputs(reports: dict[str, CvReport], out_dir: str) -> list[str]:
    """cv_report.json, per-fold CSV, confusion CSVs, and figures."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "cv_report.json")
    _write_json(path, {axis: r.to_dict() for axis, r in reports.items()})
    written.append(path)

    path = os.path.join(out_dir, "cv_folds.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "fold", "accuracy"])
        for axis, r in sorted(reports.items()):
            for i, acc in enumerate(r.fold_accuracies):
                w.writerow([axis, i + 1, repr(float(acc))])
            w.writerow([axis, "mean", repr(float(r.mean_accuracy))])
    written.append(path)

    for axis, r in sorted(reports.items()):
        path = os.path.join(out_dir, f"confusion_{axis}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\predicted", *CLASS_NAMES])
            for name, row in zip(CLASS_NAMES, np.asarray(r.confusion)):
                w.writerow([name, *(int(v) for v in row)])
        written.append(path)

        path = os.path.join(out_dir, f"confusion_{axis}.png")
        _confusion_figure(r.confusion, f"{axis}: pooled CV confusion", path)
        written.append(path)

    path = os.path.join(out_dir, "fold_accuracy.png")
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    axes = sorted(reports)
    n_folds = max(len(reports[a].fold_accuracies) for a in axes)
    x = np.arange(n_folds)
    width = 0.8 / len(axes)
    for i, axis in enumerate(axes):
        accs = reports[axis].fold_accuracies
        ax.bar(x[:len(accs)] + i * width, accs, width, label=axis)
        ax.axhline(reports[axis].mean_accuracy, color=f"C{i}", linestyle=":",
                   linewidth=1)
    ax.axhline(1 / 3, color="grey", linestyle="--", linewidth=1, label="chance")
    ax.set_xticks(x + width * (len(axes) - 1) / 2, [str(i + 1) for i in x])
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    return written


def write_metrics_outputs(metrics: SessionMetrics, out_dir: str) -> list[str]:
    """metrics.json, flat metrics.csv, and confusion/agreement figures."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    doc = metrics.to_dict()

    path = os.path.join(out_dir, "metrics.json")
    _write_json(path, doc)
    written.append(path)

    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["agreement_rate", _cell(metrics.agreement_rate)])
        w.writerow(["arousal_consistency", _cell(metrics.arousal_consistency)])
        w.writerow(["valence_consistency", _cell(metrics.valence_consistency)])
        w.writerow(["n_agree_trials", metrics.n_agree_trials])
        w.writerow(["n_sam_trials", metrics.n_sam_trials])
    written.append(path)

    for axis, matrix in (("arousal", metrics.arousal_confusion),
                         ("valence", metrics.valence_confusion)):
        if matrix is None:
            continue
        path = os.path.join(out_dir, f"probe_confusion_{axis}.png")
        _confusion_figure(matrix, f"{axis}: self-report vs prediction", path)
        written.append(path)

    if metrics.agreement_rate is not None:
        path = os.path.join(out_dir, "agreement.png")
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.bar(["agree", "disagree"],
               [metrics.agreement_rate, 1.0 - metrics.agreement_rate],
               color=["C0", "C3"])
        ax.set_ylim(0, 1)
        ax.set_ylabel("fraction of agree probes")
        ax.set_title(f"agreement rate {metrics.agreement_rate:.2f} "
                     f"(n={metrics.n_agree_trials})")
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    return written


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))
