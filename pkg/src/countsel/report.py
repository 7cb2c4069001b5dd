"""Report files produced by the command-line entry points.

CSV and JSON writers are deterministic byte for byte given equal inputs:
floats are written with repr (shortest round-trip form), JSON keys are
sorted.  Figures are rendered with the Agg backend straight to files.
"""
from __future__ import annotations

import csv
import json
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .crossval import NestedCvResult, PresenceTable
from .lasso import LassoPath
from .metrics import PooledPredictions


def _fmt(value: float) -> str:
    return repr(float(value))


def write_metrics_csv(path: str, rows: Sequence[tuple[str, float, float, float]]) -> None:
    """One row per method: deviance, weighted deviance, predictive power."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "deviance", "weighted_deviance", "predictive_power"])
        for method, dev, wdev, power in rows:
            writer.writerow([method, _fmt(dev), _fmt(wdev), _fmt(power)])


def write_predictions_csv(path: str, pools: Mapping[str, PooledPredictions]) -> None:
    """Per-row observed count and each method's held-out prediction.

    All pools must cover the same rows; they are aligned on row id.
    """
    methods = list(pools)
    first = pools[methods[0]]
    for m in methods[1:]:
        if not np.array_equal(pools[m].row_ids, first.row_ids):
            raise ValueError("prediction pools cover different rows")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", "fold", "observed"] + [f"predicted_{m}" for m in methods]
        )
        for i in range(first.n):
            row = [
                str(int(first.row_ids[i])),
                str(int(first.fold_ids[i])),
                str(int(first.observed[i])),
            ]
            row += [_fmt(pools[m].predicted[i]) for m in methods]
            writer.writerow(row)


def write_path_csv(
    path: str,
    lambdas: np.ndarray,
    active_counts: Sequence[int],
    deviances: Sequence[float],
    reductions: Sequence[float],
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "active_count", "train_deviance", "deviance_reduction"])
        for lam, k, dev, red in zip(lambdas, active_counts, deviances, reductions):
            writer.writerow([_fmt(lam), str(int(k)), _fmt(dev), _fmt(red)])


def write_report_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Figures


def _save(fig, out_path: str) -> None:
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def fig_cv_curves(result: NestedCvResult, out_path: str) -> None:
    """Inner-CV score against log10(lambda), one curve per outer fold."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for fold in result.folds:
        table = fold.inner
        if table.lambdas.size == 0:
            continue
        x = np.log10(table.lambdas)
        ax.plot(x, table.scores, lw=1.0, alpha=0.6, color="tab:blue")
        ax.plot(
            x[table.index_min],
            table.scores[table.index_min],
            "o",
            ms=4,
            color="tab:red",
        )
        ax.plot(
            x[table.index_1se],
            table.scores[table.index_1se],
            "^",
            ms=4,
            color="tab:orange",
        )
    ax.set_xlabel("log10(lambda)")
    ax.set_ylabel("held-out deviance per observation")
    ax.set_title("Inner cross-validation score by outer fold")
    _save(fig, out_path)


def fig_presence(presence: PresenceTable, threshold: float, out_path: str) -> None:
    """Presence frequencies per rule for every column that ever entered."""
    freq_min = presence.frequencies("lambda_min")
    freq_1se = presence.frequencies("lambda_1se")
    mask = (freq_min > 0) | (freq_1se > 0)
    names = [n for n, m in zip(presence.column_names, mask) if m]
    if not names:
        names = list(presence.column_names[:1])
        mask[0] = True
    fm = freq_min[mask]
    f1 = freq_1se[mask]
    order = np.argsort(-np.maximum(fm, f1), kind="stable")
    ypos = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7.0, max(3.0, 0.3 * len(names) + 1.5)))
    ax.barh(ypos + 0.2, fm[order], height=0.4, label="lambda.min", color="tab:blue")
    ax.barh(ypos - 0.2, f1[order], height=0.4, label="lambda.1se", color="tab:orange")
    ax.axvline(threshold, color="tab:red", lw=1.0, ls="--", label="threshold")
    ax.set_yticks(ypos)
    ax.set_yticklabels([names[i] for i in order], fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("presence frequency across outer folds")
    ax.set_title("Variable presence")
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, out_path)


def fig_observed_predicted(
    pools: Mapping[str, PooledPredictions], out_path: str
) -> None:
    """Held-out predictions against observed counts, one panel per method."""
    methods = list(pools)
    cols = min(2, len(methods))
    rows = (len(methods) + cols - 1) // cols
    fig, axes = plt.subplots(
        rows, cols, figsize=(4.0 * cols, 3.5 * rows), squeeze=False
    )
    for k, method in enumerate(methods):
        ax = axes[k // cols][k % cols]
        pool = pools[method]
        top = max(float(pool.observed.max()), float(pool.predicted.max())) * 1.05
        ax.plot([0, top], [0, top], color="0.6", lw=1.0)
        ax.scatter(pool.observed, pool.predicted, s=8, alpha=0.5)
        ax.set_xlabel("observed")
        ax.set_ylabel("predicted")
        ax.set_title(method, fontsize=9)
    for k in range(len(methods), rows * cols):
        axes[k // cols][k % cols].axis("off")
    _save(fig, out_path)


def fig_path_coefficients(path: LassoPath, out_path: str, top: int = 8) -> None:
    """Standardized coefficient trajectories along the grid."""
    B = path.coefficient_matrix()
    x = np.log10(path.grid.values)
    strength = np.max(np.abs(B), axis=1)
    order = np.argsort(-strength, kind="stable")
    names = path.models[0].column_names
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for rank, j in enumerate(order):
        if strength[j] == 0.0:
            continue
        label = names[j] if rank < top else None
        ax.plot(x, B[j], lw=1.0, label=label)
    ax.axhline(0.0, color="0.8", lw=0.8)
    ax.set_xlabel("log10(lambda)")
    ax.set_ylabel("standardized coefficient")
    ax.set_title("Coefficient paths")
    if any(strength > 0):
        ax.legend(fontsize=7, loc="best")
    _save(fig, out_path)


def fig_path_deviance(
    lambdas: np.ndarray,
    deviances: Sequence[float],
    active_counts: Sequence[int],
    out_path: str,
) -> None:
    """Training deviance and active-set size along the grid."""
    x = np.log10(lambdas)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 5.5), sharex=True)
    ax1.plot(x, deviances, color="tab:blue")
    ax1.set_ylabel("training deviance")
    ax2.step(x, active_counts, where="post", color="tab:orange")
    ax2.set_ylabel("active columns")
    ax2.set_xlabel("log10(lambda)")
    _save(fig, out_path)
