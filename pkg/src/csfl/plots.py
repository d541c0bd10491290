"""Figure rendering for run metrics: accuracy, traffic, and compute savings."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless; must precede pyplot import
import matplotlib.pyplot as plt

_NUMERIC_INT = ("round", "bytes_down", "bytes_up", "cum_bytes_down", "cum_bytes_up")


def load_metrics(path: str | Path) -> list[dict]:
    """Rows from a metrics file written by the run command (.csv or .json)."""
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for key, value in row.items():
            if value is None or value == "":
                parsed[key] = None
            elif key in _NUMERIC_INT:
                parsed[key] = int(value)
            else:
                parsed[key] = float(value)
        out.append(parsed)
    return out


def _style(ax, xlabel: str, ylabel: str, title: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)


def accuracy_figure(runs: list[tuple[str, list[dict]]], path: str | Path) -> Path:
    """Test accuracy per round, one curve per run (dashed: dense reference)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rows in runs:
        rounds = [r["round"] for r in rows]
        ax.plot(rounds, [r["acc_sparse"] for r in rows], marker=".", label=label)
        if len(runs) == 1:
            ax.plot(
                rounds,
                [r["acc_dense"] for r in rows],
                linestyle="--",
                alpha=0.7,
                label=f"{label} (dense aggregate)",
            )
    _style(ax, "round", "test accuracy", "Accuracy per round")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def bytes_figure(runs: list[tuple[str, list[dict]]], path: str | Path) -> Path:
    """Cumulative transported bytes (down + up) per round."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rows in runs:
        rounds = [r["round"] for r in rows]
        total = [r["cum_bytes_down"] + r["cum_bytes_up"] for r in rows]
        ax.plot(rounds, total, marker=".", label=label)
    _style(ax, "round", "cumulative bytes (down + up)", "Communication volume")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def flops_figure(runs: list[tuple[str, list[dict]]], path: str | Path) -> Path:
    """Per-round client compute savings relative to dense training."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rows in runs:
        rounds = [r["round"] for r in rows]
        ax.plot(rounds, [r["flops_saved"] for r in rows], marker=".", label=label)
    _style(ax, "round", "FLOPs saved (fraction of dense)", "Client compute savings")
    ax.set_ylim(bottom=min(0.0, *(r["flops_saved"] for _, rows in runs for r in rows)))
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sweep_figure(
    param: str, points: list[tuple[float, float]], path: str | Path
) -> Path:
    """Best accuracy reached as a function of a swept config value."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    ax.plot(xs, ys, marker="o")
    _style(ax, param, "best test accuracy", f"Accuracy vs {param}")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_run_figures(rows: list[dict], output: str | Path, label: str) -> list[Path]:
    """The standard figure set next to a metrics file; returns written paths."""
    output = Path(output)
    stem = output.parent / output.stem
    runs = [(label, rows)]
    return [
        accuracy_figure(runs, f"{stem}_accuracy.png"),
        bytes_figure(runs, f"{stem}_bytes.png"),
        flops_figure(runs, f"{stem}_flops.png"),
    ]
