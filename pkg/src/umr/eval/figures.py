"""Matplotlib figures written next to the tabular reports."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import RecallReport  # noqa: E402

MODE_COLORS = {
    "baseline": "#969696",
    "q-only": "#50a2d5",
    "c-only": "#76bb4b",
    "full": "#eb3920",
    "inference-only": "#9370db",
}

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "axes.grid.axis": "y",
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # no timestamps etc. in the output so reruns are byte-stable
    "svg.hashsalt": "umr",
}


def _color(label: str, i: int) -> str:
    return MODE_COLORS.get(label, f"C{i}")


def plot_task_recall(reports: Mapping[str, RecallReport], cutoff: int, path: str | os.PathLike) -> Path:
    """Grouped bars: one group per task, one bar per report (mode)."""
    labels = list(reports)
    tasks = list(next(iter(reports.values())).per_task) if reports else []
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(tasks) + 1.5), 3.2))
        width = 0.8 / max(1, len(labels))
        x = np.arange(len(tasks))
        for i, label in enumerate(labels):
            vals = [100 * reports[label].per_task[t].get(cutoff, np.nan) for t in tasks]
            ax.bar(x + (i - (len(labels) - 1) / 2) * width, vals, width, label=label, color=_color(label, i))
        ax.set_xticks(x)
        ax.set_xticklabels(tasks, rotation=20, ha="right")
        ax.set_ylabel(f"R@{cutoff} (%)")
        ax.set_ylim(0, 100)
        ax.legend(frameon=False, ncol=min(5, len(labels)), fontsize=8)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
        plt.close(fig)
    return path


def plot_macro_by_mode(reports_by_seed: Mapping[int, Mapping[str, RecallReport]], cutoff: int,
                       path: str | os.PathLike) -> Path:
    """Macro R@cutoff per mode across seeds: bars are seed means, dots are single seeds."""
    seeds = sorted(reports_by_seed)
    modes = list(reports_by_seed[seeds[0]]) if seeds else []
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 * len(modes) + 1.5, 3.0))
        for i, mode in enumerate(modes):
            vals = np.array([100 * reports_by_seed[s][mode].macro_average()[cutoff] for s in seeds])
            ax.bar(i, vals.mean(), 0.6, color=_color(mode, i), alpha=0.8)
            ax.scatter(np.full(len(vals), i), vals, s=10, color="k", zorder=3)
        ax.set_xticks(range(len(modes)))
        ax.set_xticklabels(modes)
        ax.set_ylabel(f"macro R@{cutoff} (%)")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
        plt.close(fig)
    return path
