"""Learning-curve figures: one panel per task, one line per algorithm.

Each algorithm's line is the across-seed mean of the (optionally smoothed)
per-seed return series, wrapped in a min-max band.  With a single seed the
band collapses onto the line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .logs import SchemaError, TrainLog, read_train_log

__all__ = ["CurveSpec", "smooth", "build_curves_figure", "render_curves", "PNG_METADATA"]

# pinned so repeated renders of the same inputs are byte-identical
PNG_METADATA = {"Software": "plotview"}
DPI = 150


@dataclass(frozen=True)
class CurveSpec:
    """What to plot: input logs, output path, and the smoothing window."""

    log_paths: tuple[str, ...]
    out_path: str
    smoothing_window: int = 5

    def __post_init__(self):
        if not self.log_paths:
            raise ValueError("at least one log path is required")
        if self.smoothing_window < 1:
            raise ValueError(
                f"smoothing window must be at least 1, got {self.smoothing_window}"
            )


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average over evaluation points; window 1 is identity."""
    values = np.asarray(values, dtype=float)
    if window == 1:
        return values.copy()
    out = np.empty_like(values)
    for i in range(len(values)):
        out[i] = values[max(0, i - window + 1) : i + 1].mean()
    return out


def _collect_series(logs: list[TrainLog]):
    """(task, algo) -> {seed: (steps, returns)}, steps sorted per seed."""
    series: dict[tuple[str, str], dict[int, tuple[np.ndarray, np.ndarray]]] = {}
    tasks: list[str] = []
    for log in logs:
        for task in log.tasks_in_order():
            if task not in tasks:
                tasks.append(task)
        for algo in np.unique(log.algo):
            for seed in np.unique(log.seed[log.algo == algo]):
                for task in np.unique(log.task):
                    sel = (log.algo == algo) & (log.seed == seed) & (log.task == task)
                    if not np.any(sel):
                        continue
                    order = np.argsort(log.step[sel], kind="stable")
                    steps = log.step[sel][order]
                    values = log.avg_return[sel][order]
                    bucket = series.setdefault((task, str(algo)), {})
                    if int(seed) in bucket:
                        prev_steps, prev_values = bucket[int(seed)]
                        steps = np.concatenate([prev_steps, steps])
                        values = np.concatenate([prev_values, values])
                        order = np.argsort(steps, kind="stable")
                        steps, values = steps[order], values[order]
                    bucket[int(seed)] = (steps, values)
    return tasks, series


def _aligned_matrix(task: str, algo: str, bucket, window: int):
    """Common step axis plus one smoothed row per seed."""
    seeds = sorted(bucket)
    steps0 = bucket[seeds[0]][0]
    rows = []
    for seed in seeds:
        steps, values = bucket[seed]
        if not np.array_equal(steps, steps0):
            raise SchemaError(
                f"algo '{algo}', task '{task}': seed {seed} evaluates at different "
                f"steps than seed {seeds[0]}; curves cannot be aggregated"
            )
        rows.append(smooth(values, window))
    return steps0, np.vstack(rows)


def build_curves_figure(spec: CurveSpec):
    logs = [read_train_log(p) for p in spec.log_paths]
    tasks, series = _collect_series(logs)
    algos = sorted({algo for (_, algo) in series})
    colors = {algo: f"C{i}" for i, algo in enumerate(algos)}

    fig, axes = plt.subplots(
        1, len(tasks), figsize=(4.0 * len(tasks), 3.2), squeeze=False, sharex=True
    )
    for ax, task in zip(axes[0], tasks):
        for algo in algos:
            bucket = series.get((task, algo))
            if not bucket:
                continue
            steps, rows = _aligned_matrix(task, algo, bucket, spec.smoothing_window)
            color = colors[algo]
            ax.plot(steps, rows.mean(axis=0), label=algo, color=color, linewidth=1.6)
            ax.fill_between(
                steps, rows.min(axis=0), rows.max(axis=0), color=color, alpha=0.25, linewidth=0
            )
        ax.set_title(f"task {task}")
        ax.set_xlabel("step")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower right", fontsize=8)
    axes[0][0].set_ylabel("avg_return")
    fig.tight_layout()
    return fig


def render_curves(spec: CurveSpec) -> Path:
    fig = build_curves_figure(spec)
    out = Path(spec.out_path)
    fig.savefig(out, dpi=DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return out
