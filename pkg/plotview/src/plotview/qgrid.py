"""Contour tiles of critic values over the action grid, one tile per
(task, probe state), with the deterministic policy action marked.

All tiles share one contour scale and one colorbar whose range equals the
minimum and maximum q_value in the file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .curves import DPI, PNG_METADATA
from .logs import QGrid, SchemaError, read_qgrid

__all__ = ["build_qgrid_figure", "render_qgrid"]

N_LEVELS = 21
MARKER_STYLE = dict(marker="x", color="white", markersize=9, markeredgewidth=2.2)


def _tile_surface(grid: QGrid, sel: np.ndarray, task: str, state):
    """Rebuild the regular action grid for one tile from its value rows."""
    ax_vals = grid.action_x[sel]
    ay_vals = grid.action_y[sel]
    xs = np.unique(ax_vals)
    ys = np.unique(ay_vals)
    if len(xs) * len(ys) != sel.sum():
        raise SchemaError(
            f"{grid.path}: task '{task}' at state ({state[0]:g},{state[1]:g}) does "
            "not form a full action grid"
        )
    surface = np.full((len(ys), len(xs)), np.nan)
    xi = np.searchsorted(xs, ax_vals)
    yi = np.searchsorted(ys, ay_vals)
    surface[yi, xi] = grid.q_value[sel]
    if not np.all(np.isfinite(surface)):
        raise SchemaError(
            f"{grid.path}: task '{task}' at state ({state[0]:g},{state[1]:g}) has "
            "duplicate or missing grid actions"
        )
    return xs, ys, surface


def build_qgrid_figure(path):
    grid = read_qgrid(path)
    tasks = grid.tasks_in_order()
    states = grid.states_in_order()

    vmin = float(grid.q_value.min())
    vmax = float(grid.q_value.max())
    if vmax - vmin < 1e-12:  # constant surface; keep contour levels distinct
        vmin, vmax = vmin - 1e-9, vmax + 1e-9
    levels = np.linspace(vmin, vmax, N_LEVELS)

    fig, axes = plt.subplots(
        len(tasks),
        len(states),
        figsize=(3.0 * len(states), 2.8 * len(tasks)),
        squeeze=False,
        sharex=True,
        sharey=True,
    )
    contour = None
    for i, task in enumerate(tasks):
        task_sel = grid.task_id == task
        for j, state in enumerate(states):
            state_sel = task_sel & (grid.state_x == state[0]) & (grid.state_y == state[1])
            value_sel = state_sel & (grid.mean == 0)
            mean_sel = state_sel & (grid.mean == 1)
            if not np.any(value_sel) or not np.any(mean_sel):
                raise SchemaError(
                    f"{grid.path}: task '{task}' at state ({state[0]:g},{state[1]:g}) "
                    "is missing value or mean rows"
                )
            xs, ys, surface = _tile_surface(grid, value_sel, task, state)
            ax = axes[i][j]
            contour = ax.contourf(xs, ys, surface, levels=levels)
            ax.plot(grid.action_x[mean_sel], grid.action_y[mean_sel], **MARKER_STYLE)
            ax.set_title(f"task {task} @ ({state[0]:g},{state[1]:g})", fontsize=9)
            if i == len(tasks) - 1:
                ax.set_xlabel("action_x", fontsize=8)
            if j == 0:
                ax.set_ylabel("action_y", fontsize=8)
    fig.colorbar(contour, ax=axes, shrink=0.9, label="q_value")
    return fig


def render_qgrid(path, out_path) -> Path:
    fig = build_qgrid_figure(path)
    out = Path(out_path)
    fig.savefig(out, dpi=DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return out
