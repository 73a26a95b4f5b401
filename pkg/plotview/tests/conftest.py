"""Shared factories that synthesize small, well-formed CSV artifacts."""

import csv

import numpy as np
import pytest

from plotview.logs import LOG_COLUMNS, QGRID_COLUMNS

TASKS = ("1", "2", "M")
STATES = ((4.0, 4.0), (-4.0, 4.0), (4.0, -4.0), (-4.0, -4.0), (0.0, 0.0))


def _return_value(algo: str, seed: int, task: str, step: int) -> float:
    """Deterministic, distinct curve per (algo, seed, task)."""
    base = -10.0 + step / 500.0
    return base + 0.3 * seed + 0.1 * TASKS.index(task) + (0.5 if algo == "sac" else 0.0)


def write_train_log(
    path,
    algos=("hiusac-1",),
    seeds=(0, 1),
    tasks=TASKS,
    steps=(1000, 2000, 3000, 4000),
):
    """Write a synthetic train_log.csv and return its rows keyed for lookups."""
    values = {}
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for algo in algos:
            algo_tasks = ("M",) if algo == "sac" else tasks
            for seed in seeds:
                for step in steps:
                    for task in algo_tasks:
                        ret = _return_value(algo, seed, task, step)
                        values[(algo, seed, task, step)] = ret
                        writer.writerow(
                            [step, algo, seed, task, ret, 0.25, 1.1, 0.2, 0.01, -5.0]
                        )
    return values


def qgrid_q_value(task: str, state, action) -> float:
    sx, sy = state
    return -((action[0] - sx / 4.0) ** 2) - (action[1] - sy / 4.0) ** 2 - TASKS.index(task)


def write_qgrid(path, tasks=TASKS, states=STATES, grid_points=3):
    """Write a synthetic qgrid.csv with a full action grid plus mean rows."""
    axis = np.linspace(-4.0, 4.0, grid_points)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh)
        writer.writerow(QGRID_COLUMNS)
        for task in tasks:
            for state in states:
                for ax_ in axis:
                    for ay in axis:
                        writer.writerow(
                            [task, state[0], state[1], ax_, ay,
                             qgrid_q_value(task, state, (ax_, ay)), 0]
                        )
                mean_action = (state[0] / 8.0, state[1] / 8.0)
                writer.writerow(
                    [task, state[0], state[1], mean_action[0], mean_action[1],
                     qgrid_q_value(task, state, mean_action), 1]
                )


@pytest.fixture
def train_log_factory(tmp_path):
    def make(name="train_log.csv", **kwargs):
        path = tmp_path / name
        values = write_train_log(path, **kwargs)
        return path, values

    return make


@pytest.fixture
def qgrid_factory(tmp_path):
    def make(name="qgrid.csv", **kwargs):
        path = tmp_path / name
        write_qgrid(path, **kwargs)
        return path

    return make
