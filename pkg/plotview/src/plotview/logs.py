"""Readers for the training CLI's delimited outputs, with schema validation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SchemaError",
    "LOG_COLUMNS",
    "QGRID_COLUMNS",
    "TrainLog",
    "QGrid",
    "read_train_log",
    "read_qgrid",
]

LOG_COLUMNS = (
    "step",
    "algo",
    "seed",
    "task",
    "avg_return",
    "final_distance",
    "entropy",
    "alpha",
    "q_loss",
    "pi_loss",
)

QGRID_COLUMNS = (
    "task_id",
    "state_x",
    "state_y",
    "action_x",
    "action_y",
    "q_value",
    "mean",
)


class SchemaError(ValueError):
    """Input file does not match the expected delimited schema."""


def _check_header(found: list[str], expected: tuple[str, ...], path) -> None:
    for column in expected:
        if column not in found:
            raise SchemaError(f"{path}: missing column '{column}'")
    for column in found:
        if column not in expected:
            raise SchemaError(f"{path}: unexpected column '{column}'")


@dataclass(frozen=True)
class TrainLog:
    """One training log: column arrays plus the file it came from."""

    path: str
    step: np.ndarray  # int
    algo: np.ndarray  # str
    seed: np.ndarray  # int
    task: np.ndarray  # str
    avg_return: np.ndarray  # float

    def tasks_in_order(self) -> list[str]:
        seen: list[str] = []
        for t in self.task:
            if t not in seen:
                seen.append(t)
        return seen


@dataclass(frozen=True)
class QGrid:
    """One action-grid export: column arrays plus the file it came from."""

    path: str
    task_id: np.ndarray  # str
    state_x: np.ndarray
    state_y: np.ndarray
    action_x: np.ndarray
    action_y: np.ndarray
    q_value: np.ndarray
    mean: np.ndarray  # int flag, 1 on policy-mean rows

    def tasks_in_order(self) -> list[str]:
        seen: list[str] = []
        for t in self.task_id:
            if t not in seen:
                seen.append(t)
        return seen

    def states_in_order(self) -> list[tuple[float, float]]:
        seen: list[tuple[float, float]] = []
        for xy in zip(self.state_x, self.state_y):
            if xy not in seen:
                seen.append(xy)
        return seen


def _read_rows(path, expected: tuple[str, ...]) -> dict[str, list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        _check_header(header, expected, path)
        columns: dict[str, list[str]] = {name: [] for name in header}
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            for name, value in zip(header, row):
                columns[name].append(value)
    return columns


def _floats(columns: dict[str, list[str]], name: str, path) -> np.ndarray:
    try:
        return np.array([float(v) for v in columns[name]])
    except ValueError:
        raise SchemaError(f"{path}: non-numeric value in column '{name}'") from None


def _ints(columns: dict[str, list[str]], name: str, path) -> np.ndarray:
    try:
        return np.array([int(v) for v in columns[name]])
    except ValueError:
        raise SchemaError(f"{path}: non-integer value in column '{name}'") from None


def read_train_log(path) -> TrainLog:
    columns = _read_rows(path, LOG_COLUMNS)
    return TrainLog(
        path=str(path),
        step=_ints(columns, "step", path),
        algo=np.array(columns["algo"]),
        seed=_ints(columns, "seed", path),
        task=np.array(columns["task"]),
        avg_return=_floats(columns, "avg_return", path),
    )


def read_qgrid(path) -> QGrid:
    columns = _read_rows(path, QGRID_COLUMNS)
    grid = QGrid(
        path=str(path),
        task_id=np.array(columns["task_id"]),
        state_x=_floats(columns, "state_x", path),
        state_y=_floats(columns, "state_y", path),
        action_x=_floats(columns, "action_x", path),
        action_y=_floats(columns, "action_y", path),
        q_value=_floats(columns, "q_value", path),
        mean=_ints(columns, "mean", path),
    )
    if len(grid.task_id) == 0:
        raise SchemaError(f"{path}: no data rows")
    if not np.all((grid.mean == 0) | (grid.mean == 1)):
        raise SchemaError(f"{path}: column 'mean' must be 0 or 1")
    return grid
