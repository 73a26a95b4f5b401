"""Small deterministic control tasks emitting one reward per sub-task.

Every step yields a K+1 reward vector ordered [task 1 .. task K, combined]:
each component task scores one coordinate of the goal error, the combined
entry scores the Euclidean distance, and all of them share a quadratic
action penalty.  Rewards are never positive and reach 0 exactly at the
respective target, so episode returns are bounded above by zero.

Episodes end by time limit only; ``done`` marks the horizon, not an
environment death, so value bootstrapping should ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TaskSpec",
    "StepResult",
    "Navigation2D",
    "Reacher2DKinematic",
    "make_env",
    "ENV_NAMES",
]

ACTION_PENALTY = 0.01


@dataclass(frozen=True)
class TaskSpec:
    """Static description of an environment's task family."""

    name: str
    k: int
    task_labels: tuple[str, ...]
    entropy_targets: tuple[float, ...]
    d_s: int
    d_a: int
    a_max: np.ndarray
    horizon: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"need at least 2 component tasks, got k={self.k}")
        if len(self.task_labels) != self.k + 1:
            raise ValueError("task_labels must have k+1 entries")
        if len(self.entropy_targets) != self.k + 1:
            raise ValueError("entropy_targets must have k+1 entries")
        object.__setattr__(self, "a_max", np.asarray(self.a_max, dtype=np.float64))
        if self.a_max.shape != (self.d_a,):
            raise ValueError(f"a_max shape {self.a_max.shape} != (d_a,)")


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    rewards: np.ndarray
    done: bool


def _penalty(action: np.ndarray) -> float:
    return ACTION_PENALTY * float(np.sum(action * action))


class Navigation2D:
    """Velocity-controlled point mass steering toward (-2, -2).

    Starts near (4, 4) (spherical Gaussian, std 0.5) and integrates
    p <- p + dt * a with the position clipped to the [-10, 10]^2 arena.
    Task 1 rewards progress along x, task 2 along y.
    """

    GOAL = np.array([-2.0, -2.0])
    START_CENTER = np.array([4.0, 4.0])
    START_STD = 0.5
    DT = 0.05
    ARENA = 10.0

    def __init__(self):
        self.spec = TaskSpec(
            name="nav2d",
            k=2,
            task_labels=("1", "2", "M"),
            entropy_targets=(0.0, 0.0, 0.0),
            d_s=2,
            d_a=2,
            a_max=np.array([4.0, 4.0]),
            horizon=200,
        )
        self.position = np.zeros(2)
        self.t = 0
        self.clipped_actions = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.position = self.START_CENTER + self.START_STD * rng.standard_normal(2)
        self.t = 0
        return self.position.copy()

    def _clip_action(self, action: np.ndarray) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        a_max = self.spec.a_max
        if np.any(np.abs(action) > a_max):
            self.clipped_actions += int(np.sum(np.abs(action) > a_max))
            action = np.clip(action, -a_max, a_max)
        return action

    def step(self, action: np.ndarray) -> StepResult:
        action = self._clip_action(action)
        prev = self.position
        self.position = np.clip(prev + self.DT * action, -self.ARENA, self.ARENA)
        self.t += 1
        return StepResult(
            next_state=self.position.copy(),
            rewards=self.reward_vector(prev, action, self.position),
            done=self.t >= self.spec.horizon,
        )

    def reward_vector(self, state, action, next_state) -> np.ndarray:
        pen = _penalty(np.asarray(action))
        dx, dy, dist = self._distances(np.asarray(next_state))
        return np.array([-dx - pen, -dy - pen, -dist - pen])

    def distances(self) -> np.ndarray:
        """Per-task goal errors [|x-gx|, |y-gy|, Euclidean] at the current state."""
        return np.array(self._distances(self.position))

    def _distances(self, p: np.ndarray):
        delta = p - self.GOAL
        return abs(float(delta[0])), abs(float(delta[1])), float(np.hypot(*delta))


class Reacher2DKinematic:
    """Three-link planar arm, joint velocities commanded directly.

    The state is [3 joint angles, previous commanded velocities, end-effector
    minus goal].  A fresh goal is drawn each episode on an annulus inside the
    arm's reach; task 1 scores the end-effector x error, task 2 the y error.
    Harder than the point mass because every joint moves both coordinates.
    """

    LINKS = np.array([1.0, 1.0, 1.0])
    DT = 0.05
    GOAL_RADIUS = (0.5, 2.5)
    START_ANGLE_SPREAD = 0.1

    def __init__(self):
        self.spec = TaskSpec(
            name="reacher2d-kin",
            k=2,
            task_labels=("1", "2", "M"),
            entropy_targets=(1.0, 1.0, 1.0),
            d_s=8,
            d_a=3,
            a_max=np.array([1.0, 1.0, 1.0]),
            horizon=300,
        )
        self.angles = np.zeros(3)
        self.prev_cmd = np.zeros(3)
        self.goal = np.zeros(2)
        self.t = 0
        self.clipped_actions = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.angles = rng.uniform(-self.START_ANGLE_SPREAD, self.START_ANGLE_SPREAD, size=3)
        self.prev_cmd = np.zeros(3)
        radius = rng.uniform(*self.GOAL_RADIUS)
        theta = rng.uniform(-np.pi, np.pi)
        self.goal = radius * np.array([np.cos(theta), np.sin(theta)])
        self.t = 0
        return self._observe()

    def end_effector(self) -> np.ndarray:
        joint_sums = np.cumsum(self.angles)
        return np.array(
            [np.sum(self.LINKS * np.cos(joint_sums)), np.sum(self.LINKS * np.sin(joint_sums))]
        )

    def _observe(self) -> np.ndarray:
        return np.concatenate([self.angles, self.prev_cmd, self.end_effector() - self.goal])

    def _clip_action(self, action: np.ndarray) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        a_max = self.spec.a_max
        if np.any(np.abs(action) > a_max):
            self.clipped_actions += int(np.sum(np.abs(action) > a_max))
            action = np.clip(action, -a_max, a_max)
        return action

    def step(self, action: np.ndarray) -> StepResult:
        action = self._clip_action(action)
        state = self._observe()
        self.angles = _wrap_angle(self.angles + self.DT * action)
        self.prev_cmd = action
        self.t += 1
        next_state = self._observe()
        return StepResult(
            next_state=next_state,
            rewards=self.reward_vector(state, action, next_state),
            done=self.t >= self.spec.horizon,
        )

    def reward_vector(self, state, action, next_state) -> np.ndarray:
        # next_state[6:8] already holds end-effector minus goal
        pen = _penalty(np.asarray(action))
        delta = np.asarray(next_state)[6:8]
        return np.array(
            [
                -abs(float(delta[0])) - pen,
                -abs(float(delta[1])) - pen,
                -float(np.hypot(*delta)) - pen,
            ]
        )

    def distances(self) -> np.ndarray:
        delta = self.end_effector() - self.goal
        return np.array([abs(float(delta[0])), abs(float(delta[1])), float(np.hypot(*delta))])


def _wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


ENV_NAMES = ("nav2d", "reacher2d-kin")


def make_env(name: str):
    if name == "nav2d":
        return Navigation2D()
    if name == "reacher2d-kin":
        return Reacher2DKinematic()
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")
