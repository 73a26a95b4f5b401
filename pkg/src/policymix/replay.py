"""Uniform replay memory over fixed-size transition records.

Storage is columnar (one array per field) in a ring that grows
geometrically up to ``capacity``, so huge nominal capacities cost nothing
until actually filled.  Eviction is strict FIFO once the ring is full.
Sampling is uniform with replacement and returns stacked arrays ready for
batched network passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Transition", "Batch", "ReplayMemory"]

_MIN_ALLOC = 1024


@dataclass(frozen=True)
class Transition:
    """One environment interaction: state, executed action, reward vector."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: bool


@dataclass(frozen=True)
class Batch:
    """n transitions stacked along axis 0."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.s.shape[0]

    def transition(self, i: int) -> Transition:
        return Transition(self.s[i], self.a[i], self.r[i], self.s_next[i], bool(self.done[i]))


class ReplayMemory:
    """FIFO ring buffer with uniform random minibatch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.total_pushes = 0
        self._size = 0
        self._next = 0
        self._alloc = 0
        self._cols: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self._size

    def _validate(self, t: Transition) -> dict[str, np.ndarray]:
        fields = {
            "s": np.asarray(t.s, dtype=np.float64),
            "a": np.asarray(t.a, dtype=np.float64),
            "r": np.asarray(t.r, dtype=np.float64),
            "s_next": np.asarray(t.s_next, dtype=np.float64),
        }
        for name, arr in fields.items():
            if arr.ndim != 1:
                raise ValueError(f"transition field {name!r} must be a vector, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"transition field {name!r} contains non-finite values: {arr}")
        if fields["s"].shape != fields["s_next"].shape:
            raise ValueError("s and s_next disagree on state dimension")
        return fields

    def _ensure_room(self, fields: dict[str, np.ndarray]) -> None:
        if self._cols is None:
            self._alloc = min(self.capacity, _MIN_ALLOC)
            self._cols = {
                name: np.empty((self._alloc,) + arr.shape) for name, arr in fields.items()
            }
            self._cols["done"] = np.empty(self._alloc, dtype=bool)
            return
        if self._size == self._alloc and self._alloc < self.capacity:
            new_alloc = min(self.capacity, self._alloc * 4)
            for name, col in self._cols.items():
                grown = np.empty((new_alloc,) + col.shape[1:], dtype=col.dtype)
                grown[: self._size] = col[: self._size]
                self._cols[name] = grown
            self._alloc = new_alloc

    def push(self, t: Transition) -> None:
        """Append one transition, evicting the oldest when at capacity."""
        fields = self._validate(t)
        self._ensure_room(fields)
        assert self._cols is not None
        for name, arr in fields.items():
            col = self._cols[name]
            if col.shape[1:] != arr.shape:
                raise ValueError(
                    f"transition field {name!r} has shape {arr.shape}, "
                    f"buffer stores {col.shape[1:]}"
                )
            col[self._next] = arr
        self._cols["done"][self._next] = bool(t.done)
        self.total_pushes += 1
        if self._size < self._alloc:
            self._size += 1
        if self._alloc == self.capacity:
            self._next = (self._next + 1) % self._alloc
        else:
            self._next += 1  # never wraps: _ensure_room grows first

    def sample_minibatch(self, n: int, rng: np.random.Generator) -> Batch | None:
        """n transitions drawn uniformly with replacement, or None if not ready."""
        if n < 1:
            raise ValueError(f"minibatch size must be positive, got {n}")
        if self._size < n:
            return None
        idx = rng.integers(0, self._size, size=n)
        c = self._cols
        return Batch(
            s=c["s"][idx], a=c["a"][idx], r=c["r"][idx], s_next=c["s_next"][idx], done=c["done"][idx]
        )

    def snapshot(self) -> Batch | None:
        """Current contents, oldest first (mainly for inspection and tests)."""
        if self._size == 0:
            return None
        if self._size < self._alloc or self._next == 0 or self._next == self._size:
            idx = np.arange(self._size)
        else:
            idx = np.concatenate([np.arange(self._next, self._size), np.arange(self._next)])
        c = self._cols
        return Batch(
            s=c["s"][idx], a=c["a"][idx], r=c["r"][idx], s_next=c["s_next"][idx], done=c["done"][idx]
        )
