"""Reverse-mode automatic differentiation over dense float64 arrays.

Small tape-based engine sized for the MLPs used in this project: tensors
wrap numpy arrays, operations record local-gradient closures, and
``backward`` replays them in reverse topological order.  Includes the Adam
optimizer and a central finite-difference gradient checker.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "DivergenceError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "linear_forward",
    "relu",
    "tanh",
    "exp",
    "log",
    "clip",
    "minimum",
    "sum_",
    "mean_",
    "concat",
    "slice_cols",
    "detach",
    "AdamState",
    "Adam",
    "finite_diff_check",
]


class ShapeMismatchError(ValueError):
    """Operands cannot be combined because their shapes do not conform."""


class DivergenceError(RuntimeError):
    """A non-finite value appeared where training requires finite numbers."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus optional autodiff bookkeeping.

    ``requires_grad`` marks tensors gradients flow through; leaf parameters
    additionally carry a ``name`` so ``backward`` can report their gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar; scalars and arrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra operations


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * data / b.data, b.data.shape))

    return _node(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul requires (n,k) @ (k,m), got {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(data, (a, b), bw)


def linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` for a batch of row vectors."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeMismatchError(
            f"linear_forward expects 2-d x and w, got {x.data.shape}, {w.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0] or b.data.shape != (w.data.shape[1],):
        raise ShapeMismatchError(
            f"linear_forward shapes do not conform: x={x.data.shape} "
            f"w={w.data.shape} b={b.data.shape}"
        )
    data = x.data @ w.data + b.data

    def bw(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    return _node(data, (x, w, b), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)

    def bw(g):
        _accum(a, g * mask)

    return _node(data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - data * data))

    return _node(data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g):
        _accum(a, g * data)

    return _node(data, (a,), bw)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _node(data, (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; subgradient is zero outside the interval."""
    data = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)

    def bw(g):
        _accum(a, g * mask)

    return _node(data, (a,), bw)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; the gradient follows the smaller operand (ties -> a)."""
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def bw(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _node(data, (a, b), bw)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _node(data, (a,), bw)


def mean_(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape))

    return _node(data, (a,), bw)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two batches along the feature (last) axis."""
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatchError(
            f"concat needs matching leading dims, got {a.data.shape}, {b.data.shape}"
        )
    na = a.data.shape[-1]
    data = np.concatenate([a.data, b.data], axis=-1)

    def bw(g):
        _accum(a, g[..., :na])
        _accum(b, g[..., na:])

    return _node(data, (a, b), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """View of columns [start, stop) of the last axis."""
    data = a.data[..., start:stop]

    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accum(a, full)

    return _node(data, (a,), bw)


def detach(a: Tensor) -> Tensor:
    """Tensor with the same values but cut off from the graph."""
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(node) through the recorded graph.

    Returns the gradient of every named parameter reachable from ``loss``.
    The graph is freed afterwards, so a tensor tree supports exactly one
    backward pass.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    # iterative post-order DFS -> topological order
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)

    grads = {
        n.name: n.grad for n in topo if n.name is not None and n.grad is not None
    }
    for node in topo:
        node._bw = None
        node._parents = ()
        node.grad = None
    return grads


# ---------------------------------------------------------------------------
# Adam optimizer


class AdamState:
    """Per-parameter Adam accumulators."""

    __slots__ = ("step_count", "first_moment", "second_moment")

    def __init__(self, shape: tuple[int, ...]):
        self.step_count = 0
        self.first_moment = np.zeros(shape)
        self.second_moment = np.zeros(shape)


class Adam:
    """Adam with bias correction over a named parameter collection.

    Only parameters present in both ``params`` and the gradient map move:
    params without a gradient are left untouched, and gradient entries for
    tensors outside the collection (values that merely passed through the
    loss) are ignored.  That asymmetry is what keeps partitioned updates
    bit-exact on the frozen side.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.state: dict[str, AdamState] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        if self.lr == 0.0:
            for name in grads:
                if name not in params:
                    continue
                st = self.state.get(name)
                if st is None:
                    st = self.state[name] = AdamState(params[name].data.shape)
                st.step_count += 1
            return
        for name, g in grads.items():
            if name not in params:
                continue
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for parameter '{name}'")
            p = params[name]
            st = self.state.get(name)
            if st is None:
                st = self.state[name] = AdamState(p.data.shape)
            st.step_count += 1
            st.first_moment = self.beta1 * st.first_moment + (1.0 - self.beta1) * g
            st.second_moment = self.beta2 * st.second_moment + (1.0 - self.beta2) * (g * g)
            m_hat = st.first_moment / (1.0 - self.beta1**st.step_count)
            v_hat = st.second_moment / (1.0 - self.beta2**st.step_count)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must be deterministic (any noise inputs fixed by the caller) and
    read the live ``params`` tensors.  Per coordinate the check evaluates
    (f(p+h) - f(p-h)) / 2h and reports the worst relative error, where each
    difference is normalized by max(|analytic|, |numeric|, 1e-3) so that
    near-zero gradients are compared absolutely.

    ``coords_per_param`` limits the probe to a random coordinate subset of
    each parameter (all coordinates when None).
    """
    loss = f()
    grads = backward(loss)

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        analytic = grads.get(name, np.zeros_like(p.data)).reshape(-1)
        idx = np.arange(flat.size)
        if coords_per_param is not None and flat.size > coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=coords_per_param, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                f_plus = float(f().data)
            flat[i] = orig - h
            with no_grad():
                f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(analytic[i]), abs(numeric), 1e-3)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def check_all_finite(arrays: Iterable[np.ndarray], what: str) -> None:
    """Raise DivergenceError if any array contains NaN or Inf."""
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite values in {what}")
