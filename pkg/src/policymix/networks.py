"""Policy and value networks as flat dictionaries of named parameters.

Both network types share a layout convention: a trunk layer feeding several
two-layer heads.  Parameter names are dotted paths (``pi.trunk.W``,
``q1.head0.out.b``, ...) so gradient dictionaries, optimizer state, and
checkpoints can all address the same flat namespace.

The policy network owns two disjoint parameter groups that are trained by
different objectives:

* shaping parameters (trunk + per-policy heads) produce the K component
  Gaussians;
* activation parameters (``act.*``) produce the per-dimension logits that
  weight the components.

``policy_forward`` can detach the component outputs and trunk features so a
loss on the combined policy reaches only the activation group.

Forward passes exist twice: once on the gradient tape and once as plain
numpy (``*_np``) with the same operation order, so values agree bit for bit
and the cheap path can serve action selection, evaluation, and bootstrap
targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gaussians as gs
from .autodiff import Tensor

__all__ = [
    "CheckpointError",
    "PolicyNetwork",
    "QNetwork",
    "PolicyHeads",
    "make_policy_network",
    "make_q_network",
    "copy_network",
    "polyak_update",
    "components_forward",
    "policy_forward",
    "compose",
    "q_forward",
    "q_forward_head",
    "policy_forward_np",
    "combine_policy_np",
    "q_forward_np",
    "q_forward_head_np",
    "full_task_labels",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]

FORMAT_VERSION = 1

# final (output) layers start almost at zero so fresh policies act near the
# action-space center and fresh critics predict near-zero values
FINAL_INIT_SCALE = 3e-3

COMPOSITION_RULES = ("linear", "product")


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file cannot be matched to a network."""


# ---------------------------------------------------------------------------
# construction


def _policy_layout(d_s: int, d_a: int, k: int, hidden: int, prefix: str):
    """(base name, n_in, n_out, init kind) for every affine layer, in order."""
    layers = [(f"{prefix}.trunk", d_s, hidden, "hidden")]
    for i in range(k):
        layers.append((f"{prefix}.pol{i}.hid", hidden, hidden, "hidden"))
        layers.append((f"{prefix}.pol{i}.out", hidden, 2 * d_a, "final"))
    layers.append((f"{prefix}.act.hid", hidden, hidden, "hidden"))
    layers.append((f"{prefix}.act.out", hidden, k * d_a, "final"))
    return layers


def _q_layout(d_s: int, d_a: int, n_heads: int, hidden: int, prefix: str):
    layers = [(f"{prefix}.trunk", d_s + d_a, hidden, "hidden")]
    for j in range(n_heads):
        layers.append((f"{prefix}.head{j}.hid", hidden, hidden, "hidden"))
        layers.append((f"{prefix}.head{j}.out", hidden, 1, "final"))
    return layers


def _init_params(layout, rng: np.random.Generator) -> dict[str, Tensor]:
    """Initialize every layer in layout order (one rng draw per array).

    Hidden layers use the fan-in uniform U(+-1/sqrt(n_in)) with zero bias;
    final layers draw both weight and bias from U(+-FINAL_INIT_SCALE).
    """
    params: dict[str, Tensor] = {}
    for base, n_in, n_out, kind in layout:
        if kind == "hidden":
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = np.zeros(n_out)
        else:
            w = rng.uniform(-FINAL_INIT_SCALE, FINAL_INIT_SCALE, size=(n_in, n_out))
            b = rng.uniform(-FINAL_INIT_SCALE, FINAL_INIT_SCALE, size=n_out)
        params[f"{base}.W"] = Tensor(w, requires_grad=True, name=f"{base}.W")
        params[f"{base}.b"] = Tensor(b, requires_grad=True, name=f"{base}.b")
    return params


@dataclass
class PolicyNetwork:
    """K component heads plus an activation head over a shared trunk."""

    d_s: int
    d_a: int
    k: int
    hidden: int
    prefix: str
    params: dict[str, Tensor]

    def shaping_param_names(self) -> list[str]:
        """Parameters of the trunk and the K component heads."""
        return [
            n
            for n in self.params
            if n.startswith((f"{self.prefix}.trunk.", f"{self.prefix}.pol"))
        ]

    def activation_param_names(self) -> list[str]:
        """Parameters of the weighting head only."""
        return [n for n in self.params if n.startswith(f"{self.prefix}.act.")]


@dataclass
class QNetwork:
    """One scalar value head per task over a shared state-action trunk."""

    d_s: int
    d_a: int
    n_heads: int
    hidden: int
    prefix: str
    params: dict[str, Tensor]


def make_policy_network(
    d_s: int, d_a: int, k: int, hidden: int, rng: np.random.Generator, prefix: str = "pi"
) -> PolicyNetwork:
    layout = _policy_layout(d_s, d_a, k, hidden, prefix)
    return PolicyNetwork(d_s, d_a, k, hidden, prefix, _init_params(layout, rng))


def make_q_network(
    d_s: int, d_a: int, n_heads: int, hidden: int, rng: np.random.Generator, prefix: str = "q"
) -> QNetwork:
    layout = _q_layout(d_s, d_a, n_heads, hidden, prefix)
    return QNetwork(d_s, d_a, n_heads, hidden, prefix, _init_params(layout, rng))


def copy_network(net):
    """Independent deep copy (fresh arrays, same names); used for targets."""
    params = {
        name: Tensor(p.data.copy(), requires_grad=True, name=name)
        for name, p in net.params.items()
    }
    fields = {f: getattr(net, f) for f in net.__dataclass_fields__ if f != "params"}
    return type(net)(params=params, **fields)


def polyak_update(target, online, rho: float) -> None:
    """Move every target parameter toward its online twin.

    target <- rho * online + (1 - rho) * target, elementwise.  rho=1 copies
    the online network outright, rho=0 leaves the target untouched.
    """
    for name, tp in target.params.items():
        tp.data = rho * online.params[name].data + (1.0 - rho) * tp.data


# ---------------------------------------------------------------------------
# tape forward passes


@dataclass(frozen=True)
class PolicyHeads:
    """Everything one policy forward pass produces."""

    combined: gs.DiagGaussian
    components: tuple[gs.DiagGaussian, ...]
    weights: gs.ActivationWeights


def _affine_relu(params, base: str, x: Tensor) -> Tensor:
    return ad.relu(ad.linear_forward(x, params[f"{base}.W"], params[f"{base}.b"]))


def _trunk_features(net, s: Tensor) -> Tensor:
    return _affine_relu(net.params, f"{net.prefix}.trunk", s)


def _component_from_features(net, h: Tensor, i: int) -> gs.DiagGaussian:
    p = net.params
    hk = _affine_relu(p, f"{net.prefix}.pol{i}.hid", h)
    out = ad.linear_forward(hk, p[f"{net.prefix}.pol{i}.out.W"], p[f"{net.prefix}.pol{i}.out.b"])
    mean = ad.slice_cols(out, 0, net.d_a)
    log_std = ad.slice_cols(out, net.d_a, 2 * net.d_a)
    return gs.DiagGaussian(mean, log_std)


def components_forward(net: PolicyNetwork, s: Tensor) -> tuple[gs.DiagGaussian, ...]:
    """The K component Gaussians for a batch of states."""
    h = _trunk_features(net, s)
    return tuple(_component_from_features(net, h, i) for i in range(net.k))


def _activation_weights(net, h: Tensor) -> gs.ActivationWeights:
    p = net.params
    hw = _affine_relu(p, f"{net.prefix}.act.hid", h)
    logits = ad.linear_forward(hw, p[f"{net.prefix}.act.out.W"], p[f"{net.prefix}.act.out.b"])
    per_policy = [
        ad.slice_cols(logits, i * net.d_a, (i + 1) * net.d_a) for i in range(net.k)
    ]
    return gs.weights_from_logits(per_policy)


def compose(components, weights, rule: str) -> gs.DiagGaussian:
    if rule == "linear":
        return gs.compose_linear(components, weights)
    if rule == "product":
        return gs.compose_product(components, weights)
    raise ValueError(f"unknown composition rule {rule!r}; expected one of {COMPOSITION_RULES}")


def policy_forward(
    net: PolicyNetwork, s: Tensor, rule: str, detach_components: bool = False
) -> PolicyHeads:
    """Full pass: components, activation weights, and their composition.

    With ``detach_components`` the activation head reads detached trunk
    features and the composition reads detached component moments, so a loss
    on the combined policy backpropagates into activation parameters only.
    """
    h = _trunk_features(net, s)
    components = tuple(_component_from_features(net, h, i) for i in range(net.k))
    if detach_components:
        h = ad.detach(h)
        components = tuple(
            gs.DiagGaussian(ad.detach(g.mean), ad.detach(g.log_std)) for g in components
        )
    weights = _activation_weights(net, h)
    return PolicyHeads(compose(components, weights, rule), components, weights)


def q_forward(net: QNetwork, s: Tensor, a: Tensor) -> list[Tensor]:
    """Per-head values for a batch; each entry has shape (batch, 1)."""
    p = net.params
    h = _affine_relu(p, f"{net.prefix}.trunk", ad.concat(s, a))
    outs = []
    for j in range(net.n_heads):
        hj = _affine_relu(p, f"{net.prefix}.head{j}.hid", h)
        outs.append(
            ad.linear_forward(hj, p[f"{net.prefix}.head{j}.out.W"], p[f"{net.prefix}.head{j}.out.b"])
        )
    return outs


def q_forward_head(net: QNetwork, s: Tensor, a: Tensor, j: int) -> Tensor:
    """Value of head ``j`` only, shape (batch, 1); skips the other heads."""
    p = net.params
    h = _affine_relu(p, f"{net.prefix}.trunk", ad.concat(s, a))
    hj = _affine_relu(p, f"{net.prefix}.head{j}.hid", h)
    return ad.linear_forward(hj, p[f"{net.prefix}.head{j}.out.W"], p[f"{net.prefix}.head{j}.out.b"])


# ---------------------------------------------------------------------------
# numpy forward passes (same operation order as the tape versions)


def _affine_relu_np(params, base: str, x: np.ndarray) -> np.ndarray:
    return np.maximum(x @ params[f"{base}.W"].data + params[f"{base}.b"].data, 0.0)


def policy_forward_np(net: PolicyNetwork, s: np.ndarray):
    """Component moments and activation weights, stacked over k on axis 0.

    Returns (means, log_stds, weights), each of shape (k, batch, d_a).  The
    log-stds are raw head outputs; the composition helpers clamp them exactly
    like ``DiagGaussian`` does on the tape.
    """
    p = net.params
    h = _affine_relu_np(p, f"{net.prefix}.trunk", s)
    means = np.empty((net.k,) + h.shape[:-1] + (net.d_a,))
    log_stds = np.empty_like(means)
    for i in range(net.k):
        hk = _affine_relu_np(p, f"{net.prefix}.pol{i}.hid", h)
        out = hk @ p[f"{net.prefix}.pol{i}.out.W"].data + p[f"{net.prefix}.pol{i}.out.b"].data
        means[i] = out[..., : net.d_a]
        log_stds[i] = out[..., net.d_a :]
    hw = _affine_relu_np(p, f"{net.prefix}.act.hid", h)
    logits = hw @ p[f"{net.prefix}.act.out.W"].data + p[f"{net.prefix}.act.out.b"].data
    stacked = np.stack([logits[..., i * net.d_a : (i + 1) * net.d_a] for i in range(net.k)])
    return means, log_stds, gs.softmax_k_np(stacked)


def combine_policy_np(net: PolicyNetwork, s: np.ndarray, rule: str):
    """Moments of the combined policy for a batch of states."""
    means, log_stds, w = policy_forward_np(net, s)
    if rule == "linear":
        return gs.compose_linear_np(means, log_stds, w)
    if rule == "product":
        return gs.compose_product_np(means, log_stds, w)
    raise ValueError(f"unknown composition rule {rule!r}; expected one of {COMPOSITION_RULES}")


def q_forward_np(net: QNetwork, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Per-head values, shape (n_heads, batch)."""
    p = net.params
    h = _affine_relu_np(p, f"{net.prefix}.trunk", np.concatenate([s, a], axis=-1))
    out = np.empty((net.n_heads,) + h.shape[:-1])
    for j in range(net.n_heads):
        hj = _affine_relu_np(p, f"{net.prefix}.head{j}.hid", h)
        out[j] = (
            hj @ p[f"{net.prefix}.head{j}.out.W"].data + p[f"{net.prefix}.head{j}.out.b"].data
        )[..., 0]
    return out


def q_forward_head_np(net: QNetwork, s: np.ndarray, a: np.ndarray, j: int) -> np.ndarray:
    """Head ``j`` only, shape (batch,)."""
    p = net.params
    h = _affine_relu_np(p, f"{net.prefix}.trunk", np.concatenate([s, a], axis=-1))
    hj = _affine_relu_np(p, f"{net.prefix}.head{j}.hid", h)
    return (hj @ p[f"{net.prefix}.head{j}.out.W"].data + p[f"{net.prefix}.head{j}.out.b"].data)[..., 0]


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """A full training state restored from disk."""

    policy: PolicyNetwork
    q1: QNetwork
    q2: QNetwork
    q1_target: QNetwork
    q2_target: QNetwork
    log_alphas: list[float]
    step: int
    rule: str
    a_max: np.ndarray
    q_head_order: list[str]


def full_task_labels(k: int) -> list[str]:
    """Canonical head labels when every task is trained: components then M."""
    return [str(i + 1) for i in range(k)] + ["M"]


def _params_to_json(net) -> dict:
    return {name: p.data.tolist() for name, p in net.params.items()}


def _params_from_json(net, stored: dict, section: str) -> None:
    expected = set(net.params)
    got = set(stored)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise CheckpointError(
            f"parameter names in {section!r} do not match the architecture"
            f" (missing {missing}, unexpected {extra})"
        )
    for name, p in net.params.items():
        arr = np.asarray(stored[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"{section}.{name}: stored shape {arr.shape} != expected {p.data.shape}"
            )
        p.data = arr


def save_checkpoint(
    path,
    *,
    policy: PolicyNetwork,
    q1: QNetwork,
    q2: QNetwork,
    q1_target: QNetwork,
    q2_target: QNetwork,
    log_alphas,
    step: int,
    rule: str,
    a_max,
    q_head_order=None,
) -> None:
    """Write the full training state as sorted JSON.

    Floats go through repr, so loading and re-saving reproduces the file
    byte for byte and parameters round-trip bit-exactly.  ``q_head_order``
    labels the Q heads (defaults to components-then-M); a single-task run
    stores its one trained label instead.
    """
    if q_head_order is None:
        q_head_order = full_task_labels(policy.k)
    if len(q_head_order) != q1.n_heads:
        raise CheckpointError(
            f"{len(q_head_order)} head labels for {q1.n_heads} value heads"
        )
    payload = {
        "format_version": FORMAT_VERSION,
        "architecture": {
            "d_s": policy.d_s,
            "d_a": policy.d_a,
            "k": policy.k,
            "hidden": policy.hidden,
            "rule": rule,
            "a_max": np.asarray(a_max, dtype=np.float64).tolist(),
            "q_head_order": list(q_head_order),
        },
        "step": int(step),
        "log_alphas": [float(v) for v in log_alphas],
        "policy": _params_to_json(policy),
        "q1": _params_to_json(q1),
        "q2": _params_to_json(q2),
        "q1_target": _params_to_json(q1_target),
        "q2_target": _params_to_json(q2_target),
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path) -> Checkpoint:
    with open(path) as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"not a checkpoint file: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError("not a checkpoint file: no format_version field")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"format_version {payload['format_version']} unsupported (expected {FORMAT_VERSION})"
        )
    try:
        arch = payload["architecture"]
        d_s, d_a, k, hidden = arch["d_s"], arch["d_a"], arch["k"], arch["hidden"]
        rule = arch["rule"]
        a_max = np.asarray(arch["a_max"], dtype=np.float64)
        head_order = arch["q_head_order"]
        log_alphas = [float(v) for v in payload["log_alphas"]]
        step = int(payload["step"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e
    if rule not in COMPOSITION_RULES:
        raise CheckpointError(f"unknown composition rule {rule!r}")
    n_heads = len(head_order)
    if len(set(head_order)) != n_heads or n_heads == 0:
        raise CheckpointError(f"q_head_order {head_order} has duplicate or no labels")
    if n_heads > 1 and head_order != full_task_labels(k):
        raise CheckpointError(
            f"q_head_order {head_order} does not match k={k} ({full_task_labels(k)})"
        )
    if len(log_alphas) != n_heads:
        raise CheckpointError(f"expected {n_heads} temperatures, found {len(log_alphas)}")
    if a_max.shape != (d_a,):
        raise CheckpointError(f"a_max shape {a_max.shape} does not match d_a={d_a}")

    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    policy = make_policy_network(d_s, d_a, k, hidden, rng)
    nets = {
        "policy": policy,
        "q1": make_q_network(d_s, d_a, n_heads, hidden, rng, prefix="q1"),
        "q2": make_q_network(d_s, d_a, n_heads, hidden, rng, prefix="q2"),
        "q1_target": make_q_network(d_s, d_a, n_heads, hidden, rng, prefix="q1"),
        "q2_target": make_q_network(d_s, d_a, n_heads, hidden, rng, prefix="q2"),
    }
    for section, net in nets.items():
        if section not in payload:
            raise CheckpointError(f"checkpoint has no {section!r} section")
        _params_from_json(net, payload[section], section)
    return Checkpoint(
        policy=nets["policy"],
        q1=nets["q1"],
        q2=nets["q2"],
        q1_target=nets["q1_target"],
        q2_target=nets["q2_target"],
        log_alphas=log_alphas,
        step=step,
        rule=rule,
        a_max=a_max,
        q_head_order=list(head_order),
    )
