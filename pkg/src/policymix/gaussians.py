"""Diagonal-Gaussian policy algebra.

A compound policy is built from K simpler Gaussians and per-dimension
activation weights, either as a convex combination of sampled actions or as
a normalized weighted product of densities.  Both rules stay inside the
diagonal-Gaussian family, so composition is a closed-form map on means and
(log) standard deviations.  Actions are bounded by a tanh squash applied
after composition, with the exact change-of-variables log-density.

Everything here works on tensors of shape (..., d) where the last axis is
the action dimension; batched and single-sample uses share one code path.
Each tape function has a plain-numpy mirror (``*_np``) used on gradient-free
paths (behavior sampling, evaluation, bootstrap targets).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))

__all__ = [
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "DiagGaussian",
    "ActivationWeights",
    "SquashedSample",
    "weights_from_logits",
    "compose_linear",
    "compose_product",
    "sample_squashed",
    "log_prob_squashed",
    "softmax_k_np",
    "compose_linear_np",
    "compose_product_np",
    "sample_squashed_np",
    "log_prob_squashed_np",
]


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance, stored as mean and log-std.

    ``log_std`` is clamped to [LOG_STD_MIN, LOG_STD_MAX] on construction, so
    the standard deviation is always positive and bounded.
    """

    mean: Tensor
    log_std: Tensor

    def __post_init__(self):
        object.__setattr__(self, "log_std", ad.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    @property
    def std(self) -> Tensor:
        return ad.exp(self.log_std)

    @property
    def dim(self) -> int:
        return self.mean.data.shape[-1]


@dataclass(frozen=True)
class ActivationWeights:
    """Per-dimension mixing weights for K policies.

    ``per_policy[k]`` holds w^(k) with shape (..., d); across k each action
    dimension carries a probability simplex (entries in [0,1], summing to 1).
    """

    per_policy: tuple[Tensor, ...]

    @property
    def k(self) -> int:
        return len(self.per_policy)

    def as_matrix(self) -> np.ndarray:
        """Weights stacked to a (K, ..., d) array (values only)."""
        return np.stack([w.data for w in self.per_policy])

    @classmethod
    def from_matrix(cls, w: np.ndarray) -> "ActivationWeights":
        """Wrap an already-normalized (K, ..., d) weight array."""
        w = np.asarray(w, dtype=np.float64)
        return cls(tuple(Tensor(w[k]) for k in range(w.shape[0])))


@dataclass(frozen=True)
class SquashedSample:
    """A bounded action with its pre-squash draw and exact log-density."""

    action: Tensor
    pre_squash: Tensor
    log_prob: Tensor


def weights_from_logits(logits: Sequence[Tensor]) -> ActivationWeights:
    """Softmax across the K policies, independently per action dimension.

    The shift by the per-dimension max is a constant offset, so values and
    gradients equal the plain softmax while exp stays overflow-free.
    """
    shift = np.max(np.stack([t.data for t in logits]), axis=0)
    exps = [ad.exp(t - Tensor(shift)) for t in logits]
    total = exps[0]
    for e in exps[1:]:
        total = total + e
    return ActivationWeights(tuple(e / total for e in exps))


def compose_linear(policies: Sequence[DiagGaussian], weights: ActivationWeights) -> DiagGaussian:
    """Convex combination of per-dimension actions.

    mean_i = sum_k w_i^(k) m_i^(k);  var_i = sum_k (w_i^(k) s_i^(k))^2.
    """
    _check_compose_args(policies, weights)
    mean = None
    var = None
    for g, w in zip(policies, weights.per_policy):
        term_m = w * g.mean
        ws = w * g.std
        term_v = ws * ws
        mean = term_m if mean is None else mean + term_m
        var = term_v if var is None else var + term_v
    return DiagGaussian(mean, Tensor(0.5) * ad.log(var))


def compose_product(policies: Sequence[DiagGaussian], weights: ActivationWeights) -> DiagGaussian:
    """Normalized weighted product of Gaussian densities, per dimension.

    var_i = 1 / sum_k w_i^(k) / s_i^(k)^2;  mean_i = var_i * sum_k w_i^(k)
    m_i^(k) / s_i^(k)^2.  The normalizing constant is absorbed by the
    closed form.
    """
    _check_compose_args(policies, weights)
    precision = None
    weighted_mean = None
    for g, w in zip(policies, weights.per_policy):
        s = g.std
        prec_k = w / (s * s)
        term_m = prec_k * g.mean
        precision = prec_k if precision is None else precision + prec_k
        weighted_mean = term_m if weighted_mean is None else weighted_mean + term_m
    var = Tensor(1.0) / precision
    return DiagGaussian(var * weighted_mean, Tensor(0.5) * ad.log(var))


def _check_compose_args(policies: Sequence[DiagGaussian], weights: ActivationWeights) -> None:
    if len(policies) != weights.k:
        raise ad.ShapeMismatchError(
            f"{len(policies)} policies but {weights.k} weight rows"
        )
    dims = {g.dim for g in policies}
    if len(dims) != 1:
        raise ad.ShapeMismatchError(f"policies disagree on action dimension: {dims}")


def sample_squashed(g: DiagGaussian, noise: np.ndarray, a_max: np.ndarray) -> SquashedSample:
    """Reparameterized bounded sample: a = a_max * tanh(m + s * noise).

    ``noise`` is a fixed standard-normal draw, so gradients flow to the
    Gaussian parameters.  The log-density includes the tanh change of
    variables with a 1e-6 floor inside the Jacobian log.
    """
    std = g.std
    u = g.mean + std * Tensor(noise)
    return _squash(g, u, a_max, std)


def log_prob_squashed(g: DiagGaussian, pre_squash, a_max: np.ndarray) -> Tensor:
    """Log-density of the squashed action identified by its pre-squash value.

    Evaluating at ``sample.pre_squash`` reproduces ``sample.log_prob``
    bit-exactly (same formula, same operation order).
    """
    u = pre_squash if isinstance(pre_squash, Tensor) else Tensor(pre_squash)
    return _squash(g, u, a_max).log_prob


def _squash(g: DiagGaussian, u: Tensor, a_max: np.ndarray, std: Tensor | None = None) -> SquashedSample:
    a_max = np.asarray(a_max, dtype=np.float64)
    if std is None:
        std = g.std
    t = ad.tanh(u)
    action = Tensor(a_max) * t
    z = (u - g.mean) / std
    gauss = Tensor(-0.5 * _LOG_2PI) - g.log_std - Tensor(0.5) * (z * z)
    jac = ad.log(Tensor(a_max) * (Tensor(1.0) - t * t) + Tensor(SQUASH_EPS))
    log_prob = ad.sum_(gauss - jac, axis=-1)
    return SquashedSample(action=action, pre_squash=u, log_prob=log_prob)


# ---------------------------------------------------------------------------
# plain-numpy mirrors (no graph); stacked over k on axis 0


def softmax_k_np(logits: np.ndarray) -> np.ndarray:
    """Softmax over axis 0 of a (K, ..., d) logit array."""
    shift = logits.max(axis=0)
    e = np.exp(logits - shift)
    return e / e.sum(axis=0)


def compose_linear_np(means: np.ndarray, log_stds: np.ndarray, w: np.ndarray):
    stds = np.exp(np.clip(log_stds, LOG_STD_MIN, LOG_STD_MAX))
    mean = (w * means).sum(axis=0)
    var = ((w * stds) ** 2).sum(axis=0)
    return mean, np.clip(0.5 * np.log(var), LOG_STD_MIN, LOG_STD_MAX)


def compose_product_np(means: np.ndarray, log_stds: np.ndarray, w: np.ndarray):
    stds = np.exp(np.clip(log_stds, LOG_STD_MIN, LOG_STD_MAX))
    prec = w / (stds * stds)
    var = 1.0 / prec.sum(axis=0)
    mean = var * (prec * means).sum(axis=0)
    return mean, np.clip(0.5 * np.log(var), LOG_STD_MIN, LOG_STD_MAX)


def sample_squashed_np(mean: np.ndarray, log_std: np.ndarray, noise: np.ndarray, a_max: np.ndarray):
    """Numpy mirror of sample_squashed; returns (action, pre_squash, log_prob)."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * noise
    return _squash_np(mean, log_std, std, u, a_max)


def log_prob_squashed_np(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray, a_max: np.ndarray):
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return _squash_np(mean, log_std, np.exp(log_std), u, a_max)[2]


def _squash_np(mean, log_std, std, u, a_max):
    t = np.tanh(u)
    action = a_max * t
    z = (u - mean) / std
    gauss = -0.5 * _LOG_2PI - log_std - 0.5 * (z * z)
    jac = np.log(a_max * (1.0 - t * t) + SQUASH_EPS)
    return action, u, (gauss - jac).sum(axis=-1)
