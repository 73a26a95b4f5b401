"""Self-contained verification suites for the composition and loss machinery.

Two suite families back the ``check`` command:

* ``oracle`` — validates the closed-form Gaussian compositions against
  independent estimators: the linear rule against Monte-Carlo moments of the
  weighted sum of per-component draws, and the product rule against moments
  of the grid-normalized weighted product density.
* ``grad`` — validates every analytic loss gradient (critic, component
  improvement, combined improvement, temperature) and the compound policy
  log-prob against central finite differences, and asserts the partitioned
  updates are bit-exact on their frozen side.

Every check returns a :class:`CheckResult` naming the operation and the
worst measured error, so failures are directly actionable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gaussians as gs
from . import networks as nw
from .autodiff import Tensor
from .envs import Navigation2D
from .replay import Batch
from .trainer import Trainer, TrainerConfig

__all__ = [
    "SUITES",
    "CheckResult",
    "check_linear_oracle",
    "check_product_oracle",
    "check_gradient_suite",
    "check_partition",
    "run_suite",
    "format_report",
    "all_passed",
]

SUITES = ("grad", "oracle", "all")


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one verification: the operation, its worst error, and cost."""

    operation: str
    max_error: float
    tolerance: float
    cases: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


# ---------------------------------------------------------------------------
# composition oracles


def _trapezoid(y: np.ndarray, h: float) -> float:
    return float(h * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def check_linear_oracle(
    n_cases: int = 100, n_draws: int = 1_000_000, tol: float = 0.01, seed: int = 101
) -> CheckResult:
    """Linear rule vs Monte-Carlo moments of the weighted sum of draws.

    Each case draws K in 2..4 component Gaussians over 1..3 action
    dimensions and per-dimension simplex weights.  The estimator samples
    every component independently, forms a = sum_k w_k a_k per draw, and
    compares the empirical mean and standard deviation with the closed-form
    composition, relative to the closed-form value.  Component means keep
    |m| >= 1 and a shared sign so the relative error is well conditioned.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    chunk = 250_000
    for _ in range(n_cases):
        k = int(rng.integers(2, 5))
        d = int(rng.integers(1, 4))
        sign = float(rng.choice([-1.0, 1.0]))
        means = sign * rng.uniform(1.0, 3.0, size=(k, d))
        log_stds = rng.uniform(-1.0, 0.3, size=(k, d))
        w = gs.softmax_k_np(rng.uniform(-1.5, 1.5, size=(k, d)))

        mean, log_std = gs.compose_linear_np(means, log_stds, w)
        std = np.exp(log_std)

        base = (w * means).sum(axis=0)
        coeff = w * np.exp(log_stds)
        total = np.zeros(d)
        total_sq = np.zeros(d)
        done = 0
        while done < n_draws:
            n = min(chunk, n_draws - done)
            z = rng.standard_normal((n, k, d))
            y = base + np.einsum("kd,nkd->nd", coeff, z)
            total += y.sum(axis=0)
            total_sq += (y * y).sum(axis=0)
            done += n
        mc_mean = total / n_draws
        mc_std = np.sqrt(total_sq / n_draws - mc_mean * mc_mean)

        err = max(
            float(np.max(np.abs(mc_mean - mean) / np.abs(mean))),
            float(np.max(np.abs(mc_std - std) / std)),
        )
        worst = max(worst, err)
    return CheckResult(
        "linear composition moments vs Monte-Carlo sampling",
        worst,
        tol,
        n_cases,
        time.perf_counter() - t0,
    )


def check_product_oracle(
    n_cases: int = 100, tol: float = 1e-3, seed: int = 202, grid_points: int = 8001
) -> CheckResult:
    """Product rule vs moments of the grid-normalized weighted product.

    Each 1-D case evaluates sum_k w_k log N(a; m_k, s_k) on a dense grid
    wide enough to cover every component, normalizes by trapezoidal
    quadrature, and compares the grid mean and standard deviation with the
    closed-form precision-weighted fusion, as absolute errors.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_cases):
        k = int(rng.integers(2, 5))
        means = rng.uniform(-2.0, 2.0, size=(k, 1))
        log_stds = rng.uniform(-1.0, 0.5, size=(k, 1))
        w = gs.softmax_k_np(rng.uniform(-1.5, 1.5, size=(k, 1)))

        mean, log_std = gs.compose_product_np(means, log_stds, w)
        std = float(np.exp(log_std[0]))

        sds = np.exp(log_stds[:, 0])
        lo = float(means.min() - 8.0 * sds.max())
        hi = float(means.max() + 8.0 * sds.max())
        a = np.linspace(lo, hi, grid_points)
        h = (hi - lo) / (grid_points - 1)
        z = (a[None, :] - means) / sds[:, None]
        logp = np.sum(
            w * (-0.5 * z * z - np.log(sds)[:, None] - 0.5 * np.log(2.0 * np.pi)), axis=0
        )
        p = np.exp(logp - logp.max())
        norm = _trapezoid(p, h)
        grid_mean = _trapezoid(a * p, h) / norm
        grid_var = _trapezoid((a - grid_mean) ** 2 * p, h) / norm

        err = max(abs(grid_mean - float(mean[0])), abs(np.sqrt(grid_var) - std))
        worst = max(worst, err)
    return CheckResult(
        "product composition moments vs grid quadrature",
        worst,
        tol,
        n_cases,
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# gradient suite


def _tiny_trainer(seed: int, rule: str) -> Trainer:
    cfg = TrainerConfig(
        seed=seed,
        composition_rule=rule,
        hidden_units=8,
        batch_size=6,
        total_steps=10,
        warmup_steps=2,
        eval_interval=5,
        eval_episodes=1,
        replay_capacity=128,
    )
    return Trainer(Navigation2D(), cfg, mode="hiu")


def _random_batch(rng: np.random.Generator, n: int = 6) -> Batch:
    return Batch(
        s=rng.normal(scale=3.0, size=(n, 2)),
        a=np.clip(rng.normal(size=(n, 2)), -1.0, 1.0),
        r=-np.abs(rng.normal(size=(n, 3))),
        s_next=rng.normal(scale=3.0, size=(n, 2)),
        done=np.zeros(n, dtype=bool),
    )


def _rows_alive(net, base: str, x: np.ndarray) -> bool:
    feats = nw._affine_relu_np(net.params, base, x)
    return bool(np.all(feats.max(axis=1) > 0.0))


def _generic_batch(t: Trainer, rng: np.random.Generator, n: int = 6) -> Batch:
    """A random batch at which every checked loss is differentiable.

    Central differences are only meaningful at differentiable points.  An
    input row that lands every trunk unit in the inactive half parks the
    following hidden layer exactly on its relu kink (features identically
    zero against a zero bias), where the analytic subgradient and the
    two-sided difference disagree by construction.  Such rows are
    measure-zero during training but do appear in random probes, so the
    suite redraws until every trunk keeps at least one unit active per row.
    """
    prefix_pairs = ((t.policy, "pi.trunk"), (t.q1, "q1.trunk"), (t.q2, "q2.trunk"))
    while True:
        batch = _random_batch(rng, n)
        sa = np.concatenate([batch.s, batch.a], axis=1)
        inputs = (batch.s, sa, sa)
        if all(_rows_alive(net, base, x) for (net, base), x in zip(prefix_pairs, inputs)):
            return batch


def _generic_states(t: Trainer, rng: np.random.Generator, n: int = 6) -> np.ndarray:
    while True:
        s = rng.normal(scale=3.0, size=(n, t.env.spec.d_s))
        if _rows_alive(t.policy, "pi.trunk", s):
            return s


def _rules(draw: int) -> str:
    return "linear" if draw % 2 == 0 else "product"


def check_gradient_suite(
    n_draws: int = 20,
    tol: float = 1e-4,
    seed: int = 303,
    coords_per_param: int = 4,
    inject_defect: bool = False,
) -> list[CheckResult]:
    """Finite-difference validation of every loss gradient.

    Each family runs ``n_draws`` independently seeded instances (fresh tiny
    networks, fresh batches, fixed noise) and records the worst relative
    error over a random coordinate subset of every parameter.

    ``inject_defect`` deliberately adds an off-graph term to the critic loss
    so its analytic gradient is wrong; the suite must then fail.  This is the
    self-test that proves the harness can detect a broken gradient.
    """
    results = []
    h = 1e-6

    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(n_draws):
        t = _tiny_trainer(1000 + draw, _rules(draw))
        rng = np.random.default_rng(2000 + draw)
        batch = _generic_batch(t, rng)
        targets = t._bellman_targets(batch)

        def f():
            loss = t.critic_loss(batch, targets)
            if inject_defect:
                # change the value without recording the dependency: the
                # numeric gradient sees this term, the analytic one cannot
                loss.data = loss.data + 0.05 * float(np.sum(t.q1.params["q1.trunk.W"].data))
            return loss

        worst = max(worst, ad.finite_diff_check(f, t._q_params, h, coords_per_param, rng))
    name = "critic loss gradient (soft Bellman residual)"
    if inject_defect:
        name += " [defect injected]"
    results.append(CheckResult(name, worst, tol, n_draws, time.perf_counter() - t0))

    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(n_draws):
        t = _tiny_trainer(1100 + draw, _rules(draw))
        rng = np.random.default_rng(2100 + draw)
        batch = _generic_batch(t, rng)
        noises = {
            task.label: rng.standard_normal(batch.a.shape)
            for task in t.tasks
            if task.policy_index < t.k_policies
        }

        def f():
            total, _ = t.component_loss(batch, noises)
            return total

        worst = max(worst, ad.finite_diff_check(f, t._shape_params, h, coords_per_param, rng))
    results.append(
        CheckResult(
            "component improvement loss gradient",
            worst,
            tol,
            n_draws,
            time.perf_counter() - t0,
        )
    )

    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(n_draws):
        t = _tiny_trainer(1200 + draw, _rules(draw))
        rng = np.random.default_rng(2200 + draw)
        batch = _generic_batch(t, rng)
        noise = rng.standard_normal(batch.a.shape)

        def f():
            loss, _ = t.combined_loss(batch, noise)
            return loss

        worst = max(worst, ad.finite_diff_check(f, t._act_params, h, coords_per_param, rng))
    results.append(
        CheckResult(
            "combined improvement loss gradient (both rules)",
            worst,
            tol,
            n_draws,
            time.perf_counter() - t0,
        )
    )

    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(n_draws):
        t = _tiny_trainer(1300 + draw, _rules(draw))
        rng = np.random.default_rng(2300 + draw)
        label = t.tasks[draw % len(t.tasks)].label
        logp = rng.normal(size=32)

        def f():
            return t.temps.loss(label, logp)

        params = {f"log_alpha.{label}": t.temps.log_alphas[label]}
        worst = max(worst, ad.finite_diff_check(f, params, h, None, rng))
    results.append(
        CheckResult(
            "temperature objective gradient",
            worst,
            tol,
            n_draws,
            time.perf_counter() - t0,
        )
    )

    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(n_draws):
        t = _tiny_trainer(1400 + draw, _rules(draw))
        rng = np.random.default_rng(2400 + draw)
        states = _generic_states(t, rng)
        noise = rng.standard_normal((6, 2))
        policy_params = {**t._shape_params, **t._act_params}

        def f():
            heads = nw.policy_forward(t.policy, Tensor(states), t.rule)
            sample = gs.sample_squashed(heads.combined, noise, t.a_max)
            return ad.mean_(sample.log_prob)

        worst = max(worst, ad.finite_diff_check(f, policy_params, h, coords_per_param, rng))
    results.append(
        CheckResult(
            "compound policy log-prob gradient (both rules)",
            worst,
            tol,
            n_draws,
            time.perf_counter() - t0,
        )
    )
    return results


def check_partition(seed: int = 404) -> CheckResult:
    """Bit-exact isolation of the two policy update steps.

    The component step must leave every activation parameter untouched and
    the combined step must leave every shaping parameter untouched, down to
    the last bit.  The reported error is the number of parameters that moved
    on their frozen side.
    """
    t0 = time.perf_counter()
    violations = 0
    for draw, rule in enumerate(("linear", "product")):
        t = _tiny_trainer(500 + draw, rule)
        rng = np.random.default_rng(600 + draw)
        batch = _random_batch(rng)

        act_before = {n: p.data.copy() for n, p in t._act_params.items()}
        t.update_components(batch)
        violations += sum(
            not np.array_equal(act_before[n], p.data) for n, p in t._act_params.items()
        )

        shape_before = {n: p.data.copy() for n, p in t._shape_params.items()}
        t.update_weights(batch)
        violations += sum(
            not np.array_equal(shape_before[n], p.data) for n, p in t._shape_params.items()
        )
    return CheckResult(
        "partitioned update isolation (bit-exact frozen side)",
        float(violations),
        0.5,
        2,
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# suite runner


def run_suite(which: str = "all", inject_defect: bool = False) -> list[CheckResult]:
    if which not in SUITES:
        raise ValueError(f"unknown check suite {which!r}; expected one of {SUITES}")
    results: list[CheckResult] = []
    if which in ("oracle", "all"):
        results.append(check_linear_oracle())
        results.append(check_product_oracle())
    if which in ("grad", "all"):
        results.extend(check_gradient_suite(inject_defect=inject_defect))
        results.append(check_partition())
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"[{status}] {r.operation}: max error {r.max_error:.3e} "
            f"(tolerance {r.tolerance:g}, {r.cases} cases, {r.seconds:.1f}s)"
        )
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} checks passed")
    return "\n".join(lines)


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
