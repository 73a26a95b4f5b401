"""Off-policy training loop for the composable-policy actor-critic.

One experience stream drives every learner: the combined policy acts in the
environment, transitions land in a shared replay memory, and each training
step then updates, in order,

1. both twin critics against soft Bellman targets (one target per task,
   fresh next-state actions from that task's own policy),
2. the shaping parameters (trunk + component heads) on the summed
   per-component soft improvement objective,
3. the activation parameters on the combined-policy objective, with the
   component outputs detached so only the weighting head moves,
4. one temperature per task toward its entropy target,
5. the polyak-averaged target critics.

A single-task baseline reuses the same machinery with one policy head and
one value head, and skips step 3 (with one component, the weights are
identically 1).

Bootstrap targets, behavior actions, and evaluation all run on the plain
numpy forward path; the tape only ever sees the loss computations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gaussians as gs
from . import networks as nw
from .autodiff import Adam, DivergenceError, Tensor
from .replay import Batch, ReplayMemory, Transition

__all__ = [
    "TrainerConfig",
    "TemperatureState",
    "TaskMetrics",
    "EvalEvent",
    "Trainer",
    "evaluate_policy",
]

# offsets mixed into the seed for evaluation streams, so evaluation never
# advances the training generators
_EVAL_STREAM = 0x5EED


@dataclass
class TrainerConfig:
    """Hyperparameters of one training run (defaults: the 2-D navigation setup)."""

    gamma: float = 0.99
    rho: float = 5e-3
    lr_q: float = 3e-4
    lr_pi: float = 3e-4
    lr_alpha: float = 3e-4
    batch_size: int = 64
    total_steps: int = 15_000
    gradient_steps_per_env_step: int = 1
    warmup_steps: int = 1_000
    eval_interval: int = 1_000
    eval_episodes: int = 10
    composition_rule: str = "linear"
    hidden_units: int = 64
    replay_capacity: int = 5_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.composition_rule not in nw.COMPOSITION_RULES:
            raise ValueError(
                f"composition_rule must be one of {nw.COMPOSITION_RULES}, "
                f"got {self.composition_rule!r}"
            )


class TemperatureState:
    """One trainable log-temperature per task, optimized in log space."""

    def __init__(self, labels, entropy_targets, lr: float, log_alpha_init: float = 0.0):
        self.labels = list(labels)
        self.entropy_targets = {l: float(h) for l, h in zip(labels, entropy_targets)}
        self.log_alphas = {
            l: Tensor(np.full(1, log_alpha_init), requires_grad=True, name=f"log_alpha.{l}")
            for l in self.labels
        }
        self.opt = Adam(lr=lr)

    def alpha(self, label: str) -> float:
        return float(np.exp(self.log_alphas[label].data[0]))

    def alphas(self) -> dict[str, float]:
        return {l: self.alpha(l) for l in self.labels}

    def loss(self, label: str, log_probs: np.ndarray) -> Tensor:
        """mean of -alpha * (log pi + target), with log pi held constant."""
        c = float(np.mean(log_probs)) + self.entropy_targets[label]
        return ad.sum_(Tensor(np.full(1, -c)) * ad.exp(self.log_alphas[label]))

    def update(self, log_probs_by_label: dict[str, np.ndarray]) -> None:
        grads: dict[str, np.ndarray] = {}
        for label, lp in log_probs_by_label.items():
            grads.update(ad.backward(self.loss(label, lp)))
        self.opt.step(self.log_alphas_by_name(), grads)

    def log_alphas_by_name(self) -> dict[str, Tensor]:
        return {t.name: t for t in self.log_alphas.values()}


@dataclass(frozen=True)
class TaskMetrics:
    task: str
    avg_return: float
    final_distance: float
    entropy: float
    alpha: float
    q_loss: float
    pi_loss: float


@dataclass(frozen=True)
class EvalEvent:
    step: int
    metrics: tuple[TaskMetrics, ...]


@dataclass(frozen=True)
class _Task:
    """How one trained task maps onto network heads and env rewards."""

    label: str
    policy_index: int  # k for a component, k_policies for the combined policy
    head: int  # Q-network head
    reward_col: int  # column in the env reward vector


def evaluate_policy(env_factory, mean_fn, reward_col, n_episodes, rng, entropy_fn=None):
    """Deterministic rollouts of a mean policy, batched across episodes.

    ``mean_fn`` maps states (n, d_S) to actions (n, d_A).  Returns
    (average undiscounted return of reward component ``reward_col``,
    average final distance for that task, average entropy estimate).
    ``entropy_fn(states, rng)`` may supply per-state -log pi samples.
    """
    envs = [env_factory() for _ in range(n_episodes)]
    states = np.stack([e.reset(rng) for e in envs])
    horizon = envs[0].spec.horizon
    returns = np.zeros(n_episodes)
    entropy_total = 0.0
    for _ in range(horizon):
        actions = mean_fn(states)
        if entropy_fn is not None:
            entropy_total += float(np.mean(entropy_fn(states, rng)))
        for i, e in enumerate(envs):
            res = e.step(actions[i])
            states[i] = res.next_state
            returns[i] += res.rewards[reward_col]
    final_distance = float(np.mean([e.distances()[reward_col] for e in envs]))
    entropy = entropy_total / horizon if entropy_fn is not None else float("nan")
    return float(np.mean(returns)), final_distance, entropy


class Trainer:
    """Runs the full algorithm on one environment.

    mode "hiu" trains K component tasks plus the combined task; mode "sac"
    trains a standard single-task agent (one Gaussian head, twin critics,
    auto-temperature) on the reward column ``sac_task``.
    """

    def __init__(self, env, config: TrainerConfig, mode: str = "hiu", sac_task: int | None = None):
        if mode not in ("hiu", "sac"):
            raise ValueError(f"mode must be 'hiu' or 'sac', got {mode!r}")
        self.env = env
        self.config = config
        self.mode = mode
        spec = env.spec
        self.a_max = spec.a_max
        self.rule = config.composition_rule

        if mode == "hiu":
            self.k_policies = spec.k
            self.tasks = tuple(
                _Task(label=spec.task_labels[j], policy_index=j, head=j, reward_col=j)
                for j in range(spec.k + 1)
            )
        else:
            if sac_task is None:
                sac_task = spec.k  # the combined task by default
            if not 0 <= sac_task <= spec.k:
                raise ValueError(f"sac_task must index a task, got {sac_task}")
            self.k_policies = 1
            self.tasks = (
                _Task(label=spec.task_labels[sac_task], policy_index=0, head=0, reward_col=sac_task),
            )
        self.q_head_order = [t.label for t in self.tasks]

        ss = np.random.SeedSequence(config.seed)
        init_ss, env_ss, act_ss, replay_ss, update_ss = ss.spawn(5)
        self._rng_env = np.random.default_rng(env_ss)
        self._rng_act = np.random.default_rng(act_ss)
        self._rng_replay = np.random.default_rng(replay_ss)
        self._rng_update = np.random.default_rng(update_ss)

        rng_init = np.random.default_rng(init_ss)
        n_heads = len(self.tasks)
        h = config.hidden_units
        self.policy = nw.make_policy_network(spec.d_s, spec.d_a, self.k_policies, h, rng_init)
        self.q1 = nw.make_q_network(spec.d_s, spec.d_a, n_heads, h, rng_init, prefix="q1")
        self.q2 = nw.make_q_network(spec.d_s, spec.d_a, n_heads, h, rng_init, prefix="q2")
        self.q1_target = nw.copy_network(self.q1)
        self.q2_target = nw.copy_network(self.q2)

        targets = [spec.entropy_targets[t.reward_col] for t in self.tasks]
        self.temps = TemperatureState(self.q_head_order, targets, lr=config.lr_alpha)

        self._q_params = {**self.q1.params, **self.q2.params}
        self._shape_params = {n: self.policy.params[n] for n in self.policy.shaping_param_names()}
        self._act_params = {n: self.policy.params[n] for n in self.policy.activation_param_names()}
        self.opt_q = Adam(lr=config.lr_q)
        self.opt_shape = Adam(lr=config.lr_pi)
        self.opt_act = Adam(lr=config.lr_pi)

        self.replay = ReplayMemory(config.replay_capacity)
        self.step = 0
        self.last_q_loss = {t.label: float("nan") for t in self.tasks}
        self.last_pi_loss = {t.label: float("nan") for t in self.tasks}
        self._state: np.ndarray | None = None
        self._episode_done = True

    # ------------------------------------------------------------------
    # acting

    def _acting_moments(self, states: np.ndarray):
        """Mean/log-std of the behavior policy (always the combined one)."""
        return nw.combine_policy_np(self.policy, states, self.rule)

    def behavior_action(self, state: np.ndarray) -> np.ndarray:
        mean, log_std = self._acting_moments(state[None])
        noise = self._rng_act.standard_normal((1, self.env.spec.d_a))
        action, _, _ = gs.sample_squashed_np(mean, log_std, noise, self.a_max)
        return action[0]

    def _task_moments_np(self, states: np.ndarray, policy_index: int):
        means, log_stds, w = nw.policy_forward_np(self.policy, states)
        if policy_index < self.k_policies:
            return means[policy_index], np.clip(
                log_stds[policy_index], gs.LOG_STD_MIN, gs.LOG_STD_MAX
            )
        if self.rule == "linear":
            return gs.compose_linear_np(means, log_stds, w)
        return gs.compose_product_np(means, log_stds, w)

    # ------------------------------------------------------------------
    # losses and updates

    def _bellman_targets(self, batch: Batch) -> dict[str, np.ndarray]:
        """One bootstrap target vector per task, computed off the tape."""
        s2 = batch.s_next
        cfg = self.config
        targets: dict[str, np.ndarray] = {}
        for task in self.tasks:
            mean, log_std = self._task_moments_np(s2, task.policy_index)
            noise = self._rng_update.standard_normal((s2.shape[0], self.env.spec.d_a))
            a2, _, logp2 = gs.sample_squashed_np(mean, log_std, noise, self.a_max)
            q1t = nw.q_forward_head_np(self.q1_target, s2, a2, task.head)
            q2t = nw.q_forward_head_np(self.q2_target, s2, a2, task.head)
            v = np.minimum(q1t, q2t) - self.temps.alpha(task.label) * logp2
            # episodes end by time limit only, so the target always bootstraps
            y = batch.r[:, task.reward_col] + cfg.gamma * v
            if not np.all(np.isfinite(y)):
                raise DivergenceError(
                    f"non-finite Bellman target for task {task.label} at step {self.step}"
                )
            targets[task.label] = y
        return targets

    def critic_loss(self, batch: Batch, targets: dict[str, np.ndarray]) -> Tensor:
        """Half mean squared Bellman error, summed over tasks and both critics."""
        s, a = Tensor(batch.s), Tensor(batch.a)
        outs1 = nw.q_forward(self.q1, s, a)
        outs2 = nw.q_forward(self.q2, s, a)
        total = None
        for task in self.tasks:
            y = Tensor(targets[task.label][:, None])
            d1 = outs1[task.head] - y
            d2 = outs2[task.head] - y
            per_task = Tensor(0.5) * ad.mean_(d1 * d1 + d2 * d2)
            self.last_q_loss[task.label] = float(per_task.data)
            total = per_task if total is None else total + per_task
        return total

    def update_critics(self, batch: Batch) -> None:
        loss = self.critic_loss(batch, self._bellman_targets(batch))
        self.opt_q.step(self._q_params, ad.backward(loss))

    def _draw_action_noise(self, n: int) -> np.ndarray:
        return self._rng_update.standard_normal((n, self.env.spec.d_a))

    def _soft_improvement_term(
        self, s: Tensor, g: gs.DiagGaussian, head: int, alpha: float, noise: np.ndarray
    ):
        """min_i Q_i(s, a~) - alpha*log pi(a~|s) with a~ reparameterized from g."""
        sample = gs.sample_squashed(g, noise, self.a_max)
        qmin = ad.minimum(
            nw.q_forward_head(self.q1, s, sample.action, head),
            nw.q_forward_head(self.q2, s, sample.action, head),
        )
        term = ad.sum_(qmin, axis=-1) - Tensor(alpha) * sample.log_prob
        return -ad.mean_(term), sample.log_prob.data

    def component_loss(self, batch: Batch, noises: dict[str, np.ndarray]):
        """Summed improvement objective over the component policies.

        Touches shaping parameters (and, as pass-throughs, the critics) but
        never the activation head.  ``noises`` maps task label to the fixed
        standard-normal draw for that task's reparameterized actions.
        """
        s = Tensor(batch.s)
        comps = nw.components_forward(self.policy, s)
        total = None
        log_probs: dict[str, np.ndarray] = {}
        for task in self.tasks:
            if task.policy_index >= self.k_policies:
                continue
            loss, lp = self._soft_improvement_term(
                s,
                comps[task.policy_index],
                task.head,
                self.temps.alpha(task.label),
                noises[task.label],
            )
            self.last_pi_loss[task.label] = float(loss.data)
            log_probs[task.label] = lp
            total = loss if total is None else total + loss
        return total, log_probs

    def combined_loss(self, batch: Batch, noise: np.ndarray):
        """Improvement objective for the combined policy, components detached."""
        task = self.tasks[-1]
        s = Tensor(batch.s)
        heads = nw.policy_forward(self.policy, s, self.rule, detach_components=True)
        loss, lp = self._soft_improvement_term(
            s, heads.combined, task.head, self.temps.alpha(task.label), noise
        )
        self.last_pi_loss[task.label] = float(loss.data)
        return loss, {task.label: lp}

    def update_components(self, batch: Batch) -> dict[str, np.ndarray]:
        """Improvement step for every component policy; moves shaping params only."""
        noises = {
            task.label: self._draw_action_noise(len(batch))
            for task in self.tasks
            if task.policy_index < self.k_policies
        }
        total, log_probs = self.component_loss(batch, noises)
        self.opt_shape.step(self._shape_params, ad.backward(total))
        return log_probs

    def update_weights(self, batch: Batch) -> dict[str, np.ndarray]:
        """Improvement step for the combined policy; moves activation params only."""
        loss, log_probs = self.combined_loss(batch, self._draw_action_noise(len(batch)))
        self.opt_act.step(self._act_params, ad.backward(loss))
        return log_probs

    def update_temperatures(self, log_probs: dict[str, np.ndarray]) -> None:
        self.temps.update(log_probs)

    def update_targets(self) -> None:
        nw.polyak_update(self.q1_target, self.q1, self.config.rho)
        nw.polyak_update(self.q2_target, self.q2, self.config.rho)

    def gradient_step(self, batch: Batch) -> None:
        self.update_critics(batch)
        log_probs = self.update_components(batch)
        if self.mode == "hiu":
            log_probs.update(self.update_weights(batch))
        self.update_temperatures(log_probs)
        self.update_targets()

    # ------------------------------------------------------------------
    # the outer loop

    def train_step(self) -> None:
        """One environment interaction plus (after warmup) one gradient pass."""
        if self._episode_done:
            self._state = self.env.reset(self._rng_env)
            self._episode_done = False
        action = self.behavior_action(self._state)
        res = self.env.step(action)
        self.replay.push(
            Transition(s=self._state, a=action, r=res.rewards, s_next=res.next_state, done=res.done)
        )
        self._state = res.next_state
        self._episode_done = res.done
        self.step += 1
        if self.step <= self.config.warmup_steps:
            return
        for _ in range(self.config.gradient_steps_per_env_step):
            batch = self.replay.sample_minibatch(self.config.batch_size, self._rng_replay)
            if batch is None:
                break
            self.gradient_step(batch)

    def evaluate(self, step: int | None = None) -> EvalEvent:
        """Deterministic-mean rollouts for every trained task."""
        if step is None:
            step = self.step
        metrics = []
        env_factory = type(self.env)
        for task in self.tasks:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.config.seed, step, task.head, _EVAL_STREAM])
            )

            def mean_fn(states, _p=task.policy_index):
                mean, _ = self._task_moments_np(states, _p)
                return self.a_max * np.tanh(mean)

            def entropy_fn(states, rng, _p=task.policy_index):
                mean, log_std = self._task_moments_np(states, _p)
                noise = rng.standard_normal(mean.shape)
                _, _, logp = gs.sample_squashed_np(mean, log_std, noise, self.a_max)
                return -logp

            avg_return, final_distance, entropy = evaluate_policy(
                env_factory,
                mean_fn,
                task.reward_col,
                self.config.eval_episodes,
                rng,
                entropy_fn=entropy_fn,
            )
            metrics.append(
                TaskMetrics(
                    task=task.label,
                    avg_return=avg_return,
                    final_distance=final_distance,
                    entropy=entropy,
                    alpha=self.temps.alpha(task.label),
                    q_loss=self.last_q_loss[task.label],
                    pi_loss=self.last_pi_loss[task.label],
                )
            )
        return EvalEvent(step=step, metrics=tuple(metrics))

    def run(self, on_eval=None):
        """Train to total_steps, evaluating every eval_interval steps.

        ``on_eval`` receives each EvalEvent as it is produced; the full list
        is also returned.
        """
        events = []
        cfg = self.config
        while self.step < cfg.total_steps:
            self.train_step()
            if self.step % cfg.eval_interval == 0 or self.step == cfg.total_steps:
                event = self.evaluate()
                events.append(event)
                if on_eval is not None:
                    on_eval(event)
        return events

    # ------------------------------------------------------------------
    # persistence and diagnostics

    def save_checkpoint(self, path) -> None:
        nw.save_checkpoint(
            path,
            policy=self.policy,
            q1=self.q1,
            q2=self.q2,
            q1_target=self.q1_target,
            q2_target=self.q2_target,
            log_alphas=[float(self.temps.log_alphas[l].data[0]) for l in self.q_head_order],
            step=self.step,
            rule=self.rule,
            a_max=self.a_max,
            q_head_order=self.q_head_order,
        )

    def load_weights(self, ckpt: nw.Checkpoint) -> None:
        """Adopt parameters and temperatures from a loaded checkpoint."""
        for mine, theirs in (
            (self.policy, ckpt.policy),
            (self.q1, ckpt.q1),
            (self.q2, ckpt.q2),
            (self.q1_target, ckpt.q1_target),
            (self.q2_target, ckpt.q2_target),
        ):
            for name, p in mine.params.items():
                p.data = theirs.params[name].data.copy()
        for label, la in zip(ckpt.q_head_order, ckpt.log_alphas):
            self.temps.log_alphas[label].data = np.full(1, la)
        self.step = ckpt.step

    def diagnostics(self) -> dict:
        return {
            "step": self.step,
            "mode": self.mode,
            "rule": self.rule,
            "replay_size": len(self.replay),
            "alphas": self.temps.alphas(),
            "q_loss": dict(self.last_q_loss),
            "pi_loss": dict(self.last_pi_loss),
            "clipped_actions": self.env.clipped_actions,
        }
