"""Command-line interface: train, eval, check, qgrid, sweep.

``train`` runs one (algorithm, seed) training process and fills an output
directory with the canonical config snapshot, ``train_log.csv``, checkpoints,
and a final metrics document.  ``sweep`` repeats that serially over the
configured seeds in per-seed subdirectories.  ``eval`` replays a checkpoint's
deterministic-mean policies, printing a structured metrics document.
``check`` runs the verification suites.  ``qgrid`` exports per-task value
surfaces over an action grid for 2-D action spaces.

Exit codes: 0 success, 1 runtime failure (divergence, failed checks),
2 invalid input (config, checkpoint, arguments).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import networks as nw
from . import verify
from .autodiff import DivergenceError
from .config import ConfigError, RunConfig, build_trainer, load_config
from .envs import ENV_NAMES, make_env
from .networks import CheckpointError, full_task_labels
from .trainer import Trainer, TrainerConfig

LOG_HEADER = "step,algo,seed,task,avg_return,final_distance,entropy,alpha,q_loss,pi_loss"

DEFAULT_QGRID_STATES = "4,4;-4,4;4,-4;-4,-4;0,0"


def _fmt(x: float) -> str:
    return repr(float(x))


def _jsonable(value):
    """json-friendly copy: non-finite floats become null."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# train / sweep


def _log_rows(event, algo: str, seed: int) -> list[str]:
    rows = []
    for m in event.metrics:
        rows.append(
            f"{event.step},{algo},{seed},{m.task},{_fmt(m.avg_return)},"
            f"{_fmt(m.final_distance)},{_fmt(m.entropy)},{_fmt(m.alpha)},"
            f"{_fmt(m.q_loss)},{_fmt(m.pi_loss)}"
        )
    return rows


def _metrics_payload(event, config: RunConfig) -> dict:
    return {
        "env": config.env,
        "algo": config.algo,
        "seed": config.seed,
        "step": event.step,
        "tasks": [
            {
                "task": m.task,
                "avg_return": m.avg_return,
                "final_distance": m.final_distance,
                "entropy": m.entropy,
                "alpha": m.alpha,
                "q_loss": m.q_loss,
                "pi_loss": m.pi_loss,
            }
            for m in event.metrics
        ],
    }


def _run_training(config: RunConfig) -> int:
    out = Path(config.out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_bytes(config.render().encode("utf-8"))

    trainer = build_trainer(config)
    events = []
    with open(out / "train_log.csv", "w", encoding="utf-8", newline="\n") as log:
        log.write(LOG_HEADER + "\n")

        def on_eval(event):
            events.append(event)
            for row in _log_rows(event, config.algo, config.seed):
                log.write(row + "\n")
            log.flush()
            trainer.save_checkpoint(ckpt_dir / "latest.json")
            dists = " ".join(f"{m.task}:{m.final_distance:.2f}" for m in event.metrics)
            print(
                f"[{config.algo} seed {config.seed}] step {event.step} final distance {dists}",
                file=sys.stderr,
                flush=True,
            )

        try:
            trainer.run(on_eval=on_eval)
        except DivergenceError as e:
            dump = {"error": str(e), "diagnostics": trainer.diagnostics()}
            _write_json(out / "divergence.json", dump)
            print(f"error: training diverged: {e}", file=sys.stderr)
            print(f"diagnostic dump written to {out / 'divergence.json'}", file=sys.stderr)
            return 1

    trainer.save_checkpoint(ckpt_dir / "final.json")
    _write_json(out / "final_metrics.json", _metrics_payload(events[-1], config))
    return 0


def cmd_train(args, overrides: dict[str, str]) -> int:
    config = load_config(args.config, overrides)
    return _run_training(config)


def cmd_sweep(args, overrides: dict[str, str]) -> int:
    base = load_config(args.config, overrides)
    for seed in base.seeds:
        per_seed = dict(overrides)
        per_seed["seed"] = str(seed)
        per_seed["out_dir"] = str(Path(base.out_dir) / f"seed{seed}")
        code = _run_training(load_config(args.config, per_seed))
        if code != 0:
            return code
    return 0


# ---------------------------------------------------------------------------
# eval / qgrid


def _check_compatible(ckpt: nw.Checkpoint, env, env_name: str) -> None:
    spec = env.spec
    problems = []
    if ckpt.policy.d_s != spec.d_s:
        problems.append(f"state dim {ckpt.policy.d_s} vs {spec.d_s}")
    if ckpt.policy.d_a != spec.d_a:
        problems.append(f"action dim {ckpt.policy.d_a} vs {spec.d_a}")
    if ckpt.policy.d_a == spec.d_a and not np.array_equal(ckpt.a_max, spec.a_max):
        problems.append(f"action bounds {ckpt.a_max.tolist()} vs {spec.a_max.tolist()}")
    if len(ckpt.q_head_order) > 1 and ckpt.policy.k != spec.k:
        problems.append(f"{ckpt.policy.k} component policies vs {spec.k} tasks")
    if len(ckpt.q_head_order) == 1 and ckpt.q_head_order[0] not in full_task_labels(spec.k):
        problems.append(f"task {ckpt.q_head_order[0]!r} not defined by this environment")
    if problems:
        raise CheckpointError(
            f"checkpoint does not fit environment '{env_name}': " + "; ".join(problems)
        )


def _trainer_from_checkpoint(env, ckpt: nw.Checkpoint, seed: int, episodes: int) -> Trainer:
    cfg = TrainerConfig(
        seed=seed,
        composition_rule=ckpt.rule,
        hidden_units=ckpt.policy.hidden,
        eval_episodes=episodes,
    )
    if len(ckpt.q_head_order) == 1:
        sac_task = full_task_labels(env.spec.k).index(ckpt.q_head_order[0])
        trainer = Trainer(env, cfg, mode="sac", sac_task=sac_task)
    else:
        trainer = Trainer(env, cfg, mode="hiu")
    trainer.load_weights(ckpt)
    return trainer


def cmd_eval(args) -> int:
    ckpt = nw.load_checkpoint(args.checkpoint)
    env = make_env(args.env)
    _check_compatible(ckpt, env, args.env)
    trainer = _trainer_from_checkpoint(env, ckpt, args.seed, args.episodes)
    event = trainer.evaluate(step=ckpt.step)

    payload = {
        "checkpoint": str(args.checkpoint),
        "env": args.env,
        "rule": ckpt.rule,
        "step": ckpt.step,
        "seed": args.seed,
        "episodes": args.episodes,
        "tasks": [
            {
                "task": m.task,
                "avg_return": m.avg_return,
                "final_distance": m.final_distance,
                "entropy": m.entropy,
                "alpha": m.alpha,
            }
            for m in event.metrics
        ],
    }
    document = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    for m in event.metrics:
        print(
            f"task {m.task}: avg_return {m.avg_return:.3f}  "
            f"final_distance {m.final_distance:.3f}  entropy {m.entropy:.3f}",
            file=sys.stderr,
        )
    print(document)
    if args.out is not None:
        Path(args.out).write_text(document + "\n")
    return 0


def _parse_states(text: str) -> list[tuple[float, float]]:
    states = []
    try:
        for part in text.split(";"):
            x, y = part.split(",")
            states.append((float(x), float(y)))
    except ValueError:
        raise ConfigError(
            f"invalid --states {text!r}; expected 'x,y;x,y;...'"
        ) from None
    if not states:
        raise ConfigError("--states must list at least one state")
    return states


def cmd_qgrid(args) -> int:
    ckpt = nw.load_checkpoint(args.checkpoint)
    env = make_env(args.env)
    if env.spec.d_a != 2:
        raise ConfigError(
            f"action-grid export requires a 2-D action space; "
            f"'{args.env}' has {env.spec.d_a} action dimensions"
        )
    _check_compatible(ckpt, env, args.env)
    trainer = _trainer_from_checkpoint(env, ckpt, seed=0, episodes=1)
    states = _parse_states(args.states)
    n = args.grid_points
    if n < 2:
        raise ConfigError(f"--grid-points must be at least 2, got {n}")

    a_max = env.spec.a_max
    ax = np.linspace(-a_max[0], a_max[0], n)
    ay = np.linspace(-a_max[1], a_max[1], n)
    gx, gy = np.meshgrid(ax, ay, indexing="ij")
    actions = np.column_stack([gx.ravel(), gy.ravel()])

    lines = ["task_id,state_x,state_y,action_x,action_y,q_value,mean"]
    for task in trainer.tasks:
        for sx, sy in states:
            s_batch = np.tile([sx, sy], (len(actions), 1))
            q = np.minimum(
                nw.q_forward_head_np(trainer.q1, s_batch, actions, task.head),
                nw.q_forward_head_np(trainer.q2, s_batch, actions, task.head),
            )
            if not np.all(np.isfinite(q)):
                print(
                    f"error: non-finite value in the grid for task {task.label} "
                    f"at state ({sx}, {sy})",
                    file=sys.stderr,
                )
                return 1
            for (a_x, a_y), q_val in zip(actions, q):
                lines.append(
                    f"{task.label},{_fmt(sx)},{_fmt(sy)},{_fmt(a_x)},{_fmt(a_y)},{_fmt(q_val)},0"
                )
            mean, _ = trainer._task_moments_np(np.array([[sx, sy]]), task.policy_index)
            mean_action = a_max * np.tanh(mean[0])
            q_mean = float(
                np.minimum(
                    nw.q_forward_head_np(trainer.q1, np.array([[sx, sy]]), mean_action[None], task.head),
                    nw.q_forward_head_np(trainer.q2, np.array([[sx, sy]]), mean_action[None], task.head),
                )[0]
            )
            lines.append(
                f"{task.label},{_fmt(sx)},{_fmt(sy)},{_fmt(mean_action[0])},"
                f"{_fmt(mean_action[1])},{_fmt(q_mean)},1"
            )
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} rows to {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    results = verify.run_suite(args.suite, inject_defect=args.self_test_defect)
    print(verify.format_report(results))
    return 0 if verify.all_passed(results) else 1


# ---------------------------------------------------------------------------
# argument plumbing


def _parse_overrides(extra: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or token == "--":
            raise ConfigError(
                f"unexpected argument {token!r}; overrides take the form --key value"
            )
        key = token[2:]
        if "=" in key:
            key, _, value = key.partition("=")
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override --{key} is missing a value")
            value = extra[i + 1]
            i += 2
        overrides[key.replace("-", "_")] = value
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="policymix",
        description="Train, evaluate, and verify composed-Gaussian-policy agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser(
        "train", help="run one training process (extra --key value flags override the config)"
    )
    p_train.add_argument("--config", required=True, help="flat key = value config file")

    p_sweep = sub.add_parser(
        "sweep", help="run training serially for every configured seed"
    )
    p_sweep.add_argument("--config", required=True, help="flat key = value config file")

    p_eval = sub.add_parser("eval", help="roll out a checkpoint's mean policies")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--env", choices=ENV_NAMES, default="nav2d")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None, help="also write the metrics document here")

    p_check = sub.add_parser("check", help="run the verification suites")
    p_check.add_argument("suite", choices=verify.SUITES)
    p_check.add_argument(
        "--self-test-defect", action="store_true", help=argparse.SUPPRESS
    )

    p_qgrid = sub.add_parser("qgrid", help="export per-task value surfaces on an action grid")
    p_qgrid.add_argument("--checkpoint", required=True)
    p_qgrid.add_argument("--env", choices=ENV_NAMES, default="nav2d")
    p_qgrid.add_argument("--out", default="qgrid.csv")
    p_qgrid.add_argument("--grid-points", type=int, default=21)
    p_qgrid.add_argument(
        "--states", default=DEFAULT_QGRID_STATES, help="semicolon-separated x,y states"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command in ("train", "sweep"):
            overrides = _parse_overrides(extra)
            if args.command == "train":
                return cmd_train(args, overrides)
            return cmd_sweep(args, overrides)
        if extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "check":
            return cmd_check(args)
        return cmd_qgrid(args)
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
