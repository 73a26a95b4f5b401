"""Flat ``key = value`` run configuration.

A run is fully described by a small text file (UTF-8, one ``key = value``
per line, ``#`` comments allowed).  Unknown keys are rejected with the line
number, the two required keys (``env``, ``algo``) must be present, and every
other key defaults to the reference 2-D navigation setup.  Command-line
``--key value`` pairs override file values.

The resolved configuration renders back to a canonical snapshot: fixed key
order, one line per key.  Rendering is a fixed point of parsing, so the
snapshot written next to a run's artifacts is byte-identical however the
values were supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .envs import ENV_NAMES, make_env
from .networks import full_task_labels
from .trainer import Trainer, TrainerConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "ALGO_RULES",
    "REQUIRED_KEYS",
    "parse_config_text",
    "resolve",
    "load_config",
    "build_trainer",
]


class ConfigError(ValueError):
    """Invalid, unknown, or missing configuration input."""


# algorithm name -> composition rule of the combined policy; the single-task
# baseline has one component, for which both rules are the identity
ALGO_RULES = {"hiusac-1": "linear", "hiusac-2": "product", "sac": "linear"}

REQUIRED_KEYS = ("env", "algo")

TASK_LABELS = ("1", "2", "M")

_INT_KEYS = (
    "seed",
    "batch_size",
    "total_steps",
    "gradient_steps_per_env_step",
    "warmup_steps",
    "eval_interval",
    "eval_episodes",
    "hidden_units",
    "replay_capacity",
)
_FLOAT_KEYS = ("gamma", "rho", "lr_q", "lr_pi", "lr_alpha")
_STR_KEYS = ("env", "algo", "task", "out_dir")
_SEEDS_KEY = "seeds"

_POSITIVE_KEYS = (
    "batch_size",
    "total_steps",
    "gradient_steps_per_env_step",
    "eval_interval",
    "eval_episodes",
    "hidden_units",
    "replay_capacity",
)
_NON_NEGATIVE_KEYS = ("seed", "warmup_steps")


@dataclass(frozen=True)
class RunConfig:
    """Every setting of one run, in canonical key order."""

    env: str
    algo: str
    task: str = "M"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
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
    hidden_units: int = 64
    replay_capacity: int = 5_000_000

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; expected one of {ENV_NAMES}")
        if self.algo not in ALGO_RULES:
            raise ConfigError(
                f"unknown algo {self.algo!r}; expected one of {tuple(ALGO_RULES)}"
            )
        if self.task not in TASK_LABELS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASK_LABELS}")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        for key in _POSITIVE_KEYS:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1, got {getattr(self, key)}")
        for key in _NON_NEGATIVE_KEYS:
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must not be negative, got {getattr(self, key)}")
        for s in self.seeds:
            if s < 0:
                raise ConfigError(f"seeds must not be negative, got {s}")
        try:
            self.trainer_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def composition_rule(self) -> str:
        return ALGO_RULES[self.algo]

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            gamma=self.gamma,
            rho=self.rho,
            lr_q=self.lr_q,
            lr_pi=self.lr_pi,
            lr_alpha=self.lr_alpha,
            batch_size=self.batch_size,
            total_steps=self.total_steps,
            gradient_steps_per_env_step=self.gradient_steps_per_env_step,
            warmup_steps=self.warmup_steps,
            eval_interval=self.eval_interval,
            eval_episodes=self.eval_episodes,
            composition_rule=self.composition_rule,
            hidden_units=self.hidden_units,
            replay_capacity=self.replay_capacity,
            seed=self.seed,
        )

    def render(self) -> str:
        """Canonical snapshot text; parsing it resolves back to this config."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == _SEEDS_KEY:
                text = ",".join(str(s) for s in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


_KNOWN_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    """Raw key/value strings from config text, with line-level errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key before '='")
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key '{key}'")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate config key '{key}'")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for '{key}'")
        raw[key] = value
    return raw


def _convert(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == _SEEDS_KEY:
            tokens = [tok.strip() for tok in value.split(",")]
            if not all(tokens):
                raise ValueError("empty entry")
            return tuple(int(tok) for tok in tokens)
        return value
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': {value!r}") from None


def resolve(raw: dict[str, str], overrides: dict[str, str] | None = None) -> RunConfig:
    """Typed, validated configuration from raw strings plus overrides."""
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        merged[key] = str(value)
    for key in REQUIRED_KEYS:
        if key not in merged:
            raise ConfigError(f"missing required config key: {key}")
    return RunConfig(**{key: _convert(key, value) for key, value in merged.items()})


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return resolve(parse_config_text(text, source=str(path)), overrides)


def build_trainer(config: RunConfig) -> Trainer:
    """Environment plus trainer exactly as the configuration describes."""
    env = make_env(config.env)
    tc = config.trainer_config()
    if config.algo == "sac":
        labels = full_task_labels(env.spec.k)
        return Trainer(env, tc, mode="sac", sac_task=labels.index(config.task))
    return Trainer(env, tc, mode="hiu")
