"""Flat key=value experiment configuration.

The format is one `key = value` pair per line, `#` comments, blank lines
ignored. Unknown keys are rejected so typos fail loudly. Every key can be
overridden by an environment variable named BOSELECT_<KEY in upper case>.
Optional numeric keys use the empty string for "auto".
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields

CHOICES = {
    "behavior": ("medium", "random", "mixed"),
    "selector": ("bo", "random", "validation", "ope"),
    "norm": ("l2", "l1"),
    "policy_source": (
        "selected-model",
        "model-based-fixed",
        "model-free-empirical",
        "exploratory-random",
        "parameter-space",
    ),
    "lengthscale_mode": ("median-heuristic", "fixed", "mle-grid"),
    "acquisition": ("gp-ucb", "random"),
    "beta_schedule": ("constant", "log-growth"),
}

ENV_PREFIX = "BOSELECT_"


class ConfigError(ValueError):
    """Malformed configuration file, key, or value."""


@dataclass
class ExperimentConfig:
    # environment (gridworld, unless mdp_path points at a serialized MDP)
    grid_rows: int = 6
    grid_cols: int = 6
    slip_prob: float = 0.1
    goal_reward: float = 1.0
    step_reward: float = 0.0
    gamma: float = 0.95
    mdp_path: str = ""
    # offline data
    behavior: str = "medium"
    epsilon: float = 0.3
    n_transitions: int = 4000
    dataset_horizon: int = 100
    validation_fraction: float = 0.2
    shuffle_split: bool = False
    # candidate models
    n_candidates: int = 50
    smoothing: float = 1.0
    transition_noise: float = 1.0
    reward_noise_scale: float = 0.05
    penalty_weight: float = 1.0
    uncertainty_scale: float | None = None
    # selection protocol
    selector: str = "bo"
    n_iterations: int = 20
    trajectories_per_eval: int = 5
    horizon: int = 200
    noise_free: bool = False
    # model distance
    alpha: float = 1.0
    norm: str = "l2"
    rollout_length: int = 1
    distance_rollouts: int = 500
    policy_source: str = "selected-model"
    n_probe: int = 256
    fixed_candidate: int = 0
    # surrogate
    lengthscale_mode: str = "median-heuristic"
    fixed_lengthscale: float | None = None
    noise_variance: float | None = None
    # acquisition
    acquisition: str = "gp-ucb"
    beta: float = 4.0
    beta_schedule: str = "constant"
    ucb_delta: float = 0.1
    allow_reselect: bool = False
    # protocol
    n_trials: int = 20
    seed: int = 0

    def validate(self) -> None:
        for key, allowed in CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
        positive = (
            "grid_rows", "grid_cols", "n_transitions", "dataset_horizon",
            "n_candidates", "n_iterations", "trajectories_per_eval", "horizon",
            "rollout_length", "distance_rollouts", "n_probe", "n_trials",
            "smoothing", "beta",
        )
        for key in positive:
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        nonnegative = (
            "reward_noise_scale", "penalty_weight", "alpha",
            "transition_noise", "fixed_candidate", "step_reward",
        )
        for key in nonnegative:
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ConfigError("slip_prob must lie in [0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.lengthscale_mode == "fixed" and self.fixed_lengthscale is None:
            raise ConfigError("fixed lengthscale mode needs fixed_lengthscale")
        if self.selector in ("bo", "random") and not self.allow_reselect:
            if self.n_iterations > self.n_candidates:
                raise ConfigError("n_iterations cannot exceed n_candidates without reselection")


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} expects an integer, got {raw!r}") from None
    if ftype == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} expects a number, got {raw!r}") from None
    if ftype == "float | None":
        if raw == "":
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} expects a number or empty for auto, got {raw!r}") from None
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} expects true or false, got {raw!r}")
    return raw


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    config = ExperimentConfig(**values)
    return config


def apply_env_overrides(config: ExperimentConfig, environ=None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    for key in _FIELD_TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            setattr(config, key, _parse_value(key, environ[env_key]))
    return config


def load_config(path: str, environ=None) -> ExperimentConfig:
    """Parse, apply environment overrides, validate."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    config = apply_env_overrides(parse_config_text(text), environ)
    config.validate()
    return config


def resolved_text(config: ExperimentConfig) -> str:
    """Canonical dump with every default materialized; re-parsing it
    reproduces the config exactly.
    """
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}" for f in fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"
