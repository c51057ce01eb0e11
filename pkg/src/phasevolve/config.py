"""Run configuration: a flat `key = value` file with dotted section prefixes.

Example::

    task = synthetic
    iterations = 200
    mode = phase
    shaping.c = 5
    estimator.eps_skip = 1e-6

Unknown keys and malformed values raise ``ConfigError`` naming the key, which
the CLI maps to exit code 2.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


MODES = ("phase", "grpo", "entropic", "maxk")
DIRECTIONS = ("maximize", "minimize")
TASKS = ("synthetic", "eplb")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "synthetic"
    seed: int = 0
    iterations: int = 1000
    samples_per_group: int = 8
    top_k: int = 4
    mode: str = "phase"
    learning_rate: float = 1e-6
    weight_decay: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    eps_lo: float = 0.2
    eps_hi: float = 0.28
    eps_num: float = 1e-8
    eps_skip: float = 1e-6
    gamma: float = 0.3
    beta_max: float = 50.0
    beta_tol: float = 1e-6
    direction: str = "maximize"
    y_min: float = 0.0
    y_max: float = 1.0
    shaping_multiplier: float = 5.0
    shaping_exponent: float = 1.0
    archive_capacity: int = 16
    select_temperature: float = 0.5
    per_candidate_parents: bool = False
    context_dim: int = 8
    hidden_dim: int = 32
    vocab_size: int = 24
    seq_length: int = 8
    synthetic_base: float = 0.5
    synthetic_delta0: float = 0.25
    synthetic_decay: float = 250.0
    synthetic_noise: float = 0.0
    synthetic_target_token: int = 0
    synthetic_tie_weight: float = 0.05
    eplb_num_experts: int = 32
    eplb_num_devices: int = 4
    eplb_num_profiles: int = 8
    eplb_profile_seed: int = 7
    eplb_profiles_path: str = ""
    eplb_wall_clock: bool = False

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task: unknown task {self.task!r} (expected one of {TASKS})")
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown mode {self.mode!r} (expected one of {MODES})")
        if self.direction not in DIRECTIONS:
            raise ConfigError(
                f"shaping.direction: {self.direction!r} (expected one of {DIRECTIONS})"
            )
        if self.iterations < 0:
            raise ConfigError(f"iterations: must be >= 0, got {self.iterations}")
        positive = {
            "samples_per_group": self.samples_per_group,
            "top_k": self.top_k,
            "learning_rate": self.learning_rate,
            "clip.eps_lo": self.eps_lo,
            "clip.eps_hi": self.eps_hi,
            "estimator.eps_num": self.eps_num,
            "estimator.eps_skip": self.eps_skip,
            "estimator.beta_max": self.beta_max,
            "estimator.beta_tol": self.beta_tol,
            "shaping.c": self.shaping_multiplier,
            "shaping.alpha_r": self.shaping_exponent,
            "archive.capacity": self.archive_capacity,
            "archive.select_temperature": self.select_temperature,
            "policy.context_dim": self.context_dim,
            "policy.hidden_dim": self.hidden_dim,
            "policy.vocab_size": self.vocab_size,
            "policy.seq_length": self.seq_length,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{key}: must be positive, got {value}")
        if self.samples_per_group < 2:
            raise ConfigError(f"samples_per_group: need >= 2, got {self.samples_per_group}")
        if not 2 <= self.top_k <= self.samples_per_group:
            raise ConfigError(
                f"top_k: {self.top_k} outside [2, samples_per_group={self.samples_per_group}]"
            )
        if self.eps_skip < self.eps_num:
            raise ConfigError(
                f"estimator.eps_skip: {self.eps_skip} must be >= estimator.eps_num ({self.eps_num})"
            )
        if self.gamma < 0:
            raise ConfigError(f"estimator.gamma: must be >= 0, got {self.gamma}")
        if not self.y_min < self.y_max:
            raise ConfigError(
                f"shaping.y_min: {self.y_min} must be < shaping.y_max ({self.y_max})"
            )
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay: must be >= 0, got {self.weight_decay}")
        for key, beta in (("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)):
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"{key}: must be in [0, 1), got {beta}")


# dotted config key -> dataclass field
KEY_MAP = {
    "task": "task",
    "seed": "seed",
    "iterations": "iterations",
    "samples_per_group": "samples_per_group",
    "top_k": "top_k",
    "mode": "mode",
    "learning_rate": "learning_rate",
    "weight_decay": "weight_decay",
    "adam_beta1": "adam_beta1",
    "adam_beta2": "adam_beta2",
    "clip.eps_lo": "eps_lo",
    "clip.eps_hi": "eps_hi",
    "estimator.eps_num": "eps_num",
    "estimator.eps_skip": "eps_skip",
    "estimator.gamma": "gamma",
    "estimator.beta_max": "beta_max",
    "estimator.beta_tol": "beta_tol",
    "shaping.direction": "direction",
    "shaping.y_min": "y_min",
    "shaping.y_max": "y_max",
    "shaping.c": "shaping_multiplier",
    "shaping.alpha_r": "shaping_exponent",
    "archive.capacity": "archive_capacity",
    "archive.select_temperature": "select_temperature",
    "archive.per_candidate_parents": "per_candidate_parents",
    "policy.context_dim": "context_dim",
    "policy.hidden_dim": "hidden_dim",
    "policy.vocab_size": "vocab_size",
    "policy.seq_length": "seq_length",
    "synthetic.base": "synthetic_base",
    "synthetic.delta0": "synthetic_delta0",
    "synthetic.decay_horizon": "synthetic_decay",
    "synthetic.noise": "synthetic_noise",
    "synthetic.target_token": "synthetic_target_token",
    "synthetic.tie_weight": "synthetic_tie_weight",
    "eplb.num_experts": "eplb_num_experts",
    "eplb.num_devices": "eplb_num_devices",
    "eplb.num_profiles": "eplb_num_profiles",
    "eplb.profile_seed": "eplb_profile_seed",
    "eplb.profiles_path": "eplb_profiles_path",
    "eplb.wall_clock_speed": "eplb_wall_clock",
}

_FIELD_TYPES = {
    f.name: f.type if isinstance(f.type, str) else f.type.__name__
    for f in fields(RunConfig)
}
_ATTR_TO_KEY = {attr: key for key, attr in KEY_MAP.items()}


def _parse_value(key: str, attr: str, raw: str):
    kind = _FIELD_TYPES[attr]
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc


def parse_config_text(text: str) -> RunConfig:
    config = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in KEY_MAP:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        attr = KEY_MAP[key]
        setattr(config, attr, _parse_value(key, attr, raw))
    config.validate()
    return config


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def config_to_dict(config: RunConfig) -> dict:
    """Fully resolved config as dotted keys, for the trace header echo."""
    return {_ATTR_TO_KEY[f.name]: getattr(config, f.name) for f in fields(RunConfig)}
