"""Progress-normalized reward shaping.

Maps heterogeneous task metrics (maximized or minimized, any scale) onto a
shared reward scale: a clamped progress fraction in [0, 1] raised to a
shaping exponent and scaled by a multiplier, with every evaluation failure
collapsed to -1.0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Direction(enum.Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class OutcomeStatus(enum.Enum):
    PARSED = "parsed"
    PARSE_FAILURE = "parse_failure"
    EVALUATOR_ERROR = "evaluator_error"
    TIMEOUT = "timeout"


FAILURE_REWARD = -1.0


class DegenerateBoundsError(ValueError):
    """Normalization bounds collapse to a single point."""


@dataclass(frozen=True)
class ShapingConfig:
    direction: Direction = Direction.MAXIMIZE
    y_min: float = 0.0
    y_max: float = 1.0
    multiplier: float = 5.0
    exponent: float = 1.0

    def __post_init__(self) -> None:
        if not self.y_min < self.y_max:
            raise ValueError(f"y_min ({self.y_min}) must be < y_max ({self.y_max})")
        if not self.multiplier > 0:
            raise ValueError(f"multiplier must be positive, got {self.multiplier}")
        if not self.exponent > 0:
            raise ValueError(f"exponent must be positive, got {self.exponent}")


@dataclass(frozen=True)
class EvaluationOutcome:
    """One candidate's evaluation result, before shaping."""

    status: OutcomeStatus
    value: float | None = None
    wall_time: float = 0.0
    metrics: dict[str, float] = field(default_factory=dict)

    @classmethod
    def parsed(
        cls, value: float, wall_time: float = 0.0, metrics: dict[str, float] | None = None
    ) -> "EvaluationOutcome":
        # A parsed but non-finite score is a parse failure, not a number.
        if not math.isfinite(value):
            return cls(OutcomeStatus.PARSE_FAILURE, None, wall_time, metrics or {})
        return cls(OutcomeStatus.PARSED, float(value), wall_time, metrics or {})

    @classmethod
    def parse_failure(cls, wall_time: float = 0.0) -> "EvaluationOutcome":
        return cls(OutcomeStatus.PARSE_FAILURE, None, wall_time)

    @classmethod
    def evaluator_error(cls, wall_time: float = 0.0) -> "EvaluationOutcome":
        return cls(OutcomeStatus.EVALUATOR_ERROR, None, wall_time)

    @classmethod
    def timeout(cls, wall_time: float = 0.0) -> "EvaluationOutcome":
        return cls(OutcomeStatus.TIMEOUT, None, wall_time)

    @property
    def ok(self) -> bool:
        return self.status is OutcomeStatus.PARSED


def default_bounds(y_init: float, y_target: float) -> tuple[float, float]:
    """Normalization bounds from a task's initial and target scores."""
    if y_init == y_target:
        raise DegenerateBoundsError(
            f"initial and target scores coincide ({y_init}); bounds are degenerate"
        )
    return min(y_init, y_target), max(y_init, y_target)


def shape_reward(outcome: EvaluationOutcome, config: ShapingConfig) -> float:
    """Shaped reward: multiplier * progress^exponent, or -1.0 on any failure.

    Progress is the direction-aware position of the score inside the
    configured bounds, clamped to [0, 1] before the exponent is applied.
    """
    if outcome.status is not OutcomeStatus.PARSED:
        return FAILURE_REWARD
    y = outcome.value
    if y is None or not math.isfinite(y):
        return FAILURE_REWARD
    span = config.y_max - config.y_min
    if config.direction is Direction.MAXIMIZE:
        progress = (y - config.y_min) / span
    else:
        progress = (config.y_max - y) / span
    progress = min(max(progress, 0.0), 1.0)
    return config.multiplier * progress**config.exponent
