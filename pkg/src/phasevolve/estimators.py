"""Advantage estimators for grouped rollouts.

All estimators operate on one rollout group at a time: a vector of N shaped
rewards produced from the same search state. They are pure functions; nothing
here touches policy parameters or global state.

Implemented signals:

* ``group_relative_raw`` / ``grpo_advantage`` -- dense centered credit.
* ``pkpo_weights`` -- best-of-k subset-max weighting.
* ``sloo_weights`` -- leave-one-out marginal contribution to the best-of-k
  frontier (closed form), with a subset-enumeration twin used as a test
  oracle.
* ``entropic_beta`` / ``entropic_advantage`` -- exponentially tilted
  leave-one-out credit with a KL budget.
* ``standardize`` + ``mix_advantages`` + ``phase_alpha`` -- the per-group
  standardization, degenerate-branch skip rule, and the linear phase mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

MAX_ENUMERATION_GROUP = 20


class EstimatorError(ValueError):
    """Base class for estimator contract violations."""


class InvalidGroupError(EstimatorError):
    """Rollout group too small (or otherwise unusable) for the estimator."""


class InvalidSubsetSizeError(EstimatorError):
    """Subset size k outside the valid range for the group."""


class UnreachableBudgetError(EstimatorError):
    """KL budget cannot be met (constant rewards have zero KL for any beta)."""


class EnumerationGuardError(EstimatorError):
    """Brute-force enumeration requested for a group above the size guard."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Numerical knobs shared by the estimator stack."""

    eps_num: float = 1e-8
    eps_skip: float = 1e-6
    k: int = 4
    gamma: float = 0.3
    beta_max: float = 50.0

    def __post_init__(self) -> None:
        if not self.eps_num > 0:
            raise ValueError(f"eps_num must be positive, got {self.eps_num}")
        if self.eps_skip < self.eps_num:
            raise ValueError(
                f"eps_skip ({self.eps_skip}) must be >= eps_num ({self.eps_num})"
            )
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.beta_max > 0:
            raise ValueError(f"beta_max must be positive, got {self.beta_max}")


@dataclass(frozen=True)
class BranchOutcome:
    """Result of standardizing one advantage branch within its group.

    ``values`` is None exactly when the branch was skipped because its raw
    standard deviation was non-finite or below ``eps_skip``. ``mean``/``std``
    record the raw branch statistics either way, for diagnostics.
    """

    values: np.ndarray | None
    mean: float
    std: float

    @property
    def skipped(self) -> bool:
        return self.values is None


@dataclass(frozen=True)
class PhaseSchedule:
    """Linear exploration-to-refinement schedule over a fixed horizon."""

    total_iterations: int = 1000

    def __post_init__(self) -> None:
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")

    def alpha(self, t: int) -> float:
        return phase_alpha(t, self.total_iterations)


class BetaSearchResult(NamedTuple):
    beta: float
    kl: float
    saturated: bool


def _as_group(rewards, min_size: int = 2) -> np.ndarray:
    """Validate one rollout group's reward vector."""
    values = np.asarray(rewards, dtype=np.float64)
    if values.ndim != 1:
        raise InvalidGroupError(f"reward vector must be 1-d, got shape {values.shape}")
    if values.size < min_size:
        raise InvalidGroupError(
            f"group size {values.size} below minimum {min_size}"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidGroupError(
            "non-finite rewards must be mapped to the failure reward upstream"
        )
    return values


def group_relative_raw(rewards) -> np.ndarray:
    """Centered rewards R_i - mean(R); the dense exploration-phase signal."""
    values = _as_group(rewards)
    return values - values.mean()


def grpo_advantage(rewards, eps_num: float) -> np.ndarray:
    """Group z-score (R_i - mean) / (population std + eps_num)."""
    if eps_num < 0:
        raise ValueError(f"eps_num must be >= 0, got {eps_num}")
    values = _as_group(rewards)
    centered = values - values.mean()
    denom = values.std() + eps_num
    if denom == 0.0:
        # Constant group with eps_num == 0: numerator is identically zero.
        return np.zeros_like(centered)
    return centered / denom


def _kl_to_uniform(beta: float, rewards: np.ndarray) -> float:
    """KL(q_beta || uniform) with q_beta = softmax(beta * R), in log space."""
    z = beta * rewards
    z = z - z.max()
    log_q = z - math.log(np.exp(z).sum())
    q = np.exp(log_q)
    return float(np.dot(q, log_q) + math.log(rewards.size))


def entropic_beta(
    rewards,
    gamma: float,
    beta_max: float = 50.0,
    tol: float = 1e-6,
) -> BetaSearchResult:
    """Find beta >= 0 whose tilted distribution meets the KL budget gamma.

    Uses bisection on [0, beta_max]; KL(q_beta || uniform) is increasing in
    beta for non-constant rewards. If even beta_max cannot reach the budget,
    returns beta_max with ``saturated`` set.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not beta_max > 0:
        raise ValueError(f"beta_max must be positive, got {beta_max}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    values = _as_group(rewards)
    if gamma == 0.0:
        return BetaSearchResult(0.0, 0.0, False)
    if np.all(values == values[0]):
        if gamma > tol:
            raise UnreachableBudgetError(
                "constant rewards have zero KL for every beta"
            )
        return BetaSearchResult(0.0, 0.0, False)

    kl_hi = _kl_to_uniform(beta_max, values)
    if kl_hi < gamma:
        return BetaSearchResult(beta_max, kl_hi, True)

    lo, hi = 0.0, beta_max
    beta = beta_max
    kl = kl_hi
    for _ in range(200):
        beta = 0.5 * (lo + hi)
        kl = _kl_to_uniform(beta, values)
        if abs(kl - gamma) <= tol:
            break
        if kl < gamma:
            lo = beta
        else:
            hi = beta
    return BetaSearchResult(beta, kl, False)


def entropic_advantage(rewards, beta: float, eps_num: float) -> np.ndarray:
    """Tilted leave-one-out advantage exp(beta dR_i)/(Z_-i + eps) - 1.

    Exponentials are anchored at the max reward so the largest term is
    exactly 1; Z_-i averages the other N-1 tilted terms.
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    values = _as_group(rewards)
    tilted = np.exp(beta * (values - values.max()))
    z_loo = (tilted.sum() - tilted) / (values.size - 1)
    return tilted / (z_loo + eps_num) - 1.0


def pkpo_weights(rewards, k: int) -> np.ndarray:
    """Unbiased best-of-k weights: mean subset max over size-k subsets with i.

    Computed in closed form by counting, for each element, how often each
    better-ranked element supplies the subset max. Equivalent to (k/N) times
    the average subset max conditioned on membership.
    """
    values = _as_group(rewards)
    n = values.size
    if not 1 <= k <= n:
        raise InvalidSubsetSizeError(f"k={k} outside [1, {n}]")

    order = np.argsort(-values, kind="stable")
    sorted_vals = values[order]
    total = math.comb(n, k)
    weights_sorted = np.empty(n)
    for m in range(n):
        # Subsets whose best element sits at sorted position p < m contribute
        # that value; the remaining k-2 members come from positions after p,
        # excluding m itself.
        acc = sorted_vals[m] * math.comb(n - 1 - m, k - 1)
        for p in range(m):
            count = math.comb(n - p - 2, k - 2) if k >= 2 else 0
            if count == 0:
                break
            acc += sorted_vals[p] * count
        weights_sorted[m] = acc / total

    weights = np.empty(n)
    weights[order] = weights_sorted
    return weights


def sloo_weights(rewards, k: int) -> np.ndarray:
    """Best-of-k marginal-contribution weights, O(N^2) order-statistics form.

    Element i earns, for every size-k subset it strictly wins, the margin to
    the runner-up. Counting subsets by the position of the runner-up among
    the strictly worse elements keeps the formula exact under tied rewards
    (tied maxima carry zero margin).
    """
    values = _as_group(rewards)
    n = values.size
    if not 2 <= k <= n:
        raise InvalidSubsetSizeError(f"k={k} outside [2, {n}]")

    order = np.argsort(-values, kind="stable")
    sorted_vals = values[order]
    total = math.comb(n, k)
    weights_sorted = np.zeros(n)
    for m in range(n):
        first_worse = m + 1
        while first_worse < n and sorted_vals[first_worse] == sorted_vals[m]:
            first_worse += 1
        worse = n - first_worse
        acc = 0.0
        for q in range(worse):
            count = math.comb(worse - 1 - q, k - 2)
            if count == 0:
                break
            acc += count * (sorted_vals[m] - sorted_vals[first_worse + q])
        weights_sorted[m] = acc / total

    weights = np.empty(n)
    weights[order] = weights_sorted
    return weights


def sloo_weights_bruteforce(rewards, k: int) -> np.ndarray:
    """Enumeration oracle for ``sloo_weights``: sums margins over all subsets.

    Only the strict winner of a subset has a nonzero margin (max minus
    runner-up), so each subset contributes its top-two gap at its argmax.
    Guarded to N <= 20; intended for tests.
    """
    values = _as_group(rewards)
    n = values.size
    if n > MAX_ENUMERATION_GROUP:
        raise EnumerationGuardError(
            f"group size {n} exceeds enumeration guard {MAX_ENUMERATION_GROUP}"
        )
    if not 2 <= k <= n:
        raise InvalidSubsetSizeError(f"k={k} outside [2, {n}]")

    subsets = np.array(list(combinations(range(n), k)), dtype=np.intp)
    vals = values[subsets]
    order = np.argsort(vals, axis=1, kind="stable")
    rows = np.arange(subsets.shape[0])
    top = vals[rows, order[:, -1]]
    second = vals[rows, order[:, -2]]
    winner = subsets[rows, order[:, -1]]

    weights = np.zeros(n)
    np.add.at(weights, winner, top - second)
    return weights / math.comb(n, k)


def standardize(branch, eps_num: float, eps_skip: float) -> BranchOutcome:
    """Standardize one branch within its group, or skip a degenerate one.

    A branch whose population std is non-finite or below ``eps_skip`` has
    collapsed to numerical noise: amplifying it would turn noise into a
    full-scale gradient, so the outcome is Skipped instead of standardized.
    """
    if eps_num < 0:
        raise ValueError(f"eps_num must be >= 0, got {eps_num}")
    if not eps_skip > 0:
        raise ValueError(f"eps_skip must be positive, got {eps_skip}")
    values = np.asarray(branch, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise InvalidGroupError("branch must hold at least 2 values")
    mean = float(values.mean())
    std = float(values.std())
    if not math.isfinite(std) or std < eps_skip:
        return BranchOutcome(values=None, mean=mean, std=std)
    return BranchOutcome(values=(values - mean) / (std + eps_num), mean=mean, std=std)


def mix_advantages(
    g_std: BranchOutcome, k_std: BranchOutcome, alpha: float
) -> np.ndarray | None:
    """Convex mixture (1-alpha)*group + alpha*top-k of standardized branches.

    Returns None (skip) when both branches collapsed, or when the only
    surviving branch has a zero mixture coefficient. A single surviving
    branch is scaled by its own coefficient; the weights are never
    renormalized, so a skipped branch contributes exactly nothing.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if g_std.skipped and k_std.skipped:
        return None
    if g_std.skipped:
        return alpha * k_std.values if alpha > 0.0 else None
    if k_std.skipped:
        return (1.0 - alpha) * g_std.values if alpha < 1.0 else None
    if g_std.values.shape != k_std.values.shape:
        raise ValueError(
            f"branch length mismatch: {g_std.values.shape} vs {k_std.values.shape}"
        )
    return (1.0 - alpha) * g_std.values + alpha * k_std.values


def phase_alpha(t: int, total_iterations: int) -> float:
    """Mixture coefficient t/T of the linear schedule."""
    if total_iterations < 1:
        raise ValueError("total_iterations must be >= 1")
    if not 0 <= t <= total_iterations:
        raise ValueError(f"iteration {t} outside [0, {total_iterations}]")
    return t / total_iterations
