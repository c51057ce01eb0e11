import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import assume, given

from phasevolve import estimators as est
from phasevolve.estimators import (
    BranchOutcome,
    EnumerationGuardError,
    EstimatorConfig,
    InvalidGroupError,
    InvalidSubsetSizeError,
    PhaseSchedule,
    UnreachableBudgetError,
)

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
reward_lists = st.lists(finite_floats, min_size=2, max_size=10)


def kl_to_uniform(beta, rewards):
    rewards = np.asarray(rewards, dtype=float)
    z = beta * rewards
    z = z - z.max()
    logq = z - math.log(np.exp(z).sum())
    q = np.exp(logq)
    return float((q * logq).sum() + math.log(rewards.size))


# ---------------------------------------------------------------- grpo / raw


def test_grpo_constant_rewards_center_to_zero():
    assert est.grpo_advantage([1, 1, 1, 1], 1e-8) == pytest.approx([0, 0, 0, 0])


def test_grpo_two_point():
    assert est.grpo_advantage([0, 1], 0.0) == pytest.approx([-1.0, 1.0])


def test_grpo_four_point_population_std():
    out = est.grpo_advantage([0, 1, 2, 3], 0.0)
    expected = np.array([-1.5, -0.5, 0.5, 1.5]) / math.sqrt(1.25)
    assert out == pytest.approx(expected, abs=1e-12)


def test_grpo_rejects_small_group():
    with pytest.raises(InvalidGroupError):
        est.grpo_advantage([1.0], 1e-8)


def test_grpo_rejects_nonfinite():
    with pytest.raises(InvalidGroupError):
        est.grpo_advantage([1.0, float("nan")], 1e-8)


def test_group_relative_raw_constant():
    assert est.group_relative_raw([5, 5, 5]) == pytest.approx([0, 0, 0])


def test_group_relative_raw_mean_subtraction():
    assert est.group_relative_raw([0, 1, 2, 3]) == pytest.approx([-1.5, -0.5, 0.5, 1.5])


@given(reward_lists)
def test_group_relative_raw_sums_to_zero(rewards):
    out = est.group_relative_raw(rewards)
    scale = max(1.0, np.max(np.abs(rewards)))
    assert abs(out.sum()) <= 1e-9 * len(rewards) * scale


@given(
    st.lists(st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=2, max_size=8),
    st.floats(min_value=-100, max_value=100, allow_nan=False),
    st.floats(min_value=1e-6, max_value=1e3, allow_nan=False),
)
def test_group_relative_raw_affine(rewards, c, delta):
    base = est.group_relative_raw(rewards)
    shifted = est.group_relative_raw(c + delta * np.asarray(rewards))
    assert np.allclose(shifted, delta * base, rtol=1e-9, atol=1e-9)


# ------------------------------------------------------------------ entropic


def test_entropic_beta_zero_budget():
    assert est.entropic_beta([3.0, -1.0, 7.0], 0.0).beta == 0.0


def test_entropic_beta_two_point_budget():
    found = est.entropic_beta([0.0, 1.0], 0.13081)
    assert found.beta == pytest.approx(math.log(3), abs=1e-4)
    assert not found.saturated
    assert kl_to_uniform(found.beta, [0.0, 1.0]) == pytest.approx(0.13081, abs=1e-6)


def test_entropic_beta_constant_rewards_unreachable():
    with pytest.raises(UnreachableBudgetError):
        est.entropic_beta([2.0, 2.0, 2.0], 0.1)


def test_entropic_beta_constant_rewards_tiny_budget_ok():
    assert est.entropic_beta([2.0, 2.0], 0.1, tol=0.2).beta == 0.0


def test_entropic_beta_saturates_on_tiny_spread():
    found = est.entropic_beta([0.0, 1e-9], 0.5, beta_max=10.0)
    assert found.saturated
    assert found.beta == 10.0


@given(
    st.lists(st.floats(min_value=-3, max_value=3, allow_nan=False), min_size=2, max_size=8),
    st.floats(min_value=0.01, max_value=0.4),
)
def test_entropic_beta_meets_budget_or_saturates(rewards, gamma):
    rewards = np.asarray(rewards)
    if np.all(rewards == rewards[0]):
        rewards = rewards + np.arange(rewards.size)
    found = est.entropic_beta(rewards, gamma, beta_max=200.0, tol=1e-8)
    if not found.saturated:
        assert kl_to_uniform(found.beta, rewards) == pytest.approx(gamma, abs=1e-8)


@given(st.floats(min_value=0.0, max_value=20.0), reward_lists)
def test_entropic_kl_monotone_in_beta(beta, rewards):
    # The bisection relies on this; asserted rather than assumed.
    assert kl_to_uniform(beta + 0.5, rewards) >= kl_to_uniform(beta, rewards) - 1e-12


def test_entropic_advantage_zero_beta_is_zero():
    out = est.entropic_advantage([4.0, 1.0, -2.0], 0.0, 0.0)
    assert out == pytest.approx([0, 0, 0], abs=1e-15)


def test_entropic_advantage_two_point():
    out = est.entropic_advantage([0.0, 1.0], math.log(3), 0.0)
    assert out == pytest.approx([-2 / 3, 2.0], abs=1e-12)


def test_entropic_advantage_constant_rewards():
    assert est.entropic_advantage([1, 1, 1], 5.0, 0.0) == pytest.approx([0, 0, 0])


# ---------------------------------------------------------------------- pkpo


def test_pkpo_three_two():
    assert est.pkpo_weights([3, 2, 1], 2) == pytest.approx([2.0, 5 / 3, 5 / 3])


@given(reward_lists)
def test_pkpo_k1_is_mean_share(rewards):
    out = est.pkpo_weights(rewards, 1)
    assert np.allclose(out, np.asarray(rewards) / len(rewards))


@given(reward_lists)
def test_pkpo_full_subset_is_max(rewards):
    out = est.pkpo_weights(rewards, len(rewards))
    assert np.allclose(out, np.max(rewards))


@given(st.lists(finite_floats, min_size=2, max_size=8), st.data())
def test_pkpo_consistency_with_subset_max_expectation(rewards, data):
    from itertools import combinations

    n = len(rewards)
    k = data.draw(st.integers(min_value=1, max_value=n))
    w = est.pkpo_weights(rewards, k)
    exact = np.mean([max(rewards[i] for i in I) for I in combinations(range(n), k)])
    assert w.mean() * n / k == pytest.approx(exact, rel=1e-9, abs=1e-9)


def test_pkpo_invalid_k():
    with pytest.raises(InvalidSubsetSizeError):
        est.pkpo_weights([1, 2, 3], 0)
    with pytest.raises(InvalidSubsetSizeError):
        est.pkpo_weights([1, 2, 3], 4)


# ---------------------------------------------------------------------- sloo


def test_sloo_three_two():
    assert est.sloo_weights([3, 2, 1], 2) == pytest.approx([1.0, 1 / 3, 0.0])


def test_sloo_bruteforce_three_two():
    assert est.sloo_weights_bruteforce([3, 2, 1], 2) == pytest.approx([1.0, 1 / 3, 0.0])


def test_sloo_bruteforce_full_subset():
    assert est.sloo_weights_bruteforce([3, 2, 1], 3) == pytest.approx([1.0, 0.0, 0.0])


def test_sloo_invalid_k():
    for k in (1, 4):
        with pytest.raises(InvalidSubsetSizeError):
            est.sloo_weights([3, 2, 1], k)
        with pytest.raises(InvalidSubsetSizeError):
            est.sloo_weights_bruteforce([3, 2, 1], k)


def test_sloo_bruteforce_enumeration_guard():
    with pytest.raises(EnumerationGuardError):
        est.sloo_weights_bruteforce(list(range(21)), 2)


@given(st.lists(finite_floats, min_size=2, max_size=10), st.data())
def test_sloo_matches_bruteforce(rewards, data):
    k = data.draw(st.integers(min_value=2, max_value=len(rewards)))
    fast = est.sloo_weights(rewards, k)
    brute = est.sloo_weights_bruteforce(rewards, k)
    assert np.allclose(fast, brute, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(rewards))))


@pytest.mark.parametrize(
    "rewards,k",
    [
        ([2.0, 2.0, 1.0], 2),
        ([3.0, 2.0, 2.0], 2),
        ([3.0, 3.0, 2.0, 1.0], 2),
        ([3.0, 3.0, 2.0, 1.0], 3),
        ([1.0, 1.0, 1.0, 1.0], 3),
        ([5.0, 4.0, 4.0, 4.0, 1.0], 4),
    ],
)
def test_sloo_ties_match_bruteforce_exactly(rewards, k):
    assert est.sloo_weights(rewards, k) == pytest.approx(
        est.sloo_weights_bruteforce(rewards, k), abs=1e-15
    )


@given(
    st.lists(st.floats(min_value=-1, max_value=5, allow_nan=False), min_size=2, max_size=8),
    st.floats(min_value=-100, max_value=100, allow_nan=False),
    st.floats(min_value=1e-3, max_value=1e3, allow_nan=False),
    st.data(),
)
def test_sloo_affine_equivariance(rewards, c, delta, data):
    k = data.draw(st.integers(min_value=2, max_value=len(rewards)))
    base = est.sloo_weights(rewards, k)
    shifted = est.sloo_weights(c + delta * np.asarray(rewards), k)
    assert np.allclose(shifted, delta * base, rtol=1e-9, atol=1e-10)


def test_sloo_zero_tail_and_order():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(3, 11))
        k = int(rng.integers(2, n + 1))
        rewards = rng.normal(size=n)
        while np.unique(rewards).size < n:
            rewards = rng.normal(size=n)
        w = est.sloo_weights(rewards, k)
        assert np.all(w >= 0)
        order = np.argsort(-rewards)
        ranked = w[order]
        # bottom k-1 never win a subset
        assert np.all(ranked[n - (k - 1) :] == 0.0)
        assert np.all(np.diff(ranked) <= 1e-12)


# --------------------------------------------------------------- standardize


def test_standardize_constant_is_skipped():
    out = est.standardize([1.0, 1.0, 1.0], 1e-8, 1e-6)
    assert out.skipped
    assert out.values is None
    assert out.std == 0.0


def test_standardize_matches_grpo_at_zero_eps():
    out = est.standardize([0, 1, 2, 3], 0.0, 1e-6)
    assert not out.skipped
    assert out.values == pytest.approx(est.grpo_advantage([0, 1, 2, 3], 0.0))


@given(
    st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=2, max_size=10),
    st.floats(min_value=-50, max_value=50, allow_nan=False),
    st.floats(min_value=0.5, max_value=100, allow_nan=False),
)
def test_standardize_affine_invariance(branch, a, b):
    assume(np.asarray(branch).std() >= 1e-2)  # cancellation noise dominates below
    base = est.standardize(branch, 0.0, 1e-9)
    shifted = est.standardize(a + b * np.asarray(branch), 0.0, 1e-9)
    assert not (base.skipped or shifted.skipped)
    assert np.allclose(base.values, shifted.values, rtol=1e-6, atol=1e-8)


@given(reward_lists, st.floats(min_value=0, max_value=1.0))
def test_standardize_norm_bound_and_centering(branch, eps_num):
    out = est.standardize(branch, eps_num, 1e-9)
    if not out.skipped:
        assert np.sum(out.values**2) <= len(branch) + 1e-9
        assert abs(out.values.mean()) <= 1e-9


@given(reward_lists, st.floats(min_value=0, max_value=1.0))
def test_standardize_preserves_argmax_set(branch, eps_num):
    out = est.standardize(branch, eps_num, 1e-9)
    if out.skipped:
        return
    branch = np.asarray(branch)
    before = set(np.flatnonzero(branch == branch.max()))
    after = set(np.flatnonzero(out.values == out.values.max()))
    # The transform is monotone even in floats, so the original argmax indices
    # always survive; rounding may merge near-ties into the set.
    assert before <= after


@given(
    st.lists(st.floats(min_value=-1, max_value=1, allow_nan=False), min_size=2, max_size=8),
    st.floats(min_value=1e-12, max_value=1.0),
    st.floats(min_value=-10, max_value=10, allow_nan=False),
)
def test_standardize_skip_rule_threshold(rewards, delta, c):
    eps_skip = 1e-6
    compressed = c + delta * np.asarray(rewards)
    out = est.standardize(compressed, 1e-8, eps_skip)
    branch_std = compressed.std()
    if abs(branch_std - eps_skip) <= 1e-9 * eps_skip:
        return  # exactly at the threshold: either outcome is acceptable
    assert out.skipped == (branch_std < eps_skip)


def test_standardize_rejects_short_branch():
    with pytest.raises(InvalidGroupError):
        est.standardize([1.0], 1e-8, 1e-6)


# ----------------------------------------------------------------- mix/phase


def _std(values):
    return est.standardize(values, 0.0, 1e-9)


def test_mix_alpha_endpoints():
    g = _std([0.0, 1.0, 2.0])
    k = _std([2.0, 0.0, 1.0])
    assert np.array_equal(est.mix_advantages(g, k, 0.0), g.values)
    assert np.array_equal(est.mix_advantages(g, k, 1.0), k.values)


def test_mix_midpoint_cancels():
    g = BranchOutcome(values=np.array([-1.0, 1.0]), mean=0.0, std=1.0)
    k = BranchOutcome(values=np.array([1.0, -1.0]), mean=0.0, std=1.0)
    assert est.mix_advantages(g, k, 0.5) == pytest.approx([0.0, 0.0])


def test_mix_single_surviving_branch_scaled_not_renormalized():
    g = BranchOutcome(values=None, mean=0.0, std=0.0)
    k = _std([0.0, 1.0, 2.0])
    out = est.mix_advantages(g, k, 0.25)
    assert out == pytest.approx(0.25 * k.values)
    assert est.mix_advantages(g, k, 0.0) is None
    out2 = est.mix_advantages(k, g, 0.25)
    assert out2 == pytest.approx(0.75 * k.values)
    assert est.mix_advantages(k, g, 1.0) is None


def test_mix_both_skipped_is_skip():
    dead = BranchOutcome(values=None, mean=0.0, std=0.0)
    assert est.mix_advantages(dead, dead, 0.5) is None


def test_mix_length_mismatch_error():
    g = _std([0.0, 1.0, 2.0])
    k = _std([0.0, 1.0])
    with pytest.raises(ValueError):
        est.mix_advantages(g, k, 0.5)


def test_phase_alpha_schedule_points():
    assert est.phase_alpha(0, 1000) == 0.0
    assert est.phase_alpha(1000, 1000) == 1.0
    assert est.phase_alpha(500, 1000) == 0.5


def test_phase_alpha_out_of_range():
    with pytest.raises(ValueError):
        est.phase_alpha(-1, 10)
    with pytest.raises(ValueError):
        est.phase_alpha(11, 10)


@given(st.integers(min_value=1, max_value=10_000), st.data())
def test_phase_schedule_monotone(total, data):
    schedule = PhaseSchedule(total)
    t1 = data.draw(st.integers(min_value=0, max_value=total))
    t2 = data.draw(st.integers(min_value=t1, max_value=total))
    a1, a2 = schedule.alpha(t1), schedule.alpha(t2)
    assert 0.0 <= a1 <= a2 <= 1.0
    assert schedule.alpha(0) == 0.0
    assert schedule.alpha(total) == 1.0


def test_estimator_config_validation():
    EstimatorConfig()
    with pytest.raises(ValueError):
        EstimatorConfig(eps_num=0.0)
    with pytest.raises(ValueError):
        EstimatorConfig(eps_num=1e-3, eps_skip=1e-6)
    with pytest.raises(ValueError):
        EstimatorConfig(gamma=-0.1)
