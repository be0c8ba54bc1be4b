import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fuzz_config, random_history
from blockrar.core import (
    EMPTY_STATE,
    BlockAction,
    ContingencyState,
    InfeasibleActionError,
    InvalidConfigError,
    InvalidHistoryError,
    InvalidStratumError,
    SolverConfig,
    TrialHistory,
    beta_binomial_pmf,
    cmh_statistic,
    cmh_test_one_sided,
    count_states,
    harmonic_weight,
    lambda_f_threshold,
    map_estimate,
    normal_quantile,
    rar_probability,
    reward,
    round_half_away,
    single_block_utility,
    smoothed_rates,
    transition_pmf,
    two_block_utility,
    utility,
)

# Exact rational evaluation of the two-block utility example (block 1:
# 25/25 with 15 vs 5 successes; block 2: 35/15 with 21 vs 3), gamma = 1.
TWO_BLOCK_V = 0.9533040433403805
TWO_BLOCK_F = -0.07649769585253456
TWO_BLOCK_U = 1.2392948267505188


def two_block_history() -> TrialHistory:
    return TrialHistory(
        states=(
            EMPTY_STATE,
            ContingencyState(25, 15, 25, 5),
            ContingencyState(60, 36, 40, 8),
        ),
        actions=(BlockAction(50, 0.5), BlockAction(50, 0.7)),
    )


# ---------------------------------------------------------------------------
# rounding and domain types
# ---------------------------------------------------------------------------

def test_round_half_away():
    assert round_half_away(0.5) == 1
    assert round_half_away(1.5) == 2
    assert round_half_away(2.5) == 3
    assert round_half_away(2.4) == 2
    assert round_half_away(-0.5) == -1
    # 35 * 0.3 is 10.499999... in binary but means 10.5
    assert round_half_away(35 * 0.3) == 11


def test_contingency_state_invariants():
    s = ContingencyState(5, 3, 4, 2)
    assert (s.total, s.successes, s.failures) == (9, 5, 4)
    with pytest.raises(InvalidStratumError):
        ContingencyState(2, 3, 0, 0)
    with pytest.raises(InvalidStratumError):
        ContingencyState(-1, 0, 0, 0)
    bigger = s.add(ContingencyState(1, 0, 2, 1))
    assert bigger.as_tuple() == (6, 3, 6, 3)
    assert bigger.minus(s).as_tuple() == (1, 0, 2, 1)
    with pytest.raises(InvalidHistoryError):
        s.minus(bigger)


def test_block_action_assignment():
    a = BlockAction(60, 0.7)
    assert (a.assigned_a, a.assigned_b) == (42, 18)
    assert BlockAction(2, 0.5).assigned_a == 1
    assert BlockAction(5, 0.5).assigned_a == 3  # half away from zero
    with pytest.raises(InfeasibleActionError):
        BlockAction(1, 0.5)  # rounds to an empty arm
    with pytest.raises(InfeasibleActionError):
        BlockAction(2, 0.2)
    with pytest.raises(InfeasibleActionError):
        BlockAction(4, 1.2)


def test_solver_config_defaults_and_validation():
    cfg = SolverConfig(100, 4.0, 0.01)
    assert cfg.min_block == 13  # ceil(100/8)
    assert cfg.block_increment == 2
    assert cfg.allocation_set == (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    assert cfg.smoothing == (1.0, 1.0, 1.0, 1.0)
    assert SolverConfig(20, 1.0, 0.0).min_block == 3
    assert SolverConfig(8, 1.0, 0.0, allocation_set=(0.5, 0.25, 0.5)).allocation_set == (0.25, 0.5)
    with pytest.raises(InvalidConfigError):
        SolverConfig(0, 1.0, 0.0)
    with pytest.raises(InvalidConfigError):
        SolverConfig(10, -1.0, 0.0)
    with pytest.raises(InvalidConfigError):
        SolverConfig(10, 1.0, 0.0, allocation_set=())
    with pytest.raises(InvalidConfigError):
        SolverConfig(10, 1.0, 0.0, allocation_set=(0.0, 0.5))
    with pytest.raises(InvalidConfigError):
        SolverConfig(10, 1.0, 0.0, min_block=11)
    with pytest.raises(InvalidConfigError):
        SolverConfig(10, 1.0, 0.0, smoothing=(1.0, 1.0, -1.0, 1.0))


def test_trial_history_validation():
    h = two_block_history()
    assert h.num_blocks == 2
    assert [s.as_tuple() for s in h.strata()] == [(25, 15, 25, 5), (35, 21, 15, 3)]
    with pytest.raises(InvalidHistoryError):
        TrialHistory(states=(ContingencyState(1, 0, 0, 0), ContingencyState(2, 0, 0, 0)))
    with pytest.raises(InvalidHistoryError):
        TrialHistory(states=(EMPTY_STATE, EMPTY_STATE))
    with pytest.raises(InvalidHistoryError):  # second state does not dominate first
        TrialHistory(states=(EMPTY_STATE, ContingencyState(2, 1, 2, 1), ContingencyState(1, 1, 4, 1)))
    with pytest.raises(InvalidHistoryError):  # stratum arms disagree with action
        TrialHistory(
            states=(EMPTY_STATE, ContingencyState(3, 0, 1, 0)),
            actions=(BlockAction(4, 0.5),),
        )


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def test_map_estimate_examples():
    assert map_estimate(25, 50, 1, 1) == 0.5
    assert map_estimate(0, 0, 1, 1) == 0.5
    assert map_estimate(10, 40, 1, 1) == pytest.approx(11 / 42, abs=1e-15)
    assert map_estimate(3, 10, 0.0, 0.0) == 0.3  # raw when data exists
    with pytest.raises(InvalidConfigError):
        map_estimate(0, 0, 0.0, 0.0)
    with pytest.raises(InvalidStratumError):
        map_estimate(5, 3)


@given(
    assigned=st.integers(0, 500),
    frac=st.floats(0.0, 1.0),
    g1=st.floats(0.01, 10.0),
    g0=st.floats(0.01, 10.0),
)
def test_map_estimate_stays_interior(assigned, frac, g1, g0):
    successes = int(round(assigned * frac))
    est = map_estimate(successes, assigned, g1, g0)
    assert 0.0 < est < 1.0


def test_harmonic_weight():
    assert harmonic_weight(50, 50) == 25.0
    assert harmonic_weight(42, 18) == pytest.approx(12.6, abs=1e-12)
    assert harmonic_weight(0, 10) == 0.0
    with pytest.raises(InvalidStratumError):
        harmonic_weight(0, 0)


# ---------------------------------------------------------------------------
# utility and reward
# ---------------------------------------------------------------------------

def test_utility_single_balanced_block():
    h = TrialHistory(states=(EMPTY_STATE, ContingencyState(50, 25, 50, 25)))
    cfg = SolverConfig(100, 7.3, 0.01)  # failure weight irrelevant here
    assert utility(h, cfg) == pytest.approx(0.99, abs=1e-12)


def test_utility_two_block_example():
    h = two_block_history()
    cfg = SolverConfig(100, 4.0, 0.01)
    assert utility(h, cfg) == pytest.approx(TWO_BLOCK_U, abs=1e-9)
    # component extraction: V = U(lf=0, lk=0); F = V - U(lf=1, lk=0)
    v = utility(h, SolverConfig(100, 0.0, 0.0))
    assert v == pytest.approx(TWO_BLOCK_V, abs=1e-9)
    assert v - utility(h, SolverConfig(100, 1.0, 0.0)) == pytest.approx(TWO_BLOCK_F, abs=1e-9)


def test_failure_term_vanishes_with_equal_arms():
    h = TrialHistory(states=(EMPTY_STATE, ContingencyState(50, 40, 50, 10)))
    base = utility(h, SolverConfig(100, 0.0, 0.01))
    assert utility(h, SolverConfig(100, 100.0, 0.01)) == base


def test_utility_rejects_wrong_trial_size():
    h = two_block_history()
    with pytest.raises(InvalidHistoryError):
        utility(h, SolverConfig(120, 4.0, 0.01))


def test_reward_examples():
    # balanced 50/50 block with all cumulative estimates at 0.5: the
    # precision term is w/(N*pq) = 25/(100*0.25) = 1, minus the block cost
    cfg = SolverConfig(100, 4.0, 0.01)
    final = ContingencyState(50, 25, 50, 25)
    assert smoothed_rates(final, cfg.smoothing) == (0.5, 0.5)
    r_term = reward(BlockAction(100, 0.5), final, cfg)
    assert r_term == pytest.approx(0.99, abs=1e-12)
    # equal arms kill the failure term, so the weight does not matter
    assert reward(BlockAction(100, 0.5), final, SolverConfig(100, 50.0, 0.01)) == pytest.approx(r_term, abs=1e-15)
    # same block mid-trial (N=200): only the 1/N scaling changes
    r_mid = reward(BlockAction(100, 0.5), final, SolverConfig(200, 4.0, 0.01))
    assert r_mid == pytest.approx(25 / (200 * 0.25) - 0.01, abs=1e-12)
    with pytest.raises(InfeasibleActionError):
        reward(BlockAction(10, 0.5), ContingencyState(60, 0, 50, 0), cfg)


def test_reward_decomposes_example_history():
    cfg = SolverConfig(100, 4.0, 0.01)
    h = two_block_history()
    total = sum(
        reward(a, s, cfg) for a, s in zip(h.actions, h.states[1:])
    )
    assert total == pytest.approx(utility(h, cfg), abs=1e-9)
    assert total == pytest.approx(TWO_BLOCK_U, abs=1e-9)


def test_reward_decomposition_random_histories():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        cfg = fuzz_config(rng)
        h = random_history(rng, cfg)
        total = sum(reward(a, s, cfg) for a, s in zip(h.actions, h.states[1:]))
        assert total == pytest.approx(utility(h, cfg), abs=1e-9)


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

def test_transition_uniform_from_empty(toy_cfg):
    pmf = transition_pmf(EMPTY_STATE, BlockAction(2, 0.5), toy_cfg)
    assert len(pmf) == 4
    for p, successor in pmf:
        assert p == pytest.approx(0.25, abs=1e-12)
        assert successor.total == 2


def test_transition_beta_binomial_marginal():
    cfg = SolverConfig(8, 4.0, 0.01, min_block=2, block_increment=2)
    state = ContingencyState(2, 1, 2, 2)
    pmf = transition_pmf(state, BlockAction(4, 0.5), cfg)
    marginal = [0.0, 0.0, 0.0]
    for p, successor in pmf:
        marginal[successor.n_success_a - 1] += p
    assert marginal == pytest.approx([0.3, 0.4, 0.3], abs=1e-12)
    # every successor extends the cumulative table by the block assignment
    for _p, successor in pmf:
        stratum = successor.minus(state)
        assert (stratum.n_assigned_a, stratum.n_assigned_b) == (2, 2)


def test_posterior_predictive_mean():
    pmf = beta_binomial_pmf(1, 2.0, 1.0)
    assert pmf[1] == pytest.approx(2 / 3, abs=1e-12)
    with pytest.raises(InvalidConfigError):
        beta_binomial_pmf(2, 0.0, 1.0)


def test_transition_sums_exhaustive_small():
    """Every feasible (state, action) with N=12 normalizes within 1e-12."""
    cfg = SolverConfig(12, 4.0, 0.01, min_block=1, block_increment=1)
    for total in range(12):
        for n_arm_a in range(total + 1):
            n_arm_b = total - n_arm_a
            for n_a in range(n_arm_a + 1):
                for n_b in range(n_arm_b + 1):
                    state = ContingencyState(n_arm_a, n_a, n_arm_b, n_b)
                    for t in range(1, 12 - total + 1):
                        for phi in (0.2, 0.5, 0.7):
                            a, b = round_half_away(t * phi), t - round_half_away(t * phi)
                            if a < 1 or b < 1:
                                continue
                            pmf = transition_pmf(state, BlockAction(t, phi), cfg)
                            assert len(pmf) == (a + 1) * (b + 1)
                            assert math.fsum(p for p, _ in pmf) == pytest.approx(1.0, abs=1e-12)


def test_transition_overrun_rejected(toy_cfg):
    with pytest.raises(InfeasibleActionError):
        transition_pmf(ContingencyState(1, 0, 1, 0), BlockAction(2, 0.5), toy_cfg)


# ---------------------------------------------------------------------------
# CMH test
# ---------------------------------------------------------------------------

def test_cmh_statistic_single_stratum():
    assert cmh_statistic([ContingencyState(50, 30, 50, 20)]) == pytest.approx(2.0, abs=1e-12)


def test_cmh_statistic_zero_when_proportions_equal():
    strata = [ContingencyState(10, 4, 5, 2), ContingencyState(8, 6, 4, 3)]
    assert cmh_statistic(strata) == pytest.approx(0.0, abs=1e-12)


def test_cmh_degenerate_and_empty_arm():
    assert cmh_statistic([ContingencyState(5, 5, 5, 5)]) is None
    assert cmh_statistic([ContingencyState(5, 2, 0, 0)]) is None  # w = 0 everywhere
    mixed = cmh_statistic([ContingencyState(0, 0, 3, 1), ContingencyState(50, 30, 50, 20)])
    assert mixed == pytest.approx(2.0, abs=1e-12)


@given(st.lists(
    st.tuples(st.integers(1, 12), st.integers(0, 12), st.integers(1, 12), st.integers(0, 12)),
    min_size=1, max_size=6,
))
def test_cmh_antisymmetric_under_arm_swap(raw):
    strata, swapped = [], []
    for arm_a, s_a, arm_b, s_b in raw:
        strata.append(ContingencyState(arm_a, min(s_a, arm_a), arm_b, min(s_b, arm_b)))
        swapped.append(ContingencyState(arm_b, min(s_b, arm_b), arm_a, min(s_a, arm_a)))
    stat = cmh_statistic(strata)
    mirrored = cmh_statistic(swapped)
    if stat is None:
        assert mirrored is None
    else:
        assert mirrored == pytest.approx(-stat, abs=1e-12)


def test_cmh_one_sided_decision():
    assert normal_quantile(0.95) == pytest.approx(1.6448536270, abs=1e-9)
    assert cmh_test_one_sided([ContingencyState(50, 30, 50, 20)], 0.05)  # statistic 2.0
    assert not cmh_test_one_sided([ContingencyState(10, 4, 5, 2), ContingencyState(8, 6, 4, 3)], 0.05)
    assert not cmh_test_one_sided([ContingencyState(5, 5, 5, 5)], 0.05)  # degenerate
    with pytest.raises(InvalidConfigError):
        cmh_test_one_sided([ContingencyState(50, 30, 50, 20)], 0.7)


# ---------------------------------------------------------------------------
# adaptive rule and closed forms
# ---------------------------------------------------------------------------

def test_rar_probability():
    assert rar_probability(0.5, 0.5) == 0.5
    assert rar_probability(0.9, 0.1) == pytest.approx(0.75, abs=1e-12)
    with pytest.raises(InvalidConfigError):
        rar_probability(0.0, 0.0)


@given(st.floats(0.01, 0.98), st.floats(0.005, 0.02), st.floats(0.01, 0.99))
def test_rar_probability_monotone(p_a, bump, p_b):
    assert rar_probability(min(p_a + bump, 0.99), p_b) > rar_probability(p_a, p_b)


def test_single_block_utility():
    assert single_block_utility(0.5, 0.5, 0.01) == pytest.approx(0.99, abs=1e-12)
    assert single_block_utility(0.7, 0.3, 0.01) == pytest.approx(0.99, abs=1e-12)
    assert single_block_utility(0.9, 0.6, 0.0) == pytest.approx(4 / 3, abs=1e-12)


def test_two_block_utility():
    # phi = 0.5 kills the failure term regardless of the failure weight
    a = two_block_utility(0.6, 0.2, 100, 40, 0.5, 0.0, 0.02)
    b = two_block_utility(0.6, 0.2, 100, 40, 0.5, 9.0, 0.02)
    assert a == b
    # ... and a balanced split degenerates to one block plus an extra block cost
    assert a == pytest.approx(single_block_utility(0.6, 0.2, 0.02) - 0.02, abs=1e-12)
    assert two_block_utility(0.5, 0.5, 100, 50, 0.5, 3.0, 0.01) == pytest.approx(1.0 - 0.02, abs=1e-12)
    # direct substitution at an unbalanced allocation
    expect = (40 + 4 * 60 * 0.7 * 0.3) / (100 * 0.8 * 1.2) + 2.0 / 100 * 0.4 * 60 * 0.4 - 0.04
    assert two_block_utility(0.6, 0.2, 100, 40, 0.7, 2.0, 0.02) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(InvalidConfigError):
        two_block_utility(0.5, 0.5, 100, 100, 0.5, 1.0, 0.01)


def test_lambda_f_threshold():
    thr = lambda_f_threshold(0.7, 0.3, 100, 50, 0.01)
    assert thr == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    assert lambda_f_threshold(0.7, 0.3, 100, 50, 0.0) == 0.0
    assert lambda_f_threshold(0.7, 0.3, 100, 50, 0.04) == pytest.approx(2 * thr, abs=1e-12)
    with pytest.raises(InvalidConfigError):
        lambda_f_threshold(0.3, 0.7, 100, 50, 0.01)


def test_threshold_separates_one_and_two_block_designs():
    # above the threshold some allocation beats one block; below, none does
    grid = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    p_a, p_b, n, t, lam_k = 0.7, 0.3, 100, 50, 0.01
    thr = lambda_f_threshold(p_a, p_b, n, t, lam_k)
    single = single_block_utility(p_a, p_b, lam_k)
    best_hi = max(two_block_utility(p_a, p_b, n, t, phi, 1.5 * thr, lam_k) for phi in grid)
    best_lo = max(two_block_utility(p_a, p_b, n, t, phi, 0.9 * thr, lam_k) for phi in grid)
    assert best_hi > single
    assert best_lo <= single


def test_count_states():
    assert count_states(0) == 1
    assert count_states(2) == 10
    assert count_states(3) == 20
    for i in range(21):
        brute = sum(
            1
            for n_arm_a in range(i + 1)
            for _n_a in range(n_arm_a + 1)
            for _n_b in range(i - n_arm_a + 1)
        )
        assert count_states(i) == brute


def test_smoothed_rates_uses_all_four_gammas():
    state = ContingencyState(4, 1, 6, 2)
    p_a, p_b = smoothed_rates(state, (2.0, 1.0, 0.5, 0.5))
    assert p_a == pytest.approx(3 / 7, abs=1e-15)
    assert p_b == pytest.approx(2.5 / 7, abs=1e-15)
