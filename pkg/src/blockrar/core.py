"""Domain types and closed-form mathematics for blocked two-armed binary trials.

Everything here is a pure function over immutable values: contingency-table
states, block actions, smoothed success-rate estimates, the trial utility and
its per-block reward decomposition, Beta-Binomial block transitions, the
stratified one-sided CMH test, the square-root adaptive randomization rule,
and the single- vs two-block closed forms used for picking the failure weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtri


class InvalidConfigError(ValueError):
    """A solver/estimator configuration that cannot define the model."""


class InvalidHistoryError(ValueError):
    """A trial history violating its structural invariants."""


class InvalidStratumError(ValueError):
    """A per-block 2x2 table that no trial block can produce."""


class InfeasibleActionError(ValueError):
    """A block action that cannot be taken from the given state."""


DEFAULT_ALLOCATIONS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


def round_half_away(x: float) -> int:
    """Round to the nearest integer with halves going away from zero.

    Values are snapped to a 1e-9 decimal grid first so that products like
    35 * 0.3 (binary 10.499999...) round the way their decimal intent does.
    """
    snapped = round(x * 1e9) / 1e9
    if snapped >= 0.0:
        return int(math.floor(snapped + 0.5))
    return -int(math.floor(-snapped + 0.5))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContingencyState:
    """Cumulative 2x2 table: per-arm assignments and successes."""

    n_assigned_a: int
    n_success_a: int
    n_assigned_b: int
    n_success_b: int

    def __post_init__(self) -> None:
        for name in ("n_assigned_a", "n_success_a", "n_assigned_b", "n_success_b"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise InvalidStratumError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.n_success_a > self.n_assigned_a or self.n_success_b > self.n_assigned_b:
            raise InvalidStratumError(f"successes exceed assignments in {self.as_tuple()}")

    @property
    def total(self) -> int:
        return self.n_assigned_a + self.n_assigned_b

    @property
    def successes(self) -> int:
        return self.n_success_a + self.n_success_b

    @property
    def failures(self) -> int:
        return self.total - self.successes

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n_assigned_a, self.n_success_a, self.n_assigned_b, self.n_success_b)

    def add(self, stratum: "ContingencyState") -> "ContingencyState":
        return ContingencyState(
            self.n_assigned_a + stratum.n_assigned_a,
            self.n_success_a + stratum.n_success_a,
            self.n_assigned_b + stratum.n_assigned_b,
            self.n_success_b + stratum.n_success_b,
        )

    def minus(self, previous: "ContingencyState") -> "ContingencyState":
        """Per-block increment between two cumulative tables."""
        try:
            return ContingencyState(
                self.n_assigned_a - previous.n_assigned_a,
                self.n_success_a - previous.n_success_a,
                self.n_assigned_b - previous.n_assigned_b,
                self.n_success_b - previous.n_success_b,
            )
        except InvalidStratumError as exc:
            raise InvalidHistoryError(f"state {self.as_tuple()} does not dominate {previous.as_tuple()}") from exc


EMPTY_STATE = ContingencyState(0, 0, 0, 0)

# A stratum is the same four counts, read as a single block's (non-cumulative) table.
StratumTable = ContingencyState


@dataclass(frozen=True)
class BlockAction:
    """Next block's size and allocation fraction; assignment is exact (no replacement)."""

    block_size: int
    allocation: float

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise InfeasibleActionError(f"block_size must be >= 1, got {self.block_size}")
        if not 0.0 < self.allocation < 1.0:
            raise InfeasibleActionError(f"allocation must lie in (0,1), got {self.allocation}")
        if self.assigned_a < 1 or self.assigned_b < 1:
            raise InfeasibleActionError(
                f"action (T={self.block_size}, phi={self.allocation}) leaves an arm empty"
            )

    @property
    def assigned_a(self) -> int:
        return round_half_away(self.block_size * self.allocation)

    @property
    def assigned_b(self) -> int:
        return self.block_size - self.assigned_a


@dataclass(frozen=True)
class SolverConfig:
    """Full problem definition for one trial design.

    smoothing holds the four Beta pseudo-counts (gamma_a1, gamma_a0,
    gamma_b1, gamma_b0). min_block <= 0 requests the default ceil(N/8).
    """

    n_patients: int
    failure_weight: float
    block_cost: float
    allocation_set: tuple[float, ...] = DEFAULT_ALLOCATIONS
    min_block: int = 0
    block_increment: int = 2
    smoothing: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.n_patients < 1:
            raise InvalidConfigError(f"n_patients must be >= 1, got {self.n_patients}")
        if self.failure_weight < 0 or self.block_cost < 0:
            raise InvalidConfigError("failure_weight and block_cost must be nonnegative")
        if self.min_block <= 0:
            object.__setattr__(self, "min_block", math.ceil(self.n_patients / 8))
        if not 1 <= self.min_block <= self.n_patients:
            raise InvalidConfigError(f"min_block must lie in [1, N], got {self.min_block}")
        if self.block_increment < 1:
            raise InvalidConfigError(f"block_increment must be >= 1, got {self.block_increment}")
        allocs = tuple(sorted(set(float(p) for p in self.allocation_set)))
        if not allocs or not all(0.0 < p < 1.0 for p in allocs):
            raise InvalidConfigError(f"allocation_set must be nonempty fractions in (0,1), got {self.allocation_set}")
        object.__setattr__(self, "allocation_set", allocs)
        gammas = tuple(float(g) for g in self.smoothing)
        if len(gammas) != 4 or any(g < 0 for g in gammas):
            raise InvalidConfigError(f"smoothing must be four nonnegative reals, got {self.smoothing}")
        object.__setattr__(self, "smoothing", gammas)


@dataclass(frozen=True)
class TrialHistory:
    """Sequence of cumulative states from the empty table to the full trial.

    actions, when present, carry the solver's block choices; observational
    designs (per-patient randomization, Bernoulli block fills) record states
    only, since their realized allocations need not come from any action set.
    """

    states: tuple[ContingencyState, ...]
    actions: tuple[BlockAction, ...] | None = None

    def __post_init__(self) -> None:
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if len(states) < 2:
            raise InvalidHistoryError("a history needs the empty state plus at least one block")
        if states[0] != EMPTY_STATE:
            raise InvalidHistoryError(f"histories start at the empty table, got {states[0].as_tuple()}")
        for prev, cur in zip(states, states[1:]):
            stratum = cur.minus(prev)  # raises if cur does not dominate prev
            if stratum.total < 1:
                raise InvalidHistoryError("every block must treat at least one patient")
        if self.actions is not None:
            actions = tuple(self.actions)
            object.__setattr__(self, "actions", actions)
            if len(actions) != len(states) - 1:
                raise InvalidHistoryError(
                    f"{len(actions)} actions for {len(states) - 1} transitions"
                )
            for k, (prev, cur, act) in enumerate(zip(states, states[1:], actions)):
                stratum = cur.minus(prev)
                if (stratum.n_assigned_a, stratum.n_assigned_b) != (act.assigned_a, act.assigned_b):
                    raise InvalidHistoryError(
                        f"block {k + 1} arm counts {stratum.as_tuple()} do not match action "
                        f"(T={act.block_size}, phi={act.allocation})"
                    )

    @property
    def num_blocks(self) -> int:
        return len(self.states) - 1

    @property
    def final_state(self) -> ContingencyState:
        return self.states[-1]

    def strata(self) -> tuple[StratumTable, ...]:
        """Per-block (non-cumulative) tables."""
        return tuple(cur.minus(prev) for prev, cur in zip(self.states, self.states[1:]))


# ---------------------------------------------------------------------------
# Estimators and utility
# ---------------------------------------------------------------------------

def map_estimate(successes: int, assigned: int, gamma1: float = 1.0, gamma0: float = 1.0) -> float:
    """Posterior-mode success rate (successes + g1) / (assigned + g1 + g0)."""
    if not 0 <= successes <= assigned:
        raise InvalidStratumError(f"need 0 <= successes <= assigned, got {successes}/{assigned}")
    denom = assigned + gamma1 + gamma0
    if denom <= 0:
        raise InvalidConfigError("estimate undefined: no observations and zero smoothing")
    return (successes + gamma1) / denom


def smoothed_rates(state: ContingencyState, smoothing: tuple[float, float, float, float]) -> tuple[float, float]:
    """Smoothed per-arm success-rate estimates for a cumulative table."""
    ga1, ga0, gb1, gb0 = smoothing
    return (
        map_estimate(state.n_success_a, state.n_assigned_a, ga1, ga0),
        map_estimate(state.n_success_b, state.n_assigned_b, gb1, gb0),
    )


def harmonic_weight(assigned_a: int, assigned_b: int) -> float:
    """Half the harmonic mean of the two arm sizes; 0 when an arm is empty."""
    if assigned_a < 0 or assigned_b < 0 or assigned_a + assigned_b < 1:
        raise InvalidStratumError(f"stratum arms ({assigned_a}, {assigned_b}) are invalid")
    if assigned_a == 0 or assigned_b == 0:
        return 0.0
    return assigned_a * assigned_b / (assigned_a + assigned_b)


def combined_variance(p_a: float, p_b: float) -> float:
    """Averaged-rate variance proxy (p_a+p_b)/2 * (q_a+q_b)/2.

    Deliberately neutral between the arms: weighting the variance by the
    allocation mix (expected-statistic style) rewards piling patients on the
    arm with the more extreme rate, while the mean/std form rewards the arm
    nearer one half. Averaging the rates first has neither pull, so the
    power surrogate built on it does not bias the allocation by itself.
    """
    return 0.5 * (p_a + p_b) * 0.5 * ((1.0 - p_a) + (1.0 - p_b))


def power_proxy(history: TrialHistory, cfg: SolverConfig) -> float:
    """Power surrogate: weighted sum of per-block precision terms, scaled by 1/N.

    Each block contributes its harmonic weight divided by the combined
    variance of the *cumulative* smoothed estimates right after that block.
    """
    total = 0.0
    for stratum, state in zip(history.strata(), history.states[1:]):
        w = harmonic_weight(stratum.n_assigned_a, stratum.n_assigned_b)
        if w == 0.0:
            continue
        p_a, p_b = smoothed_rates(state, cfg.smoothing)
        total += w / combined_variance(p_a, p_b)
    return total / cfg.n_patients


def failure_score(final_state: ContingencyState, cfg: SolverConfig) -> float:
    """Failure penalty (N_a - N_b) * (p_b - p_a) / N on the final table."""
    p_a, p_b = smoothed_rates(final_state, cfg.smoothing)
    return (final_state.n_assigned_a - final_state.n_assigned_b) * (p_b - p_a) / cfg.n_patients


def utility(history: TrialHistory, cfg: SolverConfig) -> float:
    """Trial utility: power proxy minus weighted failures minus per-block cost."""
    if history.final_state.total != cfg.n_patients:
        raise InvalidHistoryError(
            f"history ends at {history.final_state.total} observations, config expects {cfg.n_patients}"
        )
    return (
        power_proxy(history, cfg)
        - cfg.failure_weight * failure_score(history.final_state, cfg)
        - cfg.block_cost * history.num_blocks
    )


def reward(action: BlockAction, next_state: ContingencyState, cfg: SolverConfig) -> float:
    """One block's contribution to the utility, given the cumulative table it produced.

    Subtracts the block cost always and the failure penalty only at the end
    of the trial, so rewards telescope exactly to the history utility.
    """
    if next_state.total > cfg.n_patients:
        raise InfeasibleActionError(
            f"state total {next_state.total} exceeds trial size {cfg.n_patients}"
        )
    w = harmonic_weight(action.assigned_a, action.assigned_b)
    p_a, p_b = smoothed_rates(next_state, cfg.smoothing)
    r = w / (cfg.n_patients * combined_variance(p_a, p_b)) - cfg.block_cost
    if next_state.total == cfg.n_patients:
        r -= cfg.failure_weight * failure_score(next_state, cfg)
    return r


# ---------------------------------------------------------------------------
# Block transition distribution
# ---------------------------------------------------------------------------

def beta_binomial_pmf(n: int, alpha: float, beta: float) -> np.ndarray:
    """pmf over k = 0..n of the Beta-Binomial(n, alpha, beta), via log-gamma."""
    if alpha <= 0 or beta <= 0:
        raise InvalidConfigError(f"Beta parameters must be positive, got ({alpha}, {beta})")
    k = np.arange(n + 1)
    log_pmf = (
        gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        + gammaln(k + alpha) + gammaln(n - k + beta) - gammaln(n + alpha + beta)
        - (gammaln(alpha) + gammaln(beta) - gammaln(alpha + beta))
    )
    return np.exp(log_pmf)


def arm_posterior_pmf(n_draws: int, successes: int, assigned: int, gamma1: float, gamma0: float) -> np.ndarray:
    """Posterior-predictive pmf of block successes for one arm."""
    return beta_binomial_pmf(n_draws, successes + gamma1, assigned - successes + gamma0)


def transition_pmf(
    state: ContingencyState, action: BlockAction, cfg: SolverConfig
) -> list[tuple[float, ContingencyState]]:
    """All successor states of (state, action) with their probabilities.

    Arm success counts are independent Beta-Binomials parameterized by the
    cumulative table, so the support is the full (assigned_a+1) x
    (assigned_b+1) grid.
    """
    if state.total + action.block_size > cfg.n_patients:
        raise InfeasibleActionError(
            f"action of size {action.block_size} overruns the trial from total {state.total}"
        )
    ga1, ga0, gb1, gb0 = cfg.smoothing
    pmf_a = arm_posterior_pmf(action.assigned_a, state.n_success_a, state.n_assigned_a, ga1, ga0)
    pmf_b = arm_posterior_pmf(action.assigned_b, state.n_success_b, state.n_assigned_b, gb1, gb0)
    out = []
    for k_a in range(action.assigned_a + 1):
        for k_b in range(action.assigned_b + 1):
            successor = ContingencyState(
                state.n_assigned_a + action.assigned_a,
                state.n_success_a + k_a,
                state.n_assigned_b + action.assigned_b,
                state.n_success_b + k_b,
            )
            out.append((float(pmf_a[k_a] * pmf_b[k_b]), successor))
    return out


# ---------------------------------------------------------------------------
# Final analysis: stratified one-sided CMH test
# ---------------------------------------------------------------------------

def cmh_statistic(strata: list[StratumTable] | tuple[StratumTable, ...]) -> float | None:
    """Stratified CMH statistic; None when the null variance degenerates.

    Per-stratum effects use raw observed rates. Strata with an empty arm
    carry zero weight in both the numerator and the variance.
    """
    num = 0.0
    var = 0.0
    for s in strata:
        if s.n_assigned_a == 0 or s.n_assigned_b == 0:
            continue
        w = harmonic_weight(s.n_assigned_a, s.n_assigned_b)
        d = s.n_success_a / s.n_assigned_a - s.n_success_b / s.n_assigned_b
        pooled = s.successes / s.total
        num += w * d
        var += w * pooled * (1.0 - pooled)
    if var <= 0.0:
        return None
    return num / math.sqrt(var)


def normal_quantile(p: float) -> float:
    """Standard normal quantile (scipy's Cephes rational approximation)."""
    if not 0.0 < p < 1.0:
        raise InvalidConfigError(f"quantile probability must lie in (0,1), got {p}")
    return float(ndtri(p))


def cmh_test_one_sided(strata, alpha: float) -> bool:
    """Reject the one-sided null (arm A not better) at level alpha.

    A degenerate statistic (all pooled outcomes identical) never rejects.
    """
    if not 0.0 < alpha <= 0.5:
        raise InvalidConfigError(f"alpha must lie in (0, 0.5], got {alpha}")
    stat = cmh_statistic(strata)
    return stat is not None and stat >= normal_quantile(1.0 - alpha)


# ---------------------------------------------------------------------------
# Baseline randomization rule and the one- vs two-block closed forms
# ---------------------------------------------------------------------------

def rar_probability(p_hat_a: float, p_hat_b: float) -> float:
    """Square-root allocation rule: P(assign to A) given rate estimates."""
    if p_hat_a <= 0 and p_hat_b <= 0:
        raise InvalidConfigError("rar_probability needs a positive rate estimate (pass smoothed rates)")
    ra, rb = math.sqrt(p_hat_a), math.sqrt(p_hat_b)
    return ra / (ra + rb)


def single_block_utility(p_a: float, p_b: float, block_cost: float) -> float:
    """Utility of a one-block 1:1 trial with known success rates."""
    return 1.0 / ((p_a + p_b) * ((1.0 - p_a) + (1.0 - p_b))) - block_cost


def two_block_utility(
    p_a: float, p_b: float, n: int, t: int, phi: float,
    failure_weight: float, block_cost: float,
) -> float:
    """Utility of a two-block trial: balanced block of t, then phi-allocated n-t.

    The second block contributes 4*phi*(1-phi) per patient to the precision
    term (its harmonic weight over the quarter-scaled variance), so at
    phi = 1/2 this reduces to the one-block value minus one extra block cost.
    """
    if not 0 < t < n:
        raise InvalidConfigError(f"first block size must satisfy 0 < t < n, got t={t}, n={n}")
    if not 0.0 < phi < 1.0:
        raise InvalidConfigError(f"allocation must lie in (0,1), got {phi}")
    pq = (p_a + p_b) * ((1.0 - p_a) + (1.0 - p_b))
    precision = (t + 4.0 * (n - t) * phi * (1.0 - phi)) / (n * pq)
    failures = failure_weight / n * (2.0 * phi - 1.0) * (n - t) * (p_a - p_b)
    return precision + failures - 2.0 * block_cost


def lambda_f_threshold(p_a: float, p_b: float, n: int, t: int, block_cost: float) -> float:
    """Smallest failure weight at which some two-block trial can beat one block."""
    if p_a <= p_b:
        raise InvalidConfigError(f"threshold requires p_a > p_b, got ({p_a}, {p_b})")
    if not 0 < t < n:
        raise InvalidConfigError(f"first block size must satisfy 0 < t < n, got t={t}, n={n}")
    pq = (p_a + p_b) * ((1.0 - p_a) + (1.0 - p_b))
    return 2.0 / (p_a - p_b) * math.sqrt(n * block_cost / ((n - t) * pq))


def count_states(i: int) -> int:
    """Number of 2x2 tables holding exactly i observations."""
    if i < 0:
        raise InvalidConfigError(f"observation count must be nonnegative, got {i}")
    return (i + 1) * (i + 2) * (i + 3) // 6
