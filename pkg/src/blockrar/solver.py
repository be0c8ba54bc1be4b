"""Backward-induction solver over the pruned contingency-table state space.

States with the same running total form a level; the min-block / increment
pruning fixes the set of allowed levels, and every block action jumps from
one allowed level to a later one. The sweep walks levels from the end of the
trial backward, evaluating the optimal expected remaining utility of every
reachable table via vectorized Beta-Binomial expectations.

A deliberately plain top-down recursion (`brute_force_value`) serves as the
exhaustive oracle for small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import (
    EMPTY_STATE,
    BlockAction,
    ContingencyState,
    InvalidConfigError,
    SolverConfig,
    count_states,
    harmonic_weight,
    reward,
    round_half_away,
    transition_pmf,
)


class SolverCapacityError(RuntimeError):
    """Pruned state space does not fit the configured memory budget."""


class OracleCapacityError(RuntimeError):
    """Instance too large for the exhaustive oracle."""


class PolicyLookupError(LookupError):
    """State has no entry in the policy; `reason` says why."""

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason  # "terminal" | "off-schedule" | "unreachable"


# ---------------------------------------------------------------------------
# Level schedule and action feasibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSchedule:
    """Allowed cumulative totals, plus the subset from which N stays reachable."""

    levels: tuple[int, ...]
    viable: frozenset[int]


def arm_split(block_size: int, allocation: float) -> tuple[int, int]:
    """Exact (arm A, arm B) assignment counts for a block."""
    a = round_half_away(block_size * allocation)
    return a, block_size - a


def _split_ok(block_size: int, allocation: float) -> bool:
    a, b = arm_split(block_size, allocation)
    return a >= 1 and b >= 1


def enumerate_levels(cfg: SolverConfig) -> LevelSchedule:
    """Allowed totals: 0, N, and increment multiples in [min_block, N - min_block].

    A level is viable when some feasible action chain from it reaches N;
    jumping onto a non-viable level would strand the trial, so actions are
    restricted to viable targets.
    """
    n, t_min, kappa = cfg.n_patients, cfg.min_block, cfg.block_increment
    interior = [i for i in range(t_min, n - t_min + 1) if i % kappa == 0 and 0 < i < n]
    levels = tuple(sorted({0, *interior, n}))
    viable = {n}
    for i in reversed(levels[:-1]):
        for j in levels:
            if j <= i or j - i < t_min or j not in viable:
                continue
            if any(_split_ok(j - i, phi) for phi in cfg.allocation_set):
                viable.add(i)
                break
    return LevelSchedule(levels=levels, viable=frozenset(viable))


def _jumps(total: int, schedule: LevelSchedule, cfg: SolverConfig) -> list[tuple[int, int, float]]:
    """Feasible (block_size, alloc_index, allocation) triples from a total."""
    out = []
    for j in schedule.levels:
        if j <= total or j - total < cfg.min_block or j not in schedule.viable:
            continue
        for idx, phi in enumerate(cfg.allocation_set):
            if _split_ok(j - total, phi):
                out.append((j - total, idx, phi))
    return out


def feasible_actions(state: ContingencyState, schedule: LevelSchedule, cfg: SolverConfig) -> list[BlockAction]:
    """Actions available at a state (depends only on its total)."""
    return [BlockAction(t, phi) for t, _, phi in _jumps(state.total, schedule, cfg)]


def _preference_order(jumps: list[tuple[int, int, float]]) -> list[tuple[int, int, float]]:
    # Tie-break among equal-valued actions: larger block, then allocation
    # nearest 1:1, then the smaller allocation. The sweep keeps the first
    # strictly-better action, so evaluation order encodes the preference.
    return sorted(jumps, key=lambda j: (-j[0], abs(j[2] - 0.5), j[2]))


# ---------------------------------------------------------------------------
# Policy container
# ---------------------------------------------------------------------------

@dataclass
class LevelSlice:
    """Per-(level, N_A) tables over (n_a, n_b): optimal value and action."""

    values: np.ndarray       # float64, shape (N_A+1, N_B+1)
    block_size: np.ndarray   # int32
    alloc_index: np.ndarray  # int16


@dataclass
class Policy:
    """Optimal action and expected remaining utility for every reachable state."""

    config: SolverConfig
    schedule: LevelSchedule
    tables: dict[int, dict[int, LevelSlice]]  # level -> N_A -> slice
    allocated_states: int

    def _slice(self, state: ContingencyState) -> LevelSlice:
        total = state.total
        if total == self.config.n_patients:
            raise PolicyLookupError("terminal state has no action", reason="terminal")
        if total not in self.tables:
            raise PolicyLookupError(f"total {total} is not an allowed level", reason="off-schedule")
        sl = self.tables[total].get(state.n_assigned_a)
        if sl is None:
            raise PolicyLookupError(
                f"table {state.as_tuple()} is unreachable under this policy", reason="unreachable"
            )
        return sl

    def lookup_action(self, state: ContingencyState) -> BlockAction:
        sl = self._slice(state)
        t = int(sl.block_size[state.n_success_a, state.n_success_b])
        idx = int(sl.alloc_index[state.n_success_a, state.n_success_b])
        return BlockAction(t, self.config.allocation_set[idx])

    def value_at(self, state: ContingencyState) -> float:
        """Optimal expected remaining utility; 0 at terminal states."""
        if state.total == self.config.n_patients:
            return 0.0
        sl = self._slice(state)
        return float(sl.values[state.n_success_a, state.n_success_b])

    @property
    def start_value(self) -> float:
        return self.value_at(EMPTY_STATE)

    @property
    def entry_count(self) -> int:
        return sum(sl.values.size for by_arm in self.tables.values() for sl in by_arm.values())

    def entries(self):
        """Yield (state, action, value) in canonical (total, N_A, n_a, n_b) order."""
        for total in sorted(self.tables):
            by_arm = self.tables[total]
            for n_arm_a in sorted(by_arm):
                sl = by_arm[n_arm_a]
                n_arm_b = total - n_arm_a
                for n_a in range(n_arm_a + 1):
                    for n_b in range(n_arm_b + 1):
                        state = ContingencyState(n_arm_a, n_a, n_arm_b, n_b)
                        action = BlockAction(
                            int(sl.block_size[n_a, n_b]),
                            self.config.allocation_set[int(sl.alloc_index[n_a, n_b])],
                        )
                        yield state, action, float(sl.values[n_a, n_b])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Policy):
            return NotImplemented
        if self.config != other.config:
            return False
        if sorted(self.tables) != sorted(other.tables):
            return False
        for total, by_arm in self.tables.items():
            if sorted(by_arm) != sorted(other.tables[total]):
                return False
            for n_arm_a, sl in by_arm.items():
                ot = other.tables[total][n_arm_a]
                if not (
                    np.array_equal(sl.values, ot.values)
                    and np.array_equal(sl.block_size, ot.block_size)
                    and np.array_equal(sl.alloc_index, ot.alloc_index)
                ):
                    return False
        return True


# ---------------------------------------------------------------------------
# Backward-induction sweep
# ---------------------------------------------------------------------------

def _pmf_matrix(n_draws: int, n_arm: int, g1: float, g0: float, cache: dict) -> np.ndarray:
    """Rows: prior successes 0..n_arm; cols: Beta-Binomial pmf over 0..n_draws."""
    key = (n_draws, n_arm, g1, g0)
    got = cache.get(key)
    if got is not None:
        return got
    c = np.arange(n_arm + 1, dtype=np.float64)[:, None]
    k = np.arange(n_draws + 1, dtype=np.float64)[None, :]
    alpha = c + g1
    beta = (n_arm - c) + g0
    log_pmf = (
        gammaln(n_draws + 1) - gammaln(k + 1) - gammaln(n_draws - k + 1)
        + gammaln(k + alpha) + gammaln(n_draws - k + beta) - gammaln(n_draws + alpha + beta)
        - gammaln(alpha) - gammaln(beta) + gammaln(alpha + beta)
    )
    out = np.exp(log_pmf)
    cache[key] = out
    return out


def _contract(stack: np.ndarray, pmf_a: np.ndarray, pmf_b: np.ndarray) -> np.ndarray:
    """Expectation of successor arrays over the two independent arm pmfs.

    stack has shape (2, N_A'+1, N_B'+1) indexed by successor success counts;
    the result has shape (2, N_A+1, N_B+1) indexed by current counts. Plain
    shifted multiply-adds keep the reduction order fixed (bit-reproducible
    regardless of BLAS threading).
    """
    n_arm_a, draws_a = pmf_a.shape[0] - 1, pmf_a.shape[1] - 1
    n_arm_b, draws_b = pmf_b.shape[0] - 1, pmf_b.shape[1] - 1
    part = np.zeros((2, n_arm_a + draws_a + 1, n_arm_b + 1))
    for kb in range(draws_b + 1):
        part += stack[:, :, kb:kb + n_arm_b + 1] * pmf_b[None, None, :, kb]
    out = np.zeros((2, n_arm_a + 1, n_arm_b + 1))
    for ka in range(draws_a + 1):
        out += part[:, ka:ka + n_arm_a + 1, :] * pmf_a[None, :, ka, None]
    return out


def estimate_memory_bytes(cfg: SolverConfig) -> int:
    """Rough peak footprint of the sweep's per-state tables."""
    schedule = enumerate_levels(cfg)
    interior = schedule.levels[1:-1]
    stored = 1 + sum(count_states(i) for i in interior)
    # value + action tables, successor stacks, and slack for transients
    return stored * (8 + 4 + 2) + (stored + count_states(cfg.n_patients)) * 16 + (1 << 20)


def solve(
    cfg: SolverConfig,
    memory_budget_bytes: int = 4 << 30,
    progress=None,
) -> Policy:
    """Optimal policy by backward induction over the pruned state space.

    `progress`, when given, is called as progress(level, states_done,
    states_total) after each completed level.
    """
    need = estimate_memory_bytes(cfg)
    if need > memory_budget_bytes:
        raise SolverCapacityError(
            f"estimated {need} bytes exceeds budget {memory_budget_bytes} "
            f"(n_patients={cfg.n_patients}, min_block={cfg.min_block}, "
            f"block_increment={cfg.block_increment})"
        )
    schedule = enumerate_levels(cfg)
    if 0 not in schedule.viable:
        raise InvalidConfigError(
            "no feasible block sequence covers the trial; widen allocation_set or shrink min_block"
        )
    n = cfg.n_patients
    ga1, ga0, gb1, gb0 = cfg.smoothing
    lam_f, lam_k = cfg.failure_weight, cfg.block_cost
    interior = [lv for lv in schedule.levels if 0 < lv < n]
    allocated = 1 + sum(count_states(i) for i in interior)

    # Forward reachability: which (level, N_A) slices can the trial visit.
    jumps_at = {lv: _jumps(lv, schedule, cfg) for lv in schedule.levels[:-1]}
    reach: dict[int, set[int]] = {0: {0}}
    for lv in schedule.levels[:-1]:
        arms = reach.get(lv)
        if not arms:
            continue
        for t, _, phi in jumps_at[lv]:
            a, _b = arm_split(t, phi)
            target = reach.setdefault(lv + t, set())
            target.update(n_arm_a + a for n_arm_a in arms)

    # Dense per-level storage (every table the level can hold, matching the
    # reported state accounting); only reachable slices are evaluated, the
    # rest stay NaN / -1.
    values: dict[int, list[np.ndarray]] = {}
    blocks: dict[int, list[np.ndarray]] = {}
    allocs: dict[int, list[np.ndarray]] = {}
    for lv in (0, *interior):
        values[lv] = [np.full((a + 1, lv - a + 1), np.nan) for a in range(lv + 1)]
        blocks[lv] = [np.full((a + 1, lv - a + 1), -1, dtype=np.int32) for a in range(lv + 1)]
        allocs[lv] = [np.full((a + 1, lv - a + 1), -1, dtype=np.int16) for a in range(lv + 1)]

    pmf_cache: dict = {}
    stack_cache: dict[tuple[int, int], np.ndarray] = {}

    def successor_stack(level: int, n_arm_a: int) -> np.ndarray:
        got = stack_cache.get((level, n_arm_a))
        if got is not None:
            return got
        n_arm_b = level - n_arm_a
        p_a = (np.arange(n_arm_a + 1) + ga1) / (n_arm_a + ga1 + ga0)
        p_b = (np.arange(n_arm_b + 1) + gb1) / (n_arm_b + gb1 + gb0)
        pq = 0.25 * np.add.outer(p_a, p_b) * np.add.outer(1.0 - p_a, 1.0 - p_b)
        precision = 1.0 / pq
        if level == n:
            tail = -lam_f * (n_arm_a - n_arm_b) * (p_b[None, :] - p_a[:, None]) / n
        else:
            tail = values[level][n_arm_a]
        out = np.stack([precision, tail])
        stack_cache[(level, n_arm_a)] = out
        return out

    states_total = sum(
        (n_arm_a + 1) * (lv - n_arm_a + 1)
        for lv in (0, *interior)
        for n_arm_a in reach.get(lv, ())
    )
    states_done = 0
    for lv in reversed((0, *interior)):
        arms = reach.get(lv)
        if not arms:
            continue
        ordered = _preference_order(jumps_at[lv])
        for n_arm_a in sorted(arms):
            n_arm_b = lv - n_arm_a
            best = np.full((n_arm_a + 1, n_arm_b + 1), -np.inf)
            best_t = blocks[lv][n_arm_a]
            best_phi = allocs[lv][n_arm_a]
            for t, phi_idx, phi in ordered:
                a, b = arm_split(t, phi)
                pmf_a = _pmf_matrix(a, n_arm_a, ga1, ga0, pmf_cache)
                pmf_b = _pmf_matrix(b, n_arm_b, gb1, gb0, pmf_cache)
                stack = successor_stack(lv + t, n_arm_a + a)
                expect = _contract(stack, pmf_a, pmf_b)
                q = (harmonic_weight(a, b) / n) * expect[0] + expect[1] - lam_k
                better = q > best
                best = np.where(better, q, best)
                np.copyto(best_t, t, where=better)
                np.copyto(best_phi, phi_idx, where=better)
            values[lv][n_arm_a] = best
            states_done += best.size
        if progress is not None:
            progress(lv, states_done, states_total)

    tables: dict[int, dict[int, LevelSlice]] = {}
    for lv in (0, *interior):
        arms = reach.get(lv)
        if not arms:
            continue
        tables[lv] = {
            n_arm_a: LevelSlice(
                values=values[lv][n_arm_a],
                block_size=blocks[lv][n_arm_a],
                alloc_index=allocs[lv][n_arm_a],
            )
            for n_arm_a in sorted(arms)
        }
    return Policy(config=cfg, schedule=schedule, tables=tables, allocated_states=allocated)


def action_value(policy: Policy, state: ContingencyState, action: BlockAction) -> float:
    """E[reward + stored successor value] for one action, from the policy tables."""
    cfg = policy.config
    return sum(
        p * (reward(action, successor, cfg) + policy.value_at(successor))
        for p, successor in transition_pmf(state, action, cfg)
    )


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

def brute_force_value(
    cfg: SolverConfig,
    state: ContingencyState = EMPTY_STATE,
    state_cap: int = 100_000,
) -> float:
    """Optimal expected remaining utility by direct top-down recursion.

    Independent of the sweep: scalar log-gamma pmfs, plain dict memo over
    state tuples, no level ordering. Only for small instances.
    """
    n, t_min, kappa = cfg.n_patients, cfg.min_block, cfg.block_increment
    interior = [i for i in range(t_min, n - t_min + 1) if i % kappa == 0 and 0 < i < n]
    levels = sorted({0, *interior, n})
    pruned = 1 + sum(count_states(i) for i in interior)
    if pruned > state_cap:
        raise OracleCapacityError(f"{pruned} pruned states exceed the oracle cap {state_cap}")

    viable = {n}
    for i in reversed(levels[:-1]):
        for j in levels:
            if j > i and j - i >= t_min and j in viable and any(
                _split_ok(j - i, phi) for phi in cfg.allocation_set
            ):
                viable.add(i)
                break

    ga1, ga0, gb1, gb0 = cfg.smoothing

    def arm_pmf(draws: int, successes: int, assigned: int, g1: float, g0: float) -> list[float]:
        alpha = successes + g1
        beta = assigned - successes + g0
        base = math.lgamma(alpha + beta) - math.lgamma(alpha) - math.lgamma(beta)
        out = []
        for k in range(draws + 1):
            log_p = (
                math.lgamma(draws + 1) - math.lgamma(k + 1) - math.lgamma(draws - k + 1)
                + math.lgamma(k + alpha) + math.lgamma(draws - k + beta)
                - math.lgamma(draws + alpha + beta) + base
            )
            out.append(math.exp(log_p))
        return out

    memo: dict[tuple[int, int, int, int], float] = {}

    def value(st: ContingencyState) -> float:
        if st.total == n:
            return 0.0
        key = st.as_tuple()
        got = memo.get(key)
        if got is not None:
            return got
        best = -math.inf
        for j in levels:
            t = j - st.total
            if t < t_min or j not in viable or j <= st.total:
                continue
            for phi in cfg.allocation_set:
                if not _split_ok(t, phi):
                    continue
                action = BlockAction(t, phi)
                pmf_a = arm_pmf(action.assigned_a, st.n_success_a, st.n_assigned_a, ga1, ga0)
                pmf_b = arm_pmf(action.assigned_b, st.n_success_b, st.n_assigned_b, gb1, gb0)
                expected = 0.0
                for k_a, pa in enumerate(pmf_a):
                    for k_b, pb in enumerate(pmf_b):
                        succ = ContingencyState(
                            st.n_assigned_a + action.assigned_a,
                            st.n_success_a + k_a,
                            st.n_assigned_b + action.assigned_b,
                            st.n_success_b + k_b,
                        )
                        expected += pa * pb * (reward(action, succ, cfg) + value(succ))
                best = max(best, expected)
        if best == -math.inf:
            raise InvalidConfigError(f"state {st.as_tuple()} has no feasible action")
        memo[key] = best
        return best

    return value(state)
