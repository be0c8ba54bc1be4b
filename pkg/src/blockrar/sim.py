"""Monte-Carlo evaluation of trial designs under true success probabilities.

Implements the four designs under comparison (fixed 1:1, per-patient
adaptive randomization, two-block adaptive randomization, and solved-policy
trials), the per-scenario metric reduction, parameter sweeps over the
failure/block weights, and sample-size calibration for the fixed design.

Every simulated trial draws from its own counter-based substream keyed by
(seed, trial index), and the metric reduction is order-insensitive (exact
sums plus a final sort for percentiles), so results do not depend on
execution order or degree of parallelism.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import (
    EMPTY_STATE,
    BlockAction,
    ContingencyState,
    InvalidConfigError,
    SolverConfig,
    TrialHistory,
    cmh_test_one_sided,
    map_estimate,
    normal_quantile,
    rar_probability,
    round_half_away,
    utility,
)
from .solver import Policy, SolverCapacityError, solve

FIXED = "fixed-1:1"
RAR = "traditional-RAR"
BRAR = "blocked-RAR-2"
MDP = "mdp-policy"
DESIGN_KINDS = (FIXED, RAR, BRAR, MDP)


class DesignMismatchError(ValueError):
    """Design and scenario disagree (e.g. policy solved for a different N)."""


class NoPowerError(ValueError):
    """Sample-size search is impossible for the requested scenario."""


@dataclass(frozen=True)
class Scenario:
    p_a: float
    p_b: float
    n_patients: int
    n_sims: int = 10_000
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.p_a < 1.0 and 0.0 < self.p_b < 1.0):
            raise InvalidConfigError(f"success probabilities must lie in (0,1), got ({self.p_a}, {self.p_b})")
        if self.n_patients < 2:
            raise InvalidConfigError("a trial needs at least 2 patients")
        if self.n_sims < 1:
            raise InvalidConfigError("n_sims must be >= 1")
        if not 0.0 < self.alpha <= 0.5:
            raise InvalidConfigError(f"alpha must lie in (0, 0.5], got {self.alpha}")
        if self.seed < 0:
            raise InvalidConfigError("seed must be a nonnegative 64-bit integer")


@dataclass(frozen=True)
class DesignSpec:
    kind: str
    policy: Policy | None = None
    burn_in_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in DESIGN_KINDS:
            raise InvalidConfigError(f"unknown design kind {self.kind!r}; expected one of {DESIGN_KINDS}")
        if self.kind == MDP and self.policy is None:
            raise InvalidConfigError("mdp-policy designs require a solved policy")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise InvalidConfigError(f"burn_in_fraction must lie in [0,1), got {self.burn_in_fraction}")


@dataclass(frozen=True)
class ScenarioMetrics:
    rejection_rate: float
    effect_bias: float
    alloc_diff_mean: float
    alloc_diff_p5: float
    alloc_diff_p95: float
    mean_blocks: float
    utility_mean: float
    utility_sd: float


METRIC_FIELDS = tuple(f.name for f in fields(ScenarioMetrics))


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Independent counter-based stream for one simulated trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial_index])))


# ---------------------------------------------------------------------------
# Single-trial simulation
# ---------------------------------------------------------------------------

def _check_pairing(design: DesignSpec, scenario: Scenario) -> None:
    if design.kind == MDP and design.policy.config.n_patients != scenario.n_patients:
        raise DesignMismatchError(
            f"policy solved for N={design.policy.config.n_patients}, scenario has N={scenario.n_patients}"
        )


def simulate_trial(design: DesignSpec, scenario: Scenario, rng: np.random.Generator) -> TrialHistory:
    """One simulated trial under the given design; returns its history."""
    _check_pairing(design, scenario)
    n, p_a, p_b = scenario.n_patients, scenario.p_a, scenario.p_b

    if design.kind == FIXED:
        arm_a = n // 2
        arm_b = n - arm_a
        final = ContingencyState(arm_a, int(rng.binomial(arm_a, p_a)), arm_b, int(rng.binomial(arm_b, p_b)))
        return TrialHistory(states=(EMPTY_STATE, final))

    if design.kind == RAR:
        burn = math.ceil(design.burn_in_fraction * n)
        states = [EMPTY_STATE]
        assigned = [0, 0]
        succeeded = [0, 0]
        for k in range(n):
            if k < burn:
                xi = 0.5
            else:
                xi = rar_probability(
                    map_estimate(succeeded[0], assigned[0]),
                    map_estimate(succeeded[1], assigned[1]),
                )
            arm = 0 if rng.random() < xi else 1
            outcome = rng.random() < (p_a if arm == 0 else p_b)
            assigned[arm] += 1
            succeeded[arm] += int(outcome)
            states.append(ContingencyState(assigned[0], succeeded[0], assigned[1], succeeded[1]))
        return TrialHistory(states=tuple(states))

    if design.kind == BRAR:
        t1 = n // 2
        t2 = n - t1
        arm_a1 = round_half_away(t1 * 0.5)
        arm_b1 = t1 - arm_a1
        n_a1 = int(rng.binomial(arm_a1, p_a))
        n_b1 = int(rng.binomial(arm_b1, p_b))
        first = ContingencyState(arm_a1, n_a1, arm_b1, n_b1)
        xi = rar_probability(map_estimate(n_a1, arm_a1), map_estimate(n_b1, arm_b1))
        arm_a2 = int(rng.binomial(t2, xi))
        arm_b2 = t2 - arm_a2
        n_a2 = int(rng.binomial(arm_a2, p_a)) if arm_a2 else 0
        n_b2 = int(rng.binomial(arm_b2, p_b)) if arm_b2 else 0
        final = ContingencyState(arm_a1 + arm_a2, n_a1 + n_a2, arm_b1 + arm_b2, n_b1 + n_b2)
        return TrialHistory(states=(EMPTY_STATE, first, final))

    # mdp-policy: follow the solved table with exact arm assignments
    policy = design.policy
    states = [EMPTY_STATE]
    actions: list[BlockAction] = []
    state = EMPTY_STATE
    while state.total < n:
        try:
            action = policy.lookup_action(state)
        except LookupError as exc:
            raise DesignMismatchError(f"policy has no action at {state.as_tuple()}: {exc}") from exc
        k_a = int(rng.binomial(action.assigned_a, p_a))
        k_b = int(rng.binomial(action.assigned_b, p_b))
        state = state.add(ContingencyState(action.assigned_a, k_a, action.assigned_b, k_b))
        states.append(state)
        actions.append(action)
    return TrialHistory(states=tuple(states), actions=tuple(actions))


def analysis_strata(design: DesignSpec, history: TrialHistory) -> tuple[ContingencyState, ...]:
    """Strata fed to the CMH test.

    Blocked designs stratify by block. Per-patient strata would zero out
    every CMH weight, so the fixed and per-patient designs are analyzed as
    a single stratum (the unstratified one-sided score test).
    """
    if design.kind in (FIXED, RAR):
        return (history.final_state,)
    return history.strata()


def _raw_rate(successes: int, assigned: int) -> float:
    # An empty arm can only arise from degenerate per-patient randomization;
    # treat its observed rate as 0 so the metric reduction stays finite.
    return successes / assigned if assigned > 0 else 0.0


# ---------------------------------------------------------------------------
# Scenario-level reduction
# ---------------------------------------------------------------------------

def nearest_rank_percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile of an ascending sample, q in (0, 1]."""
    if not sorted_values:
        raise InvalidConfigError("percentile of an empty sample")
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


def _simulate_batch(design: DesignSpec, scenario: Scenario, cfg: SolverConfig) -> dict[str, list]:
    if cfg.n_patients != scenario.n_patients:
        raise DesignMismatchError(
            f"utility config has N={cfg.n_patients}, scenario has N={scenario.n_patients}"
        )
    _check_pairing(design, scenario)
    rejected: list[float] = []
    effects: list[float] = []
    alloc_diffs: list[float] = []
    blocks: list[float] = []
    utilities: list[float] = []
    for i in range(scenario.n_sims):
        history = simulate_trial(design, scenario, trial_rng(scenario.seed, i))
        final = history.final_state
        rejected.append(float(cmh_test_one_sided(analysis_strata(design, history), scenario.alpha)))
        effects.append(
            _raw_rate(final.n_success_a, final.n_assigned_a)
            - _raw_rate(final.n_success_b, final.n_assigned_b)
        )
        alloc_diffs.append(float(final.n_assigned_a - final.n_assigned_b))
        blocks.append(float(history.num_blocks))
        utilities.append(utility(history, cfg))
    return {
        "rejected": rejected,
        "effects": effects,
        "alloc_diffs": alloc_diffs,
        "blocks": blocks,
        "utilities": utilities,
    }


def reduce_metrics(batch: dict[str, list], scenario: Scenario) -> ScenarioMetrics:
    """Order-insensitive reduction of per-trial samples to scenario metrics."""
    n = len(batch["utilities"])
    mean_u = math.fsum(batch["utilities"]) / n
    if n > 1:
        ss = math.fsum(u * u for u in batch["utilities"])
        var_u = max(0.0, (ss - n * mean_u * mean_u) / (n - 1))
    else:
        var_u = 0.0
    alloc_sorted = sorted(batch["alloc_diffs"])
    return ScenarioMetrics(
        rejection_rate=math.fsum(batch["rejected"]) / n,
        effect_bias=math.fsum(batch["effects"]) / n - (scenario.p_a - scenario.p_b),
        alloc_diff_mean=math.fsum(batch["alloc_diffs"]) / n,
        alloc_diff_p5=nearest_rank_percentile(alloc_sorted, 0.05),
        alloc_diff_p95=nearest_rank_percentile(alloc_sorted, 0.95),
        mean_blocks=math.fsum(batch["blocks"]) / n,
        utility_mean=mean_u,
        utility_sd=math.sqrt(var_u),
    )


def run_scenario(design: DesignSpec, scenario: Scenario, cfg: SolverConfig) -> ScenarioMetrics:
    """Simulate scenario.n_sims trials and reduce them to summary metrics."""
    return reduce_metrics(_simulate_batch(design, scenario, cfg), scenario)


def utility_z(a: ScenarioMetrics, b: ScenarioMetrics, n_sims: int) -> float:
    """Standardized mean-utility gain of design a over design b."""
    diff = a.utility_mean - b.utility_mean
    pooled = (a.utility_sd ** 2 + b.utility_sd ** 2) / n_sims
    if pooled == 0.0:
        return 0.0
    return diff / math.sqrt(pooled)


# ---------------------------------------------------------------------------
# Sample-size calibration for the fixed design
# ---------------------------------------------------------------------------

def power_fixed_one_to_one(
    p_a: float, p_b: float, n_patients: int, alpha: float = 0.05,
    seed: int = 0, n_sims: int = 20_000,
) -> float:
    """Monte-Carlo power of the fixed 1:1 design (vectorized across trials).

    Uses a single stream keyed by (seed, n_patients); the fixed design is a
    pair of binomials, so trials need not be drawn one at a time.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n_patients])))
    arm_a = n_patients // 2
    arm_b = n_patients - arm_a
    n_a = rng.binomial(arm_a, p_a, size=n_sims)
    n_b = rng.binomial(arm_b, p_b, size=n_sims)
    w = arm_a * arm_b / (arm_a + arm_b)
    d = n_a / arm_a - n_b / arm_b
    pooled = (n_a + n_b) / (arm_a + arm_b)
    var = w * pooled * (1.0 - pooled)
    z_crit = normal_quantile(1.0 - alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(var > 0.0, w * d / np.sqrt(var), -np.inf)
    return float(np.mean(stat >= z_crit))


def calibrate_sample_size(
    p_a: float, p_b: float, target_power: float, alpha: float = 0.05,
    seed: int = 0, n_sims: int = 20_000,
) -> int:
    """Smallest even N at which the fixed 1:1 design reaches the target power.

    Doubles N until the Monte-Carlo power clears the target, then bisects
    over even sample sizes.
    """
    if p_a <= p_b:
        raise NoPowerError(f"calibration requires p_a > p_b, got ({p_a}, {p_b})")
    if not 0.0 <= target_power < 1.0:
        raise NoPowerError(f"target power must lie in [0,1), got {target_power}")

    def power(n: int) -> float:
        return power_fixed_one_to_one(p_a, p_b, n, alpha, seed, n_sims)

    hi = 2
    while power(hi) < target_power:
        hi *= 2
        if hi > 1 << 20:
            raise NoPowerError(f"no sample size up to {hi} reaches power {target_power}")
    lo = hi // 2  # power(lo) < target (or lo == 1 when hi == 2)
    while hi - lo > 2:
        mid = (lo + hi) // 2
        mid -= mid % 2
        if power(mid) >= target_power:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Frontier sweep over (failure weight, block cost)
# ---------------------------------------------------------------------------

def frontier_sweep(
    lambda_f_grid,
    lambda_k_grid,
    scenarios,
    solver_budget_bytes: int = 4 << 30,
    allocation_set: tuple[float, ...] | None = None,
    progress=None,
) -> list[dict]:
    """Solve and simulate every (lambda_f, lambda_k, scenario) grid point.

    Returns one row per point with power, mean allocation to arm A, and mean
    utility, plus 90% confidence half-widths for the power and allocation
    means. A failed solve marks its rows failed and the sweep continues.
    """
    z90 = normal_quantile(0.95)
    rows: list[dict] = []
    policy_cache: dict[tuple[float, float, int], Policy | Exception] = {}
    for lam_f in lambda_f_grid:
        for lam_k in lambda_k_grid:
            for scenario in scenarios:
                row = {
                    "lambda_f": float(lam_f),
                    "lambda_k": float(lam_k),
                    "p_a": scenario.p_a,
                    "p_b": scenario.p_b,
                    "n_patients": scenario.n_patients,
                    "n_sims": scenario.n_sims,
                    "seed": scenario.seed,
                }
                key = (float(lam_f), float(lam_k), scenario.n_patients)
                policy = policy_cache.get(key)
                if policy is None:
                    try:
                        kwargs = {} if allocation_set is None else {"allocation_set": allocation_set}
                        cfg = SolverConfig(scenario.n_patients, float(lam_f), float(lam_k), **kwargs)
                        policy = solve(cfg, memory_budget_bytes=solver_budget_bytes)
                    except (SolverCapacityError, InvalidConfigError) as exc:
                        policy = exc
                    policy_cache[key] = policy
                if isinstance(policy, Exception):
                    row.update(
                        power=math.nan, power_ci90=math.nan, alloc_a_mean=math.nan,
                        alloc_a_ci90=math.nan, utility_mean=math.nan,
                        status=f"failed: {policy}",
                    )
                    rows.append(row)
                    continue
                batch = _simulate_batch(DesignSpec(kind=MDP, policy=policy), scenario, policy.config)
                n = scenario.n_sims
                power = math.fsum(batch["rejected"]) / n
                alloc_a = [(scenario.n_patients + d) / 2.0 for d in batch["alloc_diffs"]]
                alloc_mean = math.fsum(alloc_a) / n
                if n > 1:
                    ss = math.fsum(x * x for x in alloc_a)
                    alloc_sd = math.sqrt(max(0.0, (ss - n * alloc_mean * alloc_mean) / (n - 1)))
                else:
                    alloc_sd = 0.0
                row.update(
                    power=power,
                    power_ci90=z90 * math.sqrt(max(power * (1.0 - power), 0.0) / n),
                    alloc_a_mean=alloc_mean,
                    alloc_a_ci90=z90 * alloc_sd / math.sqrt(n),
                    utility_mean=math.fsum(batch["utilities"]) / n,
                    status="ok",
                )
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


# ---------------------------------------------------------------------------
# Metric emission
# ---------------------------------------------------------------------------

def metrics_record(
    design_label: str, scenario: Scenario, metrics: ScenarioMetrics,
) -> dict:
    """Flat record with a stable column order (context, then metric fields)."""
    record = {
        "design": design_label,
        "p_a": scenario.p_a,
        "p_b": scenario.p_b,
        "n_patients": scenario.n_patients,
        "n_sims": scenario.n_sims,
        "alpha": scenario.alpha,
        "seed": scenario.seed,
    }
    for name in METRIC_FIELDS:
        record[name] = getattr(metrics, name)
    return record


def write_records(records: list[dict], path: str | Path, fmt: str) -> Path:
    """Write records as delimiter-separated ("csv") or structured text ("json")."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()))
            writer.writeheader()
            writer.writerows(records)
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump(records, fh, indent=2)
            fh.write("\n")
    else:
        raise InvalidConfigError(f"unknown metrics format {fmt!r}")
    return path
