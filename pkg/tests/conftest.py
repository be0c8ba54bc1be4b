import numpy as np
import pytest

from blockrar.core import ContingencyState, EMPTY_STATE, SolverConfig, TrialHistory
from blockrar.solver import enumerate_levels, feasible_actions, solve


@pytest.fixture(scope="session")
def toy_cfg():
    return SolverConfig(n_patients=2, failure_weight=4.0, block_cost=0.01,
                        allocation_set=(0.5,), min_block=1, block_increment=1)


@pytest.fixture(scope="session")
def toy_policy(toy_cfg):
    return solve(toy_cfg)


@pytest.fixture(scope="session")
def cfg8():
    return SolverConfig(n_patients=8, failure_weight=4.0, block_cost=0.01,
                        allocation_set=(0.25, 0.5, 0.75), min_block=2, block_increment=2)


@pytest.fixture(scope="session")
def policy8(cfg8):
    return solve(cfg8)


@pytest.fixture(scope="session")
def cfg20():
    # N=20 with the defaults-style pruning; small enough for fast tests
    return SolverConfig(n_patients=20, failure_weight=4.0, block_cost=0.01)


@pytest.fixture(scope="session")
def policy20(cfg20):
    return solve(cfg20)


def fuzz_config(rng: np.random.Generator, max_n: int = 14) -> SolverConfig:
    """Random small solver config with a feasible block sequence."""
    full = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    while True:
        n = int(rng.integers(2, max_n + 1))
        t_min = int(rng.integers(1, max(2, n // 2 + 1)))
        kappa = int(rng.integers(1, 4))
        k = int(rng.integers(1, 5))
        allocs = tuple(sorted(rng.choice(full, size=k, replace=False).tolist()))
        gamma = float(rng.choice([0.5, 1.0, 2.0]))
        cfg = SolverConfig(
            n_patients=n,
            failure_weight=float(rng.uniform(0.0, 5.0)),
            block_cost=float(rng.uniform(0.0, 0.2)),
            allocation_set=allocs,
            min_block=t_min,
            block_increment=kappa,
            smoothing=(gamma,) * 4,
        )
        if 0 in enumerate_levels(cfg).viable:
            return cfg


def random_history(rng: np.random.Generator, cfg: SolverConfig) -> TrialHistory:
    """Random feasible action path with random (arbitrary-rate) outcomes."""
    schedule = enumerate_levels(cfg)
    p_a, p_b = rng.uniform(0.05, 0.95, size=2)
    state = EMPTY_STATE
    states = [state]
    actions = []
    while state.total < cfg.n_patients:
        options = feasible_actions(state, schedule, cfg)
        action = options[int(rng.integers(len(options)))]
        k_a = int(rng.binomial(action.assigned_a, p_a))
        k_b = int(rng.binomial(action.assigned_b, p_b))
        state = state.add(ContingencyState(action.assigned_a, k_a, action.assigned_b, k_b))
        states.append(state)
        actions.append(action)
    return TrialHistory(states=tuple(states), actions=tuple(actions))
