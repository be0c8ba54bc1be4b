"""Optimal blocked response-adaptive randomization for two-armed binary trials."""

from .core import (
    BlockAction,
    ContingencyState,
    SolverConfig,
    StratumTable,
    TrialHistory,
)
from .solver import Policy, brute_force_value, enumerate_levels, solve
from .store import load, save

__all__ = [
    "BlockAction",
    "ContingencyState",
    "Policy",
    "SolverConfig",
    "StratumTable",
    "TrialHistory",
    "brute_force_value",
    "enumerate_levels",
    "load",
    "save",
    "solve",
]
