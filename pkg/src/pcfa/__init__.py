"""Parametric cost function approximations for energy storage.

A deterministic lookahead LP whose wind forecasts (or planned storage
levels) are modified by a parameter vector ``theta``; ``theta`` is tuned by
simulating the policy on sample paths of a stochastic base model.
"""
from pcfa.forecast import ForecastConfig, ForecastGenerator, ForecastSet
from pcfa.lp import LinearProgram, LpSolution, Status, solve
from pcfa.policy import (AffineRhs, ConstantForecast, ExponentialStorageBounds, Identity, LookupTable,
                         StorageBoundsTable, decide)
from pcfa.simulator import SimConfig, Simulator, evaluate, policy_improvement, rollout
from pcfa.storage import Decision, ModelParams, StorageState

__version__ = "0.1.0"

__all__ = [
    "ForecastConfig", "ForecastGenerator", "ForecastSet",
    "LinearProgram", "LpSolution", "Status", "solve",
    "AffineRhs", "ConstantForecast", "ExponentialStorageBounds", "Identity", "LookupTable", "StorageBoundsTable",
    "decide",
    "SimConfig", "Simulator", "evaluate", "policy_improvement", "rollout",
    "Decision", "ModelParams", "StorageState",
]
