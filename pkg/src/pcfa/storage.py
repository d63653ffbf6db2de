"""Energy-storage base model: state, feasibility, transition and cost.

A decision is the six flows ``(wd, gd, rd, wr, gr, rg)``: wind to demand,
grid to demand, storage to demand, wind to storage, grid to storage and
storage to grid.  Costs follow the contribution formula of the model and are
minimized; profit is reported as ``-cost``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLOWS = ("wd", "gd", "rd", "wr", "gr", "rg")
WD, GD, RD, WR, GR, RG = range(6)


@dataclass(frozen=True)
class ModelParams:
    """Physical and economic constants of the storage system."""

    r_max: float = 100.0
    charge_max: float = 10.0
    discharge_max: float = 10.0
    charge_eff: float = 0.9
    discharge_eff: float = 0.9
    penalty: float = 50.0
    horizon_T: int = 48
    lookahead_H: int = 23

    def __post_init__(self):
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        if self.charge_max <= 0 or self.discharge_max <= 0:
            raise ValueError("charge/discharge limits must be positive")
        if not (0 < self.charge_eff < 1 and 0 < self.discharge_eff < 1):
            raise ValueError("efficiencies must lie strictly between 0 and 1")
        if self.penalty <= 0:
            raise ValueError("unmet-demand penalty must be positive")
        if self.horizon_T < 0 or self.lookahead_H < 0:
            raise ValueError("horizon lengths must be nonnegative")


@dataclass(frozen=True)
class Decision:
    wd: float = 0.0
    gd: float = 0.0
    rd: float = 0.0
    wr: float = 0.0
    gr: float = 0.0
    rg: float = 0.0

    def __post_init__(self):
        if min(self.as_array()) < 0:
            raise ValueError("decision flows must be nonnegative")

    @classmethod
    def from_array(cls, x) -> "Decision":
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return cls(*(float(v) for v in x[:6]))

    def as_array(self) -> np.ndarray:
        return np.array([self.wd, self.gd, self.rd, self.wr, self.gr, self.rg])


@dataclass(frozen=True)
class StorageState:
    """Everything the policy may look at in period ``t``.

    ``forecasts`` is the sample path's :class:`~pcfa.forecast.ForecastSet`;
    the realized energy, demand and grid price of period ``t`` are the
    diagonal entries of its surfaces.
    """

    t: int
    storage: float
    forecasts: object = field(repr=False)

    @property
    def energy(self) -> float:
        return float(self.forecasts.energy[self.t, self.t])

    @property
    def demand(self) -> float:
        return float(self.forecasts.demand[self.t, self.t])

    @property
    def grid_price(self) -> float:
        return float(self.forecasts.price[self.t, self.t])

    @property
    def market_price(self) -> float:
        return float(self.forecasts.market_price)


@dataclass(frozen=True)
class ExogenousInfo:
    """What is revealed at ``t + 1``: the realized values and the forecast
    rows that moved (taken from a pre-generated sample path)."""

    t: int
    energy: float
    demand: float
    grid_price: float
    energy_forecast: np.ndarray = field(repr=False, default=None)
    demand_forecast: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_forecasts(cls, forecasts, t: int) -> "ExogenousInfo":
        return cls(
            t=t,
            energy=float(forecasts.energy[t, t]),
            demand=float(forecasts.demand[t, t]),
            grid_price=float(forecasts.price[t, t]),
            energy_forecast=forecasts.energy_row(t),
            demand_forecast=forecasts.demand_row(t),
        )


_CONSTRAINT_NAMES = (
    "demand",
    "wind availability",
    "storage withdrawal",
    "storage capacity",
    "charge rate",
    "discharge rate",
)


def constraint_slacks(x: np.ndarray, storage, energy, demand, p: ModelParams) -> np.ndarray:
    """Right side minus left side of the six period constraints.

    Vectorized over a leading batch axis: ``x`` may be ``(..., 6)``.
    """
    x = np.asarray(x, dtype=float)
    wd, gd, rd, wr, gr, rg = np.moveaxis(x, -1, 0)
    return np.stack(
        [
            demand - (wd + p.discharge_eff * rd + gd),
            energy - (wr + wd),
            storage - (rd + rg),
            (p.r_max - storage) - (wr + gr - rd - rg),
            p.charge_max - (wr + gr),
            p.discharge_max - (rd + rg),
        ],
        axis=-1,
    )


def check_feasible(x: Decision, s: StorageState, p: ModelParams, tol: float = 1e-7):
    """Return ``(ok, violations)`` where violations name the broken rows."""
    slack = constraint_slacks(x.as_array(), s.storage, s.energy, s.demand, p)
    violations = [name for name, v in zip(_CONSTRAINT_NAMES, slack) if v < -tol]
    return not violations, violations


def next_storage(storage, x, p: ModelParams):
    x = np.asarray(x, dtype=float)
    return (
        storage
        - x[..., RD]
        + p.charge_eff * x[..., WR]
        + p.charge_eff * x[..., GR]
        - x[..., RG]
    )


def transition(s: StorageState, x: Decision, w: ExogenousInfo, p: ModelParams, tol: float = 1e-7) -> StorageState:
    ok, violations = check_feasible(x, s, p, tol)
    if not ok:
        raise ValueError(f"infeasible decision at t={s.t}: {', '.join(violations)}")
    if w.t != s.t + 1:
        raise ValueError("exogenous information belongs to a different period")
    r = float(np.clip(next_storage(s.storage, x.as_array(), p), 0.0, p.r_max))
    return StorageState(t=w.t, storage=r, forecasts=s.forecasts)


def period_cost(x, demand, grid_price, market_price, p: ModelParams):
    """Contribution of one period as a cost; vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    served = x[..., WD] + p.discharge_eff * x[..., RD] + x[..., GD]
    grid_net = p.discharge_eff * x[..., RG] - x[..., GR] - x[..., GD]
    return p.penalty * (demand - served) - market_price * served - grid_price * grid_net


def contribution(s: StorageState, x: Decision, p: ModelParams) -> float:
    return float(period_cost(x.as_array(), s.demand, s.grid_price, s.market_price, p))
