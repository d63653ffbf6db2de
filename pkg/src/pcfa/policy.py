"""Parameterized deterministic lookahead policy for the storage model.

The lookahead LP at time ``t`` has stages ``k = 0..K`` (stage ``k`` is
period ``t + k``).  Columns are the six flows of every stage followed by the
planned storage levels ``R_1..R_K``; rows are the six period constraints of
every stage, then the storage-balance equalities linking consecutive stages,
then (for storage-bound parameterizations) two bound rows per future stage.
Stage 0 always sees realized values.  The constant ``C^P * sum(D)`` is left
out of the LP objective and added back when reporting plan costs.

Parameterizations touch only future-stage rows: the wind rows (forecast
multipliers, affine rhs) or the storage-bound rows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from pcfa.lp import LinearProgram, LpError, WarmStartSolver
from pcfa.storage import FLOWS, Decision, ModelParams, StorageState

N_FLOWS = 6
ROWS_PER_STAGE = 6


class LookaheadInfeasible(LpError):
    """The lookahead LP has no solution (a bug signal for the shipped model)."""


# ---------------------------------------------------------------- parameterizations


class Parameterization:
    """Base class; subclasses are immutable values with a flat vector form."""

    kind = "abstract"
    has_storage_bounds = False
    touches_inventory = False

    def vector(self) -> np.ndarray:
        raise NotImplementedError

    def with_vector(self, v) -> "Parameterization":
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return int(self.vector().size)

    @staticmethod
    def batch_wind_rhs(V: np.ndarray, forecast: np.ndarray) -> np.ndarray:
        """Wind rhs of stages ``1..K`` for each row of ``V`` (``(n, d)``)."""
        return np.broadcast_to(forecast, (V.shape[0], forecast.size)).copy()

    def wind_rhs(self, forecast: np.ndarray) -> np.ndarray:
        return self.batch_wind_rhs(self.vector()[None, :], np.asarray(forecast, float))[0]

    def batch_storage_bounds(self, V, K, p):
        return None

    def storage_bounds(self, K: int, p: ModelParams):
        out = self.batch_storage_bounds(self.vector()[None, :], K, p)
        return None if out is None else (out[0][0], out[1][0])

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.vector(), other.vector())

    def __hash__(self):
        return hash((self.kind, self.vector().tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}({np.array2string(self.vector(), precision=4)})"


class Identity(Parameterization):
    kind = "identity"

    def vector(self):
        return np.zeros(0)

    def with_vector(self, v):
        if np.size(v):
            raise ValueError("Identity has no parameters")
        return self

    @staticmethod
    def batch_wind_rhs(V, forecast):
        return np.broadcast_to(forecast * 1.0, (V.shape[0], forecast.size)).copy()


class ConstantForecast(Parameterization):
    """One multiplier on every future wind forecast."""

    kind = "constant"

    def __init__(self, theta: float = 1.0):
        self.theta = float(theta)
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")

    def vector(self):
        return np.array([self.theta])

    def with_vector(self, v):
        (t,) = np.asarray(v, dtype=float).ravel()
        return ConstantForecast(t)

    @staticmethod
    def batch_wind_rhs(V, forecast):
        return V[:, :1] * forecast[None, :]


class LookupTable(Parameterization):
    """One multiplier per lead time ``tau = 1..H``."""

    kind = "lookup"

    def __init__(self, theta):
        self.theta = np.array(theta, dtype=float).ravel()
        if self.theta.size < 1 or not np.all(np.isfinite(self.theta)):
            raise ValueError("lookup table needs at least one finite entry")
        self.theta.setflags(write=False)

    @classmethod
    def ones(cls, H: int) -> "LookupTable":
        return cls(np.ones(H))

    def vector(self):
        return self.theta.copy()

    def with_vector(self, v):
        return LookupTable(v)

    @staticmethod
    def batch_wind_rhs(V, forecast):
        K = forecast.size
        if K > V.shape[1]:
            raise ValueError(f"lookup table of length {V.shape[1]} cannot cover {K} lookahead stages")
        return V[:, :K] * forecast[None, :]


class AffineRhs(Parameterization):
    """Wind rhs ``theta0 + theta1 * forecast``."""

    kind = "affine"

    def __init__(self, theta0: float = 0.0, theta1: float = 1.0):
        self.theta0 = float(theta0)
        self.theta1 = float(theta1)

    def vector(self):
        return np.array([self.theta0, self.theta1])

    def with_vector(self, v):
        a, b = np.asarray(v, dtype=float).ravel()
        return AffineRhs(a, b)

    @staticmethod
    def batch_wind_rhs(V, forecast):
        return V[:, :1] + V[:, 1:2] * forecast[None, :]

    @staticmethod
    def rhs_gradient(forecast) -> np.ndarray:
        """d(rhs)/d(theta0, theta1) per row: ``(K, 2)``."""
        f = np.asarray(forecast, dtype=float)
        return np.stack([np.ones_like(f), f], axis=1)


class ExponentialStorageBounds(Parameterization):
    """Bounds ``a_L exp(tau b_L) <= R_k <= a_U exp(tau b_U)`` on planned storage."""

    kind = "exp_bounds"
    has_storage_bounds = True
    touches_inventory = True

    def __init__(self, a_lower, b_lower, a_upper, b_upper):
        self.params = np.array([a_lower, b_lower, a_upper, b_upper], dtype=float)
        if not np.all(np.isfinite(self.params)):
            raise ValueError("bound parameters must be finite")
        if self.params[0] < 0 or self.params[2] < 0:
            raise ValueError("bound scales must be nonnegative")

    def vector(self):
        return self.params.copy()

    def with_vector(self, v):
        return ExponentialStorageBounds(*np.asarray(v, dtype=float).ravel())

    def batch_storage_bounds(self, V, K, p):
        tau = np.arange(1, K + 1)[None, :]
        lo = np.maximum(V[:, 0:1], 0.0) * np.exp(tau * V[:, 1:2])
        hi = np.maximum(V[:, 2:3], 0.0) * np.exp(tau * V[:, 3:4])
        return _order_bounds(lo, hi, p)


class StorageBoundsTable(Parameterization):
    """Lower and upper planned-storage bounds per lead time."""

    kind = "bounds_table"
    has_storage_bounds = True
    touches_inventory = True

    def __init__(self, lower, upper):
        self.lower = np.array(lower, dtype=float).ravel()
        self.upper = np.array(upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape or self.lower.size < 1:
            raise ValueError("lower and upper tables must have the same nonzero length")
        if np.any(self.lower < 0) or np.any(self.lower > self.upper):
            raise ValueError("need 0 <= lower <= upper")

    def vector(self):
        return np.concatenate([self.lower, self.upper])

    def with_vector(self, v):
        v = np.asarray(v, dtype=float).ravel()
        h = v.size // 2
        lo = np.maximum(v[:h], 0.0)
        return StorageBoundsTable(lo, np.maximum(v[h:], lo))

    def batch_storage_bounds(self, V, K, p):
        h = V.shape[1] // 2
        if K > h:
            raise ValueError(f"bound table of length {h} cannot cover {K} lookahead stages")
        return _order_bounds(V[:, :K], V[:, h : h + K], p)


def _order_bounds(lo, hi, p: ModelParams):
    lo = np.clip(lo, 0.0, p.r_max)
    hi = np.clip(hi, lo, p.r_max)
    return lo, hi


def reachable_bounds(lo, hi, R0, p: ModelParams):
    """Tighten bound tables so every stage stays reachable from ``R0``.

    Storage can rise by at most ``charge_eff * charge_max`` and fall by at
    most ``discharge_max`` per period, and any level in between is reachable.
    Bounds that conflict with that envelope are moved onto it, stage by
    stage, so the bound rows never make the lookahead infeasible.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    R0 = np.broadcast_to(np.asarray(R0, dtype=float), lo.shape[:-1])
    reach_lo = R0.copy()
    reach_hi = R0.copy()
    up = p.charge_eff * p.charge_max
    for k in range(lo.shape[-1]):
        reach_lo = np.maximum(0.0, reach_lo - p.discharge_max)
        reach_hi = np.minimum(p.r_max, reach_hi + up)
        lo[..., k] = np.minimum(lo[..., k], reach_hi)
        hi[..., k] = np.maximum(hi[..., k], reach_lo)
        reach_lo = np.maximum(reach_lo, lo[..., k])
        reach_hi = np.minimum(reach_hi, hi[..., k])
    return lo, hi


# ---------------------------------------------------------------- LP assembly


def lp_shape(K: int, bounds: bool):
    n = N_FLOWS * (K + 1) + K
    m = ROWS_PER_STAGE * (K + 1) + K + (2 * K if bounds else 0)
    return m, n


def storage_col(K: int, k: int) -> int:
    """Column of planned storage ``R_k`` (``k >= 1``)."""
    return N_FLOWS * (K + 1) + k - 1


def wind_rows(K: int) -> np.ndarray:
    return ROWS_PER_STAGE * np.arange(K + 1) + 1


def lp_matrix(K: int, bounds: bool, p: ModelParams):
    """Constraint matrix and equality mask for ``K`` lookahead stages."""
    m, n = lp_shape(K, bounds)
    A = np.zeros((m, n))
    bd, bc = p.discharge_eff, p.charge_eff
    for k in range(K + 1):
        r, c = ROWS_PER_STAGE * k, N_FLOWS * k
        wd, gd, rd, wr, gr, rg = range(c, c + 6)
        A[r, [wd, rd, gd]] = [1.0, bd, 1.0]
        A[r + 1, [wd, wr]] = 1.0
        A[r + 2, [rd, rg]] = 1.0
        A[r + 3, [wr, gr]] = 1.0
        A[r + 3, [rd, rg]] = -1.0
        A[r + 4, [wr, gr]] = 1.0
        A[r + 5, [rd, rg]] = 1.0
        if k >= 1:
            A[r + 2, storage_col(K, k)] = -1.0
            A[r + 3, storage_col(K, k)] = 1.0
    eq = np.zeros(m, dtype=bool)
    base = ROWS_PER_STAGE * (K + 1)
    for k in range(1, K + 1):
        row = base + k - 1
        c = N_FLOWS * (k - 1)
        A[row, storage_col(K, k)] = 1.0
        if k >= 2:
            A[row, storage_col(K, k - 1)] = -1.0
        A[row, c + 2] = 1.0
        A[row, c + 3] = -bc
        A[row, c + 4] = -bc
        A[row, c + 5] = 1.0
        eq[row] = True
    if bounds:
        base += K
        for k in range(1, K + 1):
            A[base + 2 * (k - 1), storage_col(K, k)] = -1.0
            A[base + 2 * (k - 1) + 1, storage_col(K, k)] = 1.0
    return A, eq


def lp_vectors(K, energy, demand, grid_price, market_price, R0, p: ModelParams, lo=None, hi=None, active=None):
    """Right side, cost and implied upper bounds, batched over leading axes.

    ``energy``, ``demand`` and ``grid_price`` have shape ``(..., K+1)`` with
    stage 0 realized.  ``active`` (length K+1) marks real stages; inactive
    (padding) stages get zero bounds, data and cost.
    """
    energy = np.asarray(energy, dtype=float)
    demand = np.asarray(demand, dtype=float)
    grid_price = np.asarray(grid_price, dtype=float)
    lead = np.broadcast_shapes(energy.shape[:-1], demand.shape[:-1], grid_price.shape[:-1],
                               np.shape(R0), np.shape(market_price))
    R0 = np.broadcast_to(np.asarray(R0, dtype=float), lead)
    pm = np.broadcast_to(np.asarray(market_price, dtype=float), lead)
    bounds = lo is not None
    m, n = lp_shape(K, bounds)
    S = K + 1
    b = np.zeros(lead + (m,))
    st = b[..., : ROWS_PER_STAGE * S].reshape(lead + (S, ROWS_PER_STAGE))
    st[..., 0] = demand
    st[..., 1] = energy
    st[..., 0, 2] = R0
    st[..., 3] = p.r_max
    st[..., 0, 3] = p.r_max - R0
    st[..., 4] = p.charge_max
    st[..., 5] = p.discharge_max
    if K >= 1:
        b[..., ROWS_PER_STAGE * S] = R0
    if bounds:
        base = ROWS_PER_STAGE * S + K
        b[..., base : base + 2 * K : 2] = -np.asarray(lo)
        b[..., base + 1 : base + 2 * K : 2] = np.asarray(hi)

    serve = -(p.penalty + pm)[..., None]
    c = np.zeros(lead + (n,))
    cs = c[..., : N_FLOWS * S].reshape(lead + (S, N_FLOWS))
    cs[..., 0] = serve
    cs[..., 1] = serve + grid_price
    cs[..., 2] = p.discharge_eff * serve
    cs[..., 4] = grid_price
    cs[..., 5] = -p.discharge_eff * grid_price

    u = np.zeros(lead + (n,))
    us = u[..., : N_FLOWS * S].reshape(lead + (S, N_FLOWS))
    us[..., 0] = demand
    us[..., 1] = demand
    us[..., 2] = p.discharge_max
    us[..., 3] = p.charge_max
    us[..., 4] = p.charge_max
    us[..., 5] = p.discharge_max
    u[..., N_FLOWS * S :] = p.r_max

    if active is not None:
        off = ~np.asarray(active, dtype=bool)
        if off.any():
            st[..., off, 0] = 0.0
            st[..., off, 1] = 0.0
            cs[..., off, :] = 0.0
            us[..., off, :] = 0.0
    return b, c, u


# ---------------------------------------------------------------- lookahead data


def _lookahead_data(s: StorageState, H: int):
    fs = s.forecasts
    t = s.t
    if not 0 <= t <= fs.T:
        raise ValueError(f"period {t} outside the forecast horizon")
    if fs.H < min(H, fs.T - t):
        raise ValueError(f"forecasts cover {fs.H} periods ahead but the policy looks {H} ahead")
    last = min(t + H, fs.T)
    E = fs.energy[t, t : last + 1].astype(float)
    D = fs.demand[t, t : last + 1].astype(float)
    P = fs.price[t, t : last + 1].astype(float)
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(D)) and np.all(np.isfinite(P))):
        raise ValueError(f"forecast window at t={t} has missing entries")
    return E, D, P


def _check_param(theta: Parameterization, p: ModelParams):
    if isinstance(theta, LookupTable) and theta.theta.size != p.lookahead_H:
        raise ValueError(f"lookup table length {theta.theta.size} != H = {p.lookahead_H}")
    if isinstance(theta, StorageBoundsTable) and theta.lower.size != p.lookahead_H:
        raise ValueError(f"bound table length {theta.lower.size} != H = {p.lookahead_H}")


def build_lookahead_lp(s: StorageState, theta: Parameterization, p: ModelParams) -> LinearProgram:
    """Dense LP over periods ``t..min(t+H, T)`` with implied upper bounds."""
    _check_param(theta, p)
    E, D, P = _lookahead_data(s, p.lookahead_H)
    K = E.size - 1
    E = E.copy()
    E[1:] = np.maximum(theta.wind_rhs(E[1:]), 0.0)  # negative wind reads as none available
    lo = hi = None
    if theta.has_storage_bounds:
        lo, hi = theta.storage_bounds(K, p)
        lo, hi = reachable_bounds(lo, hi, s.storage, p)
    A, eq = lp_matrix(K, theta.has_storage_bounds, p)
    b, c, u = lp_vectors(K, E, D, P, s.market_price, s.storage, p, lo, hi)
    return LinearProgram(objective=c, constraints=A, rhs=b, upper=u, equality=eq)


@dataclass(frozen=True)
class LookaheadPlan:
    t: int
    decisions: np.ndarray = field(repr=False)  # (K+1, 6)
    storage: np.ndarray = field(repr=False)  # planned R_t..R_{t+K}
    objective: float

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_prime", *FLOWS, "planned_storage"])
        for k, row in enumerate(self.decisions):
            w.writerow([self.t + k, *(repr(float(v)) for v in row), repr(float(self.storage[k]))])


class LookaheadEngine:
    """Warm-started lookahead solves for one policy structure.

    The LP always has ``H`` future stages; near the end of the horizon the
    surplus stages are padded with zero data and zero bounds, so the
    constraint matrix never changes and the basis of one solve seeds the
    next.
    """

    def __init__(self, p: ModelParams, bounds: bool = False):
        self.p = p
        self.K = K = p.lookahead_H
        self.bounds = bounds
        A, eq = lp_matrix(K, bounds, p)
        self.solver = WarmStartSolver(A, eq)
        self.m, self.n = A.shape
        S = K + 1
        self._stage_rows = ROWS_PER_STAGE * np.arange(S)
        self._stage_cols = N_FLOWS * np.arange(S)
        self._flow_cols = (self._stage_cols[:, None] + np.arange(N_FLOWS)[None, :])
        self._bound_base = ROWS_PER_STAGE * S + K
        # data that never changes, taken from the reference assembly
        zeros = np.zeros(S)
        lo, hi = (np.zeros(K), np.full(K, p.r_max)) if bounds else (None, None)
        b0, _, u0 = lp_vectors(K, zeros, zeros, zeros, 0.0, 0.0, p, lo, hi)
        self._b0 = b0
        self._u0 = u0

    def reset(self) -> None:
        self.solver.reset()

    def data(self, s: StorageState, V: np.ndarray, theta: Parameterization):
        """LP vectors for each parameter vector in ``V`` at state ``s``.

        ``theta`` supplies the parameterization type; its own vector is
        ignored.  ``s.storage`` may be an array with one level per row of
        ``V``.  Returns ``(b, c, u, constant)``: ``b`` has one row per
        vector, ``c`` and ``u`` are shared, and ``constant`` is the plan
        cost left out of the LP objective (``C^P * sum(D)``).
        """
        p, K = self.p, self.K
        E, D, P = _lookahead_data(s, K)
        real = E.size - 1
        V = np.atleast_2d(np.asarray(V, dtype=float))
        nb = V.shape[0]
        R0 = np.broadcast_to(np.asarray(s.storage, dtype=float), (nb,))
        rows = self._stage_rows
        b = np.empty((nb, self.m))
        b[:] = self._b0
        b[:, rows[: real + 1]] = D
        b[:, rows[real + 1 :]] = 0.0
        b[:, 1] = E[0]
        b[:, rows[1 : real + 1] + 1] = np.maximum(theta.batch_wind_rhs(V, E[1:]), 0.0)
        b[:, 2] = R0
        b[:, 3] = p.r_max - R0
        if K >= 1:
            b[:, ROWS_PER_STAGE * (K + 1)] = R0
        if self.bounds and real:
            l, h = theta.batch_storage_bounds(V, real, p)
            l, h = reachable_bounds(l, h, R0, p)
            base = self._bound_base
            b[:, base : base + 2 * real : 2] = -l
            b[:, base + 1 : base + 2 * real : 2] = h

        serve = -(p.penalty + s.market_price)
        cols = self._stage_cols[: real + 1]
        c = np.zeros(self.n)
        c[cols] = serve
        c[cols + 1] = serve + P
        c[cols + 2] = p.discharge_eff * serve
        c[cols + 4] = P
        c[cols + 5] = -p.discharge_eff * P
        u = self._u0.copy()
        u[cols] = D
        u[cols + 1] = D
        u[self._flow_cols[real + 1 :]] = 0.0
        return b, c, u, p.penalty * float(D.sum())

    def solve(self, b, c, u):
        return self.solver.solve(b, c, u)


def plan_from_solution(x: np.ndarray, s: StorageState, K_real: int, K: int, objective: float, p: ModelParams) -> LookaheadPlan:
    flows = x[: N_FLOWS * (K + 1)].reshape(K + 1, N_FLOWS)[: K_real + 1]
    storage = np.concatenate([[s.storage], x[N_FLOWS * (K + 1) : N_FLOWS * (K + 1) + K_real]])
    return LookaheadPlan(t=s.t, decisions=flows.copy(), storage=storage, objective=objective)


def decide(s: StorageState, theta: Parameterization, p: ModelParams, engine: LookaheadEngine | None = None):
    """First-period decision of the parameterized lookahead and its plan.

    Without ``engine`` a fresh one is built and solved from the slack
    basis, so the result depends only on the inputs.
    """
    _check_param(theta, p)
    if engine is None:
        engine = LookaheadEngine(p, theta.has_storage_bounds)
    elif engine.bounds != theta.has_storage_bounds:
        raise ValueError("engine structure does not match the parameterization")
    b, c, u, const = engine.data(s, theta.vector(), theta)
    try:
        x, _, _ = engine.solve(b[0], c, u)
    except LpError as exc:
        raise LookaheadInfeasible(f"lookahead LP failed at t={s.t}: {exc}") from exc
    K_real = min(s.t + p.lookahead_H, s.forecasts.T) - s.t
    plan = plan_from_solution(x, s, K_real, engine.K, float(c @ x) + const, p)
    return Decision.from_array(first_stage(x, s, p)), plan


def first_stage(x: np.ndarray, s_or_storage, p: ModelParams, energy=None, demand=None) -> np.ndarray:
    """Stage-0 flows, with round-off trimmed so they satisfy the realized
    period constraints exactly.  Works on one point or a batch of them."""
    if isinstance(s_or_storage, StorageState):
        R, E, D = s_or_storage.storage, s_or_storage.energy, s_or_storage.demand
    else:
        R, E, D = s_or_storage, energy, demand
    x = np.asarray(x, dtype=float)
    X = np.ascontiguousarray(np.atleast_2d(x)[:, :N_FLOWS])
    Rv = np.ascontiguousarray(np.broadcast_to(np.asarray(R, dtype=float), (X.shape[0],)))
    out = _trim(X, Rv, float(E), float(D), p.discharge_eff, p.charge_max, p.discharge_max, p.r_max)
    return out if x.ndim > 1 else out[0]


@njit(cache=True)
def _trim(X, R, E, D, beta_d, charge_max, discharge_max, r_max):
    """Scale groups of flows down (by round-off amounts in practice) until
    every realized period constraint holds with no tolerance."""
    out = np.maximum(X, 0.0)
    for i in range(out.shape[0]):
        x = out[i]
        cap = min(R[i], discharge_max)
        if x[3] + x[0] > E:
            f = max(E, 0.0) / (x[3] + x[0])
            x[3] *= f
            x[0] *= f
        if x[2] + x[5] > cap:
            f = max(cap, 0.0) / (x[2] + x[5])
            x[2] *= f
            x[5] *= f
        if x[3] + x[4] > charge_max:
            f = charge_max / (x[3] + x[4])
            x[3] *= f
            x[4] *= f
        served = x[0] + beta_d * x[2] + x[1]
        if served > D:
            f = max(D, 0.0) / served
            x[0] *= f
            x[1] *= f
            x[2] *= f
        excess = x[3] + x[4] - x[2] - x[5] - (r_max - R[i])
        if excess > 0.0:
            charge = x[3] + x[4]
            f = max(charge - excess, 0.0) / charge
            x[3] *= f
            x[4] *= f
    return out
