"""Monte-Carlo evaluation of lookahead policies on the storage model.

A sample path ``omega`` is an integer seed; the forecast generator turns it
into a :class:`~pcfa.forecast.ForecastSet`, which never depends on the
policy, so every policy sees the same exogenous world for the same seed.

Each rollout starts its lookahead engine from the slack basis, which makes
``F(theta, omega)`` a pure function of its arguments.  Groups of nearby
parameter vectors on one path (finite-difference or smoothing variants, grid
scans) are rolled out in lockstep: at every period the first vector's LP is
solved along its own warm-started chain and the other vectors' LPs start
from that basis.  Alternate optima may then be broken differently than in a
standalone rollout; the optimal LP values are the same either way.
"""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np

from pcfa.forecast import ForecastConfig, ForecastGenerator, ForecastSet
from pcfa.lp import LpError
from pcfa.policy import (
    AffineRhs,
    Identity,
    LookaheadEngine,
    LookaheadInfeasible,
    Parameterization,
    first_stage,
)
from pcfa.storage import FLOWS, ModelParams, StorageState, next_storage, period_cost

TEST_SEED_BASE = 1_000_000_000


@dataclass(frozen=True)
class SimConfig:
    model: ModelParams = field(default_factory=ModelParams)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    initial_storage: float = 0.0

    def __post_init__(self):
        if self.model.horizon_T != self.forecast.T:
            raise ValueError("model and forecast horizons differ")
        if min(self.model.lookahead_H, self.model.horizon_T) > self.forecast.window:
            raise ValueError("forecast window shorter than the policy lookahead")
        if not 0.0 <= self.initial_storage <= self.model.r_max:
            raise ValueError("initial storage outside [0, r_max]")

    @classmethod
    def build(cls, T=48, H=23, sigma_E=np.sqrt(40.0), initial_storage=0.0, forecast_H=None, **forecast_kw):
        """Config with matching horizons in the model and the forecasts."""
        fc = ForecastConfig(T=T, H=H if forecast_H is None else forecast_H, sigma_E=sigma_E, **forecast_kw)
        return cls(model=ModelParams(horizon_T=T, lookahead_H=H), forecast=fc, initial_storage=initial_storage)


@dataclass(frozen=True)
class Trajectory:
    seed: int | None
    storage: np.ndarray = field(repr=False)  # R_0..R_T (level at the start of each period)
    decisions: np.ndarray = field(repr=False)  # (T+1, 6)
    costs: np.ndarray = field(repr=False)
    energy: np.ndarray = field(repr=False)
    demand: np.ndarray = field(repr=False)
    grid_price: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        return float(self.costs.sum())

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "storage", "demand", "energy", "grid_price", *FLOWS, "cost"])
        for t in range(self.costs.size):
            row = [self.storage[t], self.demand[t], self.energy[t], self.grid_price[t], *self.decisions[t], self.costs[t]]
            w.writerow([t, *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class EvaluationReport:
    """Profit statistics (profit = -cost) over paths ``base_seed + i``."""

    n: int
    mean_profit: float
    stderr: float
    per_path: np.ndarray = field(repr=False)
    base_seed: int = 0

    @classmethod
    def from_profits(cls, profits, base_seed: int) -> "EvaluationReport":
        profits = np.asarray(profits, dtype=float)
        n = profits.size
        if n < 1:
            raise ValueError("need at least one path")
        se = float(profits.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return cls(n=n, mean_profit=float(profits.mean()), stderr=se, per_path=profits, base_seed=base_seed)


def policy_improvement(report, benchmark) -> float:
    """Relative profit gain over the benchmark policy."""
    if benchmark.mean_profit == 0:
        raise ZeroDivisionError("benchmark mean profit is zero; improvement undefined")
    return (report.mean_profit - benchmark.mean_profit) / abs(benchmark.mean_profit)


def improvement_stderr(report, benchmark) -> float:
    """Standard error of the improvement from per-path paired differences."""
    if report.n != benchmark.n or report.base_seed != benchmark.base_seed:
        raise ValueError("reports were not computed on the same paths")
    if benchmark.mean_profit == 0:
        raise ZeroDivisionError("benchmark mean profit is zero; improvement undefined")
    if report.n < 2:
        return float("nan")
    diff = report.per_path - benchmark.per_path
    return float(diff.std(ddof=1) / np.sqrt(report.n) / abs(benchmark.mean_profit))


class Simulator:
    """Rollouts for one configuration; caches the generator and engines."""

    def __init__(self, cfg: SimConfig, cache_paths: int = 2048):
        self.cfg = cfg
        self.generator = ForecastGenerator(cfg.forecast)
        self._engines: dict[bool, LookaheadEngine] = {}
        self._cache: dict[int, ForecastSet] = {}
        self._cache_limit = cache_paths
        self.rollouts = 0

    def engine(self, bounds: bool) -> LookaheadEngine:
        if bounds not in self._engines:
            self._engines[bounds] = LookaheadEngine(self.cfg.model, bounds)
        return self._engines[bounds]

    def path(self, omega) -> ForecastSet:
        if isinstance(omega, ForecastSet):
            return omega
        seed = int(omega)
        fs = self._cache.get(seed)
        if fs is None:
            fs = self.generator.sample(seed)
            if len(self._cache) < self._cache_limit:
                self._cache[seed] = fs
        return fs

    def _check(self, theta: Parameterization, V: np.ndarray):
        H = self.cfg.model.lookahead_H
        if V.shape[1] != theta.dim:
            raise ValueError(f"parameter vectors have {V.shape[1]} entries, expected {theta.dim}")
        if theta.kind in ("lookup", "bounds_table"):
            need = H if theta.kind == "lookup" else 2 * H
            if theta.dim != need:
                raise ValueError(f"{theta.kind} parameterization needs {need} entries for H = {H}")

    def run(self, theta: Parameterization, omega, V=None, record: bool = False):
        """Roll out the parameter vectors ``V`` (default: ``theta``'s own).

        Returns the total cost per vector, plus the first vector's
        :class:`Trajectory` when ``record`` is set.
        """
        p = self.cfg.model
        fs = self.path(omega)
        V = theta.vector()[None, :] if V is None else np.atleast_2d(np.asarray(V, dtype=float))
        self._check(theta, V)
        nv = V.shape[0]
        eng = self.engine(theta.has_storage_bounds)
        eng.reset()
        E, D, P = fs.realized()
        pm = fs.market_price
        R = np.full(nv, float(self.cfg.initial_storage))
        totals = np.zeros(nv)
        if record:
            hist_R = np.zeros(fs.T + 1)
            hist_x = np.zeros((fs.T + 1, 6))
            hist_c = np.zeros(fs.T + 1)
        for t in range(fs.T + 1):
            s = StorageState(t, R, fs)
            b, c, u, _ = eng.data(s, V, theta)
            try:
                x_center = eng.solve(b[0], c, u)[0]
                if nv == 1:
                    X = x_center[None, :]
                else:
                    k = nv - 1
                    X = np.vstack([x_center, eng.solver.solve_many(
                        b[1:], np.broadcast_to(c, (k, c.size)), np.broadcast_to(u, (k, u.size)))])
            except LpError as exc:
                raise LookaheadInfeasible(f"lookahead failed at t={t}, seed={fs.seed}: {exc}") from exc
            x = first_stage(X, R, p, E[t], D[t])
            cost = period_cost(x, D[t], P[t], pm, p)
            if record:
                hist_R[t], hist_x[t], hist_c[t] = R[0], x[0], cost[0]
            totals += cost
            R = np.clip(next_storage(R, x, p), 0.0, p.r_max)
        self.rollouts += nv
        if not record:
            return totals
        traj = Trajectory(seed=fs.seed, storage=hist_R, decisions=hist_x, costs=hist_c,
                          energy=E.copy(), demand=D.copy(), grid_price=P.copy())
        return totals, traj

    def rollout(self, theta: Parameterization, omega) -> Trajectory:
        return self.run(theta, omega, record=True)[1]

    def total_cost(self, theta: Parameterization, omega) -> float:
        return float(self.run(theta, omega)[0])

    def evaluate(self, theta: Parameterization, n: int, base_seed: int = TEST_SEED_BASE) -> EvaluationReport:
        if n < 1:
            raise ValueError("need n >= 1")
        costs = np.array([self.run(theta, base_seed + i)[0] for i in range(n)])
        return EvaluationReport.from_profits(-costs, base_seed)

    def evaluate_many(self, theta: Parameterization, V, n: int, base_seed: int = TEST_SEED_BASE):
        """Evaluate several parameter vectors on the same paths in lockstep.

        The first vector of ``V`` carries the warm-start chain.
        """
        V = np.atleast_2d(np.asarray(V, dtype=float))
        costs = np.array([self.run(theta, base_seed + i, V) for i in range(n)])
        return [EvaluationReport.from_profits(-costs[:, j], base_seed) for j in range(V.shape[0])]


@functools.lru_cache(maxsize=8)
def simulator_for(cfg: SimConfig) -> Simulator:
    return Simulator(cfg)


def rollout(theta: Parameterization, omega, cfg: SimConfig) -> Trajectory:
    return simulator_for(cfg).rollout(theta, omega)


def evaluate(theta: Parameterization, n: int, base_seed: int, cfg: SimConfig) -> EvaluationReport:
    return simulator_for(cfg).evaluate(theta, n, base_seed)


# ---------------------------------------------------------------- grid scans


@dataclass(frozen=True)
class ScanResult:
    coords: tuple  # coordinate index per axis
    points: np.ndarray = field(repr=False)  # (G, n_axes) axis values
    mean: np.ndarray = field(repr=False)  # mean profit per point
    stderr: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)  # improvement over the benchmark

    def write_csv(self, fh, names=None) -> None:
        names = names or [f"theta_{c}" for c in self.coords]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "mean", "stderr", "delta_f"])
        for i in range(self.mean.size):
            vals = [*self.points[i], self.mean[i], self.stderr[i], self.delta[i]]
            w.writerow([repr(float(v)) for v in vals])


def scan_objective(theta: Parameterization, axes, cfg: SimConfig, seeds, benchmark: Parameterization | None = None,
                   sim: Simulator | None = None, lockstep: bool = False) -> ScanResult:
    """Mean profit over ``seeds`` on a 1-D or 2-D grid of coordinates.

    ``axes`` is a list of ``(coordinate, values)``; the other coordinates
    stay at ``theta``'s values.  ``seeds`` is one seed (fixed-path probe) or
    a sequence.  ``delta`` is measured against ``benchmark`` (default: the
    unmodified lookahead) on the same paths.

    By default every grid point is rolled out on its own, so a cell equals
    :meth:`Simulator.evaluate` exactly.  ``lockstep`` warm-starts all cells
    from the first one; it is several times faster, but where a lookahead LP
    has several optimal plans a far-away cell may pick a different one than
    its own rollout would.
    """
    if not 1 <= len(axes) <= 2:
        raise ValueError("scan needs one or two axes")
    sim = sim or simulator_for(cfg)
    seeds = [int(seeds)] if np.isscalar(seeds) else [int(s) for s in seeds]
    coords = tuple(int(a[0]) for a in axes)
    grids = np.meshgrid(*[np.asarray(a[1], dtype=float) for a in axes], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    V = np.repeat(theta.vector()[None, :], points.shape[0], axis=0)
    for j, c in enumerate(coords):
        V[:, c] = points[:, j]
    if lockstep:
        profits = -np.array([sim.run(theta, s, V) for s in seeds])
    else:
        profits = -np.array([[sim.run(theta, s, v[None, :])[0] for v in V] for s in seeds])
    bench = benchmark or Identity()
    base = -np.array([sim.run(bench, s)[0] for s in seeds])
    n = len(seeds)
    mean = profits.mean(axis=0)
    se = profits.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(mean.size, np.nan)
    bmean = base.mean()
    if bmean == 0:
        raise ZeroDivisionError("benchmark mean profit is zero; improvement undefined")
    return ScanResult(coords=coords, points=points, mean=mean, stderr=se, delta=(mean - bmean) / abs(bmean))


# ---------------------------------------------------------------- static mode


def static_lp(theta: AffineRhs, fs: ForecastSet, p: ModelParams, initial_storage: float = 0.0):
    """One LP over all periods, planned at ``t = 0``.

    Demand rows and grid prices use the path's realized values and wind
    rows of periods ``1..T`` use ``theta0 + theta1 * f[0, t']``; the LP
    value plus ``C^P * sum(D)`` is the plan's cost if that much wind came.
    :func:`static_plan_cost` scores the plan against the realized wind.
    Returns ``(lp, constant, wind_rows, forecast)``.
    """
    from pcfa.policy import lp_matrix, lp_vectors, wind_rows
    from pcfa.lp import LinearProgram

    if not isinstance(theta, AffineRhs):
        raise TypeError("static mode supports the affine rhs parameterization only")
    if theta.touches_inventory:
        raise ValueError("static mode requires unparameterized inventory rows")
    T = fs.T
    if fs.H < T:
        raise ValueError("static mode needs time-0 forecasts for every period (window >= T)")
    E, D, P = fs.realized()
    f0 = fs.energy[0, 1:].astype(float)
    wind = np.concatenate([[E[0]], theta.wind_rhs(f0)])
    A, eq = lp_matrix(T, False, p)
    b, c, u = lp_vectors(T, wind, D, P, fs.market_price, initial_storage, p)
    lp = LinearProgram(objective=c, constraints=A, rhs=b, upper=u, equality=eq)
    return lp, p.penalty * float(D.sum()), wind_rows(T)[1:], f0


def static_plan_cost(x, fs: ForecastSet, p: ModelParams, initial_storage: float = 0.0) -> float:
    """Realized cost of executing a static plan period by period.

    Planned flows are cut back wherever the realized wind or the actual
    storage level falls short; demand left unserved pays the penalty.
    """
    T = fs.T
    E, D, P = fs.realized()
    flows = np.asarray(x, dtype=float)[: 6 * (T + 1)].reshape(T + 1, 6)
    R = float(initial_storage)
    total = 0.0
    for t in range(T + 1):
        xt = first_stage(flows[t], R, p, E[t], D[t])
        total += float(period_cost(xt, D[t], P[t], fs.market_price, p))
        R = float(np.clip(next_storage(R, xt, p), 0.0, p.r_max))
    return total
