"""Stochastic-approximation tuning of policy parameters.

Objectives are anything with a ``values(V, omega)`` method returning the
sampled cost ``F(theta, omega)`` for every row ``theta`` of ``V`` on the
common path ``omega``; :func:`as_objective` wraps a plain callable.  All
methods minimize.

* SNG: central finite differences on one path per iteration, adaptive
  stepsizes, returns the last iterate.
* SGF: two-point Gaussian-smoothing estimator averaged over a mini-batch,
  decaying smoothing ``eta_k``, returns a randomly indexed iterate.
* static: projected subgradient steps on the one-shot planning LP, returns
  the averaged iterate.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from pcfa.lp import LpSolution, Status, WarmStartSolver, rhs_sensitivity, solve
from pcfa.policy import AffineRhs, Parameterization
from pcfa.simulator import (TEST_SEED_BASE, SimConfig, Simulator, improvement_stderr, policy_improvement,
                            static_lp, static_plan_cost)

# ---------------------------------------------------------------- stepsizes


@dataclass(frozen=True)
class AdaGrad:
    eta: float = 0.1
    eps: float = 1e-8

    def __post_init__(self):
        if self.eta <= 0 or self.eps < 0:
            raise ValueError("AdaGrad needs eta > 0 and eps >= 0")


@dataclass(frozen=True)
class RMSProp:
    eta: float = 0.01
    beta: float = 0.9

    def __post_init__(self):
        if self.eta <= 0 or not 0 < self.beta < 1:
            raise ValueError("RMSProp needs eta > 0 and beta in (0, 1)")


@dataclass(frozen=True)
class Polynomial:
    """``alpha_k = scale / sqrt(k)``."""

    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class StepState:
    k: int = 0  # gradients seen so far
    sum_sq: np.ndarray | None = None  # AdaGrad diagonal accumulator
    avg_sq: float = 0.0  # RMSProp running average of squared norms


def apply_stepsize(rule, state: StepState, g):
    """Per-coordinate stepsizes for gradient ``g`` and the updated state.

    The caller moves ``theta -= steps * g``.
    """
    g = np.asarray(g, dtype=float)
    k = state.k + 1
    if isinstance(rule, AdaGrad):
        acc = (np.zeros_like(g) if state.sum_sq is None else state.sum_sq) + g * g
        denom = np.sqrt(acc + rule.eps)
        with np.errstate(divide="ignore"):
            steps = np.where(denom > 0, rule.eta / np.where(denom > 0, denom, 1.0), 0.0)
        return steps, replace(state, k=k, sum_sq=acc)
    if isinstance(rule, RMSProp):
        avg = rule.beta * state.avg_sq + (1.0 - rule.beta) * float(g @ g)
        alpha = rule.eta / np.sqrt(avg) if avg > 0 else 0.0
        return np.full(g.shape, alpha), replace(state, k=k, avg_sq=avg)
    if isinstance(rule, Polynomial):
        return np.full(g.shape, rule.scale / np.sqrt(k)), replace(state, k=k)
    raise TypeError(f"unknown stepsize rule {rule!r}")


@dataclass(frozen=True)
class SmoothingSchedule:
    """``eta_k = L0 (d + 4) / k**beta`` and ``alpha_k = 1 / sqrt(k)``."""

    L0: float = 1.0
    d: int = 1
    beta: float = 0.25

    def __post_init__(self):
        if self.L0 <= 0:
            raise ValueError("L0 must be positive")
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        if not 0 < self.beta < 0.5:
            raise ValueError("beta must lie strictly inside (0, 1/2)")


def schedule_values(schedule: SmoothingSchedule, k):
    """``(eta_k, alpha_k)``; ``k`` may be an integer array."""
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("k starts at 1")
    kf = k_arr.astype(float)
    return schedule.L0 * (schedule.d + 4) / kf**schedule.beta, 1.0 / np.sqrt(kf)


def output_pmf(alphas) -> np.ndarray:
    a = np.asarray(alphas, dtype=float)
    if a.size == 0 or np.any(~(a > 0)):
        raise ValueError("output weights must be positive")
    return a / a.sum()


def sample_output_index(alphas, rng: np.random.Generator) -> int:
    """Draw ``R`` in ``1..N`` with probability proportional to ``alpha_R``."""
    p = output_pmf(alphas)
    return int(rng.choice(p.size, p=p)) + 1


# ---------------------------------------------------------------- objectives


class CallableObjective:
    def __init__(self, f):
        self.f = f
        self.evaluations = 0

    def values(self, V, omega) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=float))
        self.evaluations += V.shape[0]
        return np.array([float(self.f(v, omega)) for v in V])


def as_objective(f):
    return f if hasattr(f, "values") else CallableObjective(f)


class PolicyObjective:
    """Sampled rollout cost of a parameterization, optionally rescaled.

    ``omega`` is a path seed.  Parameter vectors in one call are rolled out
    in lockstep on that path.
    """

    def __init__(self, sim: Simulator, theta: Parameterization, scale: float = 1.0):
        self.sim = sim
        self.theta = theta
        self.scale = float(scale)

    @property
    def evaluations(self) -> int:
        return self.sim.rollouts

    def values(self, V, omega) -> np.ndarray:
        return self.sim.run(self.theta, omega, V) / self.scale


def _sgf(objective, theta, eta, omega, v):
    f0, f1 = objective.values(np.vstack([theta, theta + eta * v]), omega)
    return (f1 - f0) / eta * v, f0


def _sng(objective, theta, h, omega):
    d = theta.size
    step = h * np.eye(d)
    vals = objective.values(np.vstack([theta + step, theta - step]), omega)
    return (vals[:d] - vals[d:]) / (2.0 * h), float(vals.mean())


def sgf_gradient_estimate(objective, theta, eta: float, omega, v) -> np.ndarray:
    """Two-point smoothing estimate ``(F(theta + eta v) - F(theta)) / eta * v``."""
    if eta <= 0:
        raise ValueError("smoothing parameter must be positive")
    theta = np.asarray(theta, dtype=float)
    return _sgf(as_objective(objective), theta, eta, omega, np.asarray(v, dtype=float))[0]


def sng_gradient_estimate(objective, theta, h: float, omega) -> np.ndarray:
    """Central differences ``(F(theta + h e_i) - F(theta - h e_i)) / 2h``."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    return _sng(as_objective(objective), np.asarray(theta, dtype=float), h, omega)[0]


# ---------------------------------------------------------------- runs


@dataclass
class OptimizerRun:
    method: str
    thetas: np.ndarray = field(repr=False)  # (N+1, d) including theta^0
    steps: np.ndarray = field(repr=False)  # (N, d) stepsizes used
    etas: np.ndarray = field(repr=False)  # (N,) smoothing or finite-difference step
    grad_norms: np.ndarray = field(repr=False)
    batch_costs: np.ndarray = field(repr=False)  # mean sampled cost at theta^{k-1}
    output_index: int
    output: np.ndarray
    seeds: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def N(self) -> int:
        return self.steps.shape[0]

    def write_trace(self, fh) -> None:
        d = self.thetas.shape[1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", *(f"theta_{i}" for i in range(d)), "alpha", "eta", "grad_norm", "batch_mean_cost"])
        w.writerow([0, *(repr(float(v)) for v in self.thetas[0]), "", "", "", ""])
        for k in range(1, self.N + 1):
            w.writerow([k, *(repr(float(v)) for v in self.thetas[k]), repr(float(self.steps[k - 1].mean())),
                        repr(float(self.etas[k - 1])), repr(float(self.grad_norms[k - 1])),
                        repr(float(self.batch_costs[k - 1]))])

    def report(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.N,
            "output_index": self.output_index,
            "theta_out": [float(v) for v in self.output],
            "theta_0": [float(v) for v in self.thetas[0]],
            "seeds": self.seeds,
            "evaluation": self.evaluation,
            "error": self.error,
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def _project(theta, box):
    if box is None:
        return theta
    lo, hi = box
    return np.clip(theta, lo, hi)


def _finish(method, thetas, steps, etas, gnorms, costs, k_done, R, seeds, error):
    thetas = np.asarray(thetas[: k_done + 1])
    out = thetas[R] if R is not None else thetas[-1]
    return OptimizerRun(method=method, thetas=thetas, steps=np.asarray(steps[:k_done]), etas=np.asarray(etas[:k_done]),
                        grad_norms=np.asarray(gnorms[:k_done]), batch_costs=np.asarray(costs[:k_done]),
                        output_index=k_done if R is None else R, output=out.copy(), seeds=seeds, error=error)


def run_sng_cfa(objective, theta0, N: int, rule=None, h: float = 0.05, *, train_seed: int = 0,
                box=(0.0, 3.0), omega_for=None) -> OptimizerRun:
    """Finite-difference stochastic gradient method; returns the last iterate.

    Iteration ``n`` draws path ``train_seed + n - 1`` unless ``omega_for``
    maps ``n`` to a path.  ``box`` projects iterates (``None`` disables).
    Failures of the objective stop the run and are recorded in ``error``
    with the trace kept.
    """
    if N < 1:
        raise ValueError("need N >= 1")
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    objective = as_objective(objective)
    rule = rule or RMSProp()
    theta = np.asarray(theta0, dtype=float).copy()
    d = theta.size
    thetas = [theta.copy()]
    steps, etas, gnorms, costs = [], [], [], []
    state = StepState()
    error = None
    for n in range(1, N + 1):
        omega = omega_for(n) if omega_for else train_seed + n - 1
        try:
            g, cost = _sng(objective, theta, h, omega)
        except Exception as exc:  # keep the trace for diagnosis
            error = f"iteration {n}: {type(exc).__name__}: {exc}"
            break
        a, state = apply_stepsize(rule, state, g)
        theta = _project(theta - a * g, box)
        thetas.append(theta.copy())
        steps.append(a)
        etas.append(h)
        gnorms.append(float(np.linalg.norm(g)))
        costs.append(cost)
    k_done = len(steps)
    seeds = {"train_seed": int(train_seed), "paths_per_iteration": 1}
    run = _finish("sng", thetas, steps, etas, gnorms, costs, k_done, None, seeds, error)
    assert run.thetas.shape == (k_done + 1, d)
    return run


def run_sgf_cfa(objective, theta0, N: int, schedule: SmoothingSchedule, batch: int = 12, *, rule=None,
                train_seed: int = 0, index_seed: int = 0, box=None, omega_for=None) -> OptimizerRun:
    """Gaussian-smoothing zeroth-order method with a random output index.

    Iteration ``k`` averages ``batch`` two-point estimators on paths
    ``train_seed + (k-1) * batch + j`` with fresh directions, then steps
    with ``alpha_k`` from the schedule, or from ``rule`` when given.  The
    output iterate ``theta^R`` has ``P(R = k)`` proportional to the
    stepsize used at iteration ``k`` (the mean over coordinates for
    per-coordinate rules).
    """
    if N < 1:
        raise ValueError("need N >= 1")
    if batch < 1:
        raise ValueError("batch must be at least 1")
    objective = as_objective(objective)
    theta = np.asarray(theta0, dtype=float).copy()
    d = theta.size
    if schedule.d != d:
        raise ValueError(f"schedule dimension {schedule.d} != parameter dimension {d}")
    rng = np.random.default_rng(np.random.SeedSequence([int(index_seed), 0x5347]))
    thetas = [theta.copy()]
    steps, etas, gnorms, costs = [], [], [], []
    state = StepState()
    error = None
    for k in range(1, N + 1):
        eta_k, alpha_k = schedule_values(schedule, k)
        G = np.zeros(d)
        batch_costs = []
        try:
            for j in range(batch):
                v = rng.standard_normal(d)
                omega = omega_for(k, j) if omega_for else train_seed + (k - 1) * batch + j
                g, f0 = _sgf(objective, theta, float(eta_k), omega, v)
                G += g
                batch_costs.append(f0)
        except Exception as exc:
            error = f"iteration {k}: {type(exc).__name__}: {exc}"
            break
        G /= batch
        if rule is None:
            a = np.full(d, float(alpha_k))
        else:
            a, state = apply_stepsize(rule, state, G)
            if not np.all(a > 0):
                a = np.maximum(a, np.finfo(float).tiny)
        theta = _project(theta - a * G, box)
        thetas.append(theta.copy())
        steps.append(a)
        etas.append(float(eta_k))
        gnorms.append(float(np.linalg.norm(G)))
        costs.append(float(np.mean(batch_costs)))
    k_done = len(steps)
    R = None
    if k_done:
        R = sample_output_index([s.mean() for s in steps], rng)
    seeds = {"train_seed": int(train_seed), "index_seed": int(index_seed), "paths_per_iteration": int(batch)}
    run = _finish("sgf", thetas, steps, etas, gnorms, costs, k_done, R, seeds, error)
    return run


def evaluate_output(sim: Simulator, theta: Parameterization, vector, n_test: int = 1000,
                    test_seed: int = TEST_SEED_BASE, benchmark=None) -> dict:
    """Held-out comparison of ``vector`` against the benchmark policy."""
    from pcfa.policy import Identity

    bench = sim.evaluate(benchmark or Identity(), n_test, test_seed)
    rep = sim.evaluate(theta.with_vector(vector), n_test, test_seed)
    return {
        "n_test": n_test,
        "test_seed": test_seed,
        "mean_profit": rep.mean_profit,
        "benchmark_mean_profit": bench.mean_profit,
        "delta_f": policy_improvement(rep, bench),
        "delta_f_stderr": improvement_stderr(rep, bench),
    }


# ---------------------------------------------------------------- static mode


@dataclass(frozen=True)
class StaticPoint:
    value: float  # optimal value of the static LP plus the demand constant
    subgradient: np.ndarray
    degenerate: bool | None  # None when the fast solver was used
    plan: np.ndarray = field(repr=False, default=None)


class StaticObjective:
    """One-shot planning LP over the whole horizon (affine wind rhs).

    ``values`` returns the LP's optimal cost, the convex function of
    ``(theta0, theta1)`` that the static method minimizes; ``point`` also
    returns its subgradient from the duals of the wind rows.  ``plan_cost``
    scores the plan against the realized wind instead.

    The default solver is the compiled dual simplex restarted from the
    slack basis on every call; ``reference=True`` uses :func:`pcfa.lp.solve`,
    which also reports basis degeneracy.
    """

    def __init__(self, cfg: SimConfig, reference: bool = False):
        self.cfg = cfg
        self.sim = Simulator(cfg)
        self.reference = reference
        self.evaluations = 0
        self._solver = None

    def _solve(self, lp, reference):
        if reference:
            sol = solve(lp)
            if sol.status is not Status.OPTIMAL:
                raise RuntimeError(f"static LP is {sol.status.name.lower()}")
            return sol
        if self._solver is None:
            self._solver = WarmStartSolver(lp.constraints, lp.equality)
        self._solver.reset()
        x, duals, _ = self._solver.solve(lp.rhs, lp.objective, lp.upper)
        return LpSolution(status=Status.OPTIMAL, point=x, objective_value=float(lp.objective @ x),
                          duals=duals, degenerate=None)

    def point(self, vector, omega, strict: bool = False) -> StaticPoint:
        theta = AffineRhs(*np.asarray(vector, dtype=float))
        fs = self.sim.path(omega)
        lp, const, rows, f0 = static_lp(theta, fs, self.cfg.model, self.cfg.initial_storage)
        sol = self._solve(lp, self.reference or strict)
        self.evaluations += 1
        g = static_subgradient(sol, lp, rows, theta.rhs_gradient(f0), strict=strict)
        return StaticPoint(value=sol.objective_value + const, subgradient=g, degenerate=sol.degenerate,
                           plan=sol.point)

    def values(self, V, omega) -> np.ndarray:
        return np.array([self.point(v, omega).value for v in np.atleast_2d(V)])

    def plan_cost(self, vector, omega) -> float:
        """Cost of the static plan executed against the realized path."""
        pt = self.point(vector, omega)
        return static_plan_cost(pt.plan, self.sim.path(omega), self.cfg.model, self.cfg.initial_storage)


def static_subgradient(solution, lp, rows, rhs_gradient, strict: bool = True) -> np.ndarray:
    """Chain rule through the parameterized rows: ``sum_rows db/dtheta * dF/db``.

    ``rhs_gradient`` has one row per entry of ``rows``.  With ``strict`` a
    degenerate optimal basis raises :class:`DegenerateBasisError`; otherwise
    the multipliers at hand are used, which still give a subgradient of the
    convex optimal-value function.
    """
    if strict:
        sens = rhs_sensitivity(solution, lp)
    else:
        sens = -np.asarray(solution.duals, dtype=float)
    J = np.asarray(rhs_gradient, dtype=float)
    if J.ndim == 1:
        J = J[:, None]
    return J.T @ sens[np.asarray(rows)]


def run_static_cfa(objective: StaticObjective, theta0, N: int, rule=None, *, coords=None, box=((0.0, 0.0), (10.0, 3.0)),
                   train_seed: int = 0, theta_template: Parameterization | None = None) -> OptimizerRun:
    """Projected stochastic subgradient steps; outputs the averaged iterate.

    ``coords`` selects the free coordinates of ``(theta0, theta1)``; the
    rest stay at ``theta0``'s values.
    """
    if theta_template is not None and (theta_template.touches_inventory or not isinstance(theta_template, AffineRhs)):
        raise ValueError("static mode needs an affine rhs that leaves inventory rows alone")
    if N < 1:
        raise ValueError("need N >= 1")
    rule = rule or Polynomial()
    theta = np.asarray(theta0, dtype=float).copy()
    free = np.zeros(theta.size, dtype=bool)
    free[list(range(theta.size)) if coords is None else list(coords)] = True
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    thetas = [theta.copy()]
    steps, etas, gnorms, costs = [], [], [], []
    state = StepState()
    error = None
    for n in range(1, N + 1):
        try:
            pt = objective.point(theta, train_seed + n - 1)
        except Exception as exc:
            error = f"iteration {n}: {type(exc).__name__}: {exc}"
            break
        g = np.where(free, pt.subgradient, 0.0)
        a, state = apply_stepsize(rule, state, g[free])
        full = np.zeros(theta.size)
        full[free] = a
        theta = np.where(free, np.clip(theta - full * g, lo, hi), theta)
        thetas.append(theta.copy())
        steps.append(full)
        etas.append(0.0)
        gnorms.append(float(np.linalg.norm(g)))
        costs.append(pt.value)
    k_done = len(steps)
    run = _finish("static", thetas, steps, etas, gnorms, costs, k_done, None,
                  {"train_seed": int(train_seed), "paths_per_iteration": 1}, error)
    if k_done:
        run.output = np.asarray(run.thetas[1:]).mean(axis=0)
    return run
