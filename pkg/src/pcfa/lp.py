"""Small dense linear programs and a reference revised simplex solver.

Problems have the form::

    minimize    c . x
    subject to  A x <= b        (rows flagged in ``equality`` hold with =)
                0 <= x <= u     (u defaults to +inf)

:func:`solve` is a two-phase bounded primal revised simplex with Dantzig
pricing, lowest-index tie breaking and a switch to Bland's rule after a run
of degenerate pivots, so results are a deterministic function of the input.
:func:`enumerate_vertices` is a brute-force oracle for tiny instances.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

TOL = 1e-9
_REFACTOR_EVERY = 50
_BLAND_AFTER = 25


class LpError(Exception):
    """Base class for LP failures that are not a status (infeasible/unbounded)."""


class NumericalError(LpError):
    """The basis became too ill-conditioned to trust the answer."""


class DegenerateBasisError(LpError):
    """Right-hand-side sensitivities are not unique at a degenerate vertex."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    objective: np.ndarray
    constraints: np.ndarray
    rhs: np.ndarray
    upper: np.ndarray | None = None
    equality: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        b = np.asarray(self.rhs, dtype=float).reshape(-1)
        A = np.asarray(self.constraints, dtype=float)
        if A.size == 0:
            A = A.reshape(b.size, c.size)
        if c.size < 1:
            raise ValueError("an LP needs at least one variable")
        if A.shape != (b.size, c.size):
            raise ValueError(
                f"constraint matrix shape {A.shape} does not match "
                f"rhs length {b.size} and objective length {c.size}"
            )
        u = np.full(c.size, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        eq = np.zeros(b.size, dtype=bool) if self.equality is None else np.asarray(self.equality, dtype=bool).reshape(-1)
        if u.size != c.size or eq.size != b.size:
            raise ValueError("upper bounds / equality mask have the wrong length")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("LP data must be finite")
        if np.any(np.isnan(u)) or np.any(u < 0):
            raise ValueError("upper bounds must be nonnegative")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraints", A)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "upper", u)
        object.__setattr__(self, "equality", eq)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_cons(self) -> int:
        return self.rhs.size


@dataclass
class LpSolution:
    """Result of :func:`solve`.

    ``basis`` holds column indices into ``[x | slacks]``; index ``n + i`` is
    the slack of row ``i``. ``duals`` are the nonnegative multipliers of the
    ``<=`` rows (free in sign for equality rows), so the derivative of the
    optimal value with respect to ``rhs`` is ``-duals``.
    """

    status: Status
    point: np.ndarray
    objective_value: float
    basis: tuple[int, ...] = ()
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False
    ray: np.ndarray | None = None
    iterations: int = 0


def _inverse(B: np.ndarray) -> np.ndarray:
    if B.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular basis matrix") from exc
    if not np.all(np.isfinite(Binv)) or np.linalg.cond(B) > 1e12:
        raise NumericalError("ill-conditioned basis matrix")
    return Binv


class _BoundedPrimal:
    """Bounded-variable primal revised simplex on ``A z = b, 0 <= z <= u``."""

    def __init__(self, A, b, upper, head, max_iter):
        self.A = A
        self.b = b
        self.upper = upper
        self.m, self.N = A.shape
        self.head = list(head)
        self.at_upper = np.zeros(self.N, dtype=bool)
        self.max_iter = max_iter
        self.iterations = 0
        self.refactor()

    def nonbasic_values(self):
        z = np.where(self.at_upper, self.upper, 0.0)
        z[self.head] = 0.0
        return z

    def refactor(self):
        self.Binv = _inverse(self.A[:, self.head])
        self.xB = self.Binv @ (self.b - self.A @ self.nonbasic_values())

    def values(self):
        z = self.nonbasic_values()
        z[self.head] = self.xB
        return z

    def run(self, cost):
        """Iterate to optimality for ``cost``; returns a status and a ray."""
        m = self.m
        degenerate_run = 0
        basic = np.zeros(self.N, dtype=bool)
        while True:
            if self.iterations > self.max_iter:
                raise NumericalError("simplex iteration limit reached")
            basic[:] = False
            basic[self.head] = True
            y = cost[self.head] @ self.Binv if m else np.zeros(0)
            d = cost - y @ self.A
            can_rise = ~basic & ~self.at_upper & (self.upper > 0) & (d < -TOL)
            can_fall = ~basic & self.at_upper & (d > TOL)
            eligible = can_rise | can_fall
            if not eligible.any():
                return Status.OPTIMAL, None
            if degenerate_run > _BLAND_AFTER:
                q = int(np.flatnonzero(eligible)[0])
            else:
                q = int(np.argmax(np.where(eligible, np.abs(d), -1.0)))
            direction = 1.0 if can_rise[q] else -1.0
            w = self.Binv @ self.A[:, q]
            dw = direction * w

            step, r, leave_upper = np.inf, -1, False
            ub = self.upper[self.head]
            for i in range(m):
                if dw[i] > TOL:
                    limit, to_upper = max(self.xB[i], 0.0) / dw[i], False
                elif dw[i] < -TOL and np.isfinite(ub[i]):
                    limit, to_upper = max(ub[i] - self.xB[i], 0.0) / -dw[i], True
                else:
                    continue
                if limit < step - TOL or (limit <= step + TOL and r >= 0 and self.head[i] < self.head[r]):
                    step, r, leave_upper = limit, i, to_upper

            span = self.upper[q]
            if not np.isfinite(step) and not np.isfinite(span):
                ray = np.zeros(self.N)
                ray[q] = direction
                ray[self.head] -= dw
                return Status.UNBOUNDED, ray

            self.iterations += 1
            if span <= step:
                self.at_upper[q] = not self.at_upper[q]
                self.xB -= span * dw
                degenerate_run = 0
                continue

            start = self.upper[q] if self.at_upper[q] else 0.0
            self.xB -= step * dw
            self.xB[r] = start + direction * step
            leaving = self.head[r]
            self.at_upper[leaving] = leave_upper
            self.at_upper[q] = False
            pivot = w[r]
            row = self.Binv[r] / pivot
            self.Binv -= np.outer(w, row)
            self.Binv[r] = row
            self.head[r] = q
            degenerate_run = degenerate_run + 1 if step <= TOL else 0
            if self.iterations % _REFACTOR_EVERY == 0:
                self.refactor()


def solve(lp: LinearProgram, max_iter: int | None = None) -> LpSolution:
    """Solve ``lp`` to a vertex optimum, reporting basis and duals."""
    c, A, b, u, eq = lp.objective, lp.constraints, lp.rhs, lp.upper, lp.equality
    m, n = A.shape
    if max_iter is None:
        max_iter = 200 * (m + n) + 1000

    needs_art = eq | (b < 0)
    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    art = np.zeros((m, n_art))
    art[art_rows, np.arange(n_art)] = np.where(b[art_rows] < 0, -1.0, 1.0)
    full = np.hstack([A, np.eye(m), art])
    slack_upper = np.where(eq, 0.0, np.inf)
    upper = np.concatenate([u, slack_upper, np.full(n_art, np.inf)])
    head = [n + i for i in range(m)]
    for k, i in enumerate(art_rows):
        head[i] = n + m + k

    engine = _BoundedPrimal(full, b, upper, head, max_iter)
    if n_art:
        phase1 = np.concatenate([np.zeros(n + m), np.ones(n_art)])
        engine.run(phase1)
        engine.refactor()
        infeasibility = engine.values()[n + m:].sum()
        if infeasibility > TOL * (1.0 + np.abs(b).max(initial=0.0)) * 10:
            return LpSolution(Status.INFEASIBLE, np.full(n, np.nan), np.nan, iterations=engine.iterations)
        engine.upper[n + m:] = 0.0
        _drive_out_artificials(engine, n + m)

    cost = np.concatenate([c, np.zeros(m + n_art)])
    status, ray = engine.run(cost)
    if status is Status.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED, np.full(n, np.nan), -np.inf, ray=ray[:n], iterations=engine.iterations)

    engine.refactor()
    z = engine.values()
    x = np.clip(z[:n], 0.0, u)
    residual = A @ x - b
    scale = 1.0 + np.abs(b).max(initial=0.0)
    viol = np.where(eq, np.abs(residual), np.maximum(residual, 0.0))
    if viol.max(initial=0.0) > 1e-6 * scale:
        raise NumericalError(f"returned point violates constraints by {viol.max():.3g}")
    y = cost[engine.head] @ engine.Binv if m else np.zeros(0)
    head = np.asarray(engine.head, dtype=int)
    xB = engine.xB
    ub = engine.upper[head]
    degenerate = bool(np.any(np.abs(xB) <= TOL) or np.any(np.abs(ub - xB) <= TOL))
    return LpSolution(
        Status.OPTIMAL,
        x,
        float(c @ x),
        basis=tuple(int(j) for j in head),
        duals=-y,
        degenerate=degenerate,
        iterations=engine.iterations,
    )


def _drive_out_artificials(engine: _BoundedPrimal, first_art: int) -> None:
    # Artificials stuck in the basis at zero are pivoted out where a real
    # column has a usable entry in their row; the rest mark redundant rows.
    for r in range(engine.m):
        if engine.head[r] < first_art:
            continue
        row = engine.Binv[r] @ engine.A[:, :first_art]
        basic = set(engine.head)
        for j in range(first_art):
            if j not in basic and abs(row[j]) > 1e-7:
                w = engine.Binv @ engine.A[:, j]
                leaving = engine.head[r]
                piv_row = engine.Binv[r] / w[r]
                engine.Binv -= np.outer(w, piv_row)
                engine.Binv[r] = piv_row
                engine.head[r] = j
                engine.at_upper[leaving] = False
                engine.refactor()
                break


def enumerate_vertices(lp: LinearProgram) -> list[tuple[np.ndarray, float]]:
    """All basic feasible points of ``lp`` with their objective values.

    Brute force over every choice of ``n`` active constraints, so only for
    tiny problems (n <= 8, m <= 10).
    """
    m, n = lp.constraints.shape
    if n > 8 or m > 10:
        raise ValueError(f"vertex enumeration is limited to n <= 8, m <= 10 (got n={n}, m={m})")
    finite_u = np.flatnonzero(np.isfinite(lp.upper))
    G = np.vstack([lp.constraints, -np.eye(n), np.eye(n)[finite_u]])
    h = np.concatenate([lp.rhs, np.zeros(n), lp.upper[finite_u]])
    forced = list(np.flatnonzero(lp.equality))
    optional = [i for i in range(G.shape[0]) if i not in forced]
    scale = 1.0 + np.abs(h).max(initial=0.0)

    found: dict[tuple, np.ndarray] = {}
    k = n - len(forced)
    if k < 0:
        return []
    for combo in itertools.combinations(optional, k):
        rows = forced + list(combo)
        M = G[rows]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[rows])
        slack = G @ x - h
        if np.any(slack[: m] > 1e-9 * scale) or np.any(slack[m:] > 1e-9 * scale):
            continue
        if np.any(np.abs(slack[forced]) > 1e-9 * scale):
            continue
        key = tuple(np.round(x, 9))
        found.setdefault(key, x)
    out = [(x, float(lp.objective @ x)) for x in found.values()]
    out.sort(key=lambda item: (item[1], tuple(item[0])))
    return out


def rhs_sensitivity(solution: LpSolution, lp: LinearProgram) -> np.ndarray:
    """Derivative of the optimal value with respect to each entry of ``rhs``."""
    if solution.status is not Status.OPTIMAL:
        raise ValueError("sensitivities need an optimal solution")
    if solution.duals.size != lp.n_cons:
        raise ValueError("solution does not belong to this LP")
    if solution.degenerate:
        raise DegenerateBasisError("basis is degenerate; rhs sensitivity is not unique")
    return -solution.duals


class WarmStartSolver:
    """Repeatedly solve LPs that share one constraint matrix.

    Every variable must have a finite upper bound.  Each call starts from the
    basis the previous call finished in, which is what makes rolling-horizon
    simulation affordable; the answer for a given call therefore depends on
    the sequence of earlier calls (only through tie-breaking among alternate
    optima).  :meth:`reset` restores the all-slack starting basis.
    """

    def __init__(self, constraints, equality=None):
        from scipy import sparse

        A = np.asarray(constraints, dtype=float)
        self.m, self.n = A.shape
        csc = sparse.csc_matrix(A)
        csc.sort_indices()
        self._indptr = csc.indptr.astype(np.int64)
        self._indices = csc.indices.astype(np.int64)
        self._data = csc.data.astype(float)
        self.equality = np.zeros(self.m, dtype=bool) if equality is None else np.asarray(equality, dtype=bool)
        self.reset()

    def reset(self) -> None:
        self.head = np.arange(self.n, self.n + self.m, dtype=np.int64)
        self.at_upper = np.zeros(self.n + self.m, dtype=np.bool_)
        self.Binv = np.eye(self.m)
        self._pivots = np.zeros(1, dtype=np.int64)

    def solve(self, rhs, objective, upper):
        """Return ``(point, duals, iterations)`` for the current data.

        ``duals`` follow the :class:`LpSolution` convention.  Raises
        :class:`NumericalError` if the solve fails twice (once warm, once
        from the slack basis).
        """
        from pcfa import _dualsimplex as ds

        b = np.ascontiguousarray(rhs, dtype=float)
        c = np.ascontiguousarray(objective, dtype=float)
        ux = np.ascontiguousarray(upper, dtype=float)
        us = ds.slack_bounds(self._indptr, self._indices, self._data, self.n, self.m, b, ux, self.equality)
        limit = 20 * (self.m + self.n)
        for attempt in range(2):
            try:
                status, iters, x, y = ds.dual_simplex(
                    self._indptr, self._indices, self._data, self.n, self.m,
                    b, c, ux, us, self.head, self.at_upper, self.Binv, self._pivots, limit,
                )
            except np.linalg.LinAlgError:
                status = ds.SINGULAR
            if status == ds.OPTIMAL:
                return x, -y, iters
            if status == ds.INFEASIBLE:
                raise LpError("lookahead LP is infeasible")
            self.reset()
            limit *= 10
        raise NumericalError("warm-start dual simplex failed to converge")

    def solve_many(self, rhs, objective, upper):
        """Solve a batch of LPs, each warm-started from the current basis.

        The solver's own state is left untouched.  Returns an ``(k, n)``
        array of points.  LPs whose warm start fails are retried from the
        slack basis.
        """
        from pcfa import _dualsimplex as ds

        B = np.array(np.atleast_2d(rhs), dtype=float, order="C")
        C = np.array(np.atleast_2d(objective), dtype=float, order="C")
        U = np.array(np.atleast_2d(upper), dtype=float, order="C")
        limit = 20 * (self.m + self.n)
        try:
            status, _, X = ds.solve_from_basis(
                self._indptr, self._indices, self._data, self.n, self.m, B, C, U, self.equality,
                self.head, self.at_upper, self.Binv, int(self._pivots[0]), limit,
            )
        except np.linalg.LinAlgError:
            status = np.full(B.shape[0], ds.SINGULAR)
            X = np.zeros((B.shape[0], self.n))
        if np.any(status == ds.INFEASIBLE):
            raise LpError("lookahead LP is infeasible")
        bad = np.flatnonzero(status != ds.OPTIMAL)
        if bad.size:
            fresh = WarmStartSolver.__new__(WarmStartSolver)
            fresh.__dict__.update(self.__dict__)
            for v in bad:
                fresh.reset()
                X[v] = fresh.solve(B[v], C[v], U[v])[0]
        return X
