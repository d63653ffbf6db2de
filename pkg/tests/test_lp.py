import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcfa.lp import (DegenerateBasisError, LinearProgram, LpError, Status, WarmStartSolver, enumerate_vertices,
                     rhs_sensitivity, solve)


def lp(c, A, b, **kw):
    return LinearProgram(objective=np.array(c, float), constraints=np.array(A, float).reshape(len(b), len(c)),
                         rhs=np.array(b, float), **kw)


def random_bounded_lp(rng, n=None, m=None):
    """Feasible LP whose first row bounds the sum of the variables."""
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 7))
    A = rng.uniform(-1, 1, size=(m, n))
    A[0] = rng.uniform(0.2, 1.0, size=n)
    x0 = rng.uniform(0, 1, size=n)
    b = A @ x0 + rng.uniform(0, 1, size=m)
    c = rng.uniform(-1, 1, size=n)
    return lp(c, A, b)


# ------------------------------------------------------------ solve


def test_single_upper_bound():
    s = solve(lp([-1], [[1]], [5]))
    assert s.status is Status.OPTIMAL
    assert s.point[0] == pytest.approx(5.0)
    assert s.objective_value == pytest.approx(-5.0)


def test_no_constraints_nonnegativity_binds():
    s = solve(LinearProgram(objective=np.array([1.0]), constraints=np.zeros((0, 1)), rhs=np.zeros(0)))
    assert s.status is Status.OPTIMAL
    assert s.point[0] == 0.0 and s.objective_value == 0.0


def test_contradictory_bound_is_infeasible():
    assert solve(lp([1], [[1]], [-1])).status is Status.INFEASIBLE


def test_unbounded_reports_ray():
    s = solve(lp([-1, 0], [[0, 1]], [1]))
    assert s.status is Status.UNBOUNDED
    assert s.ray is not None and s.ray[0] > 0


def test_equality_rows_and_upper_bounds():
    # min -x - 2y  s.t. x + y = 3, y <= 2 (bound)
    s = solve(lp([-1, -2], [[1, 1]], [3], upper=np.array([np.inf, 2.0]), equality=np.array([True])))
    assert s.status is Status.OPTIMAL
    np.testing.assert_allclose(s.point, [1.0, 2.0], atol=1e-12)


def test_invalid_data_rejected():
    with pytest.raises(ValueError):
        lp([1, 2], [[1]], [1])
    with pytest.raises(ValueError):
        lp([np.nan], [[1]], [1])
    with pytest.raises(ValueError):
        LinearProgram(objective=np.zeros(0), constraints=np.zeros((0, 0)), rhs=np.zeros(0))


def test_deterministic_for_fixed_input():
    rng = np.random.default_rng(3)
    prob = random_bounded_lp(rng, 5, 5)
    a, b = solve(prob), solve(prob)
    assert a.basis == b.basis
    assert np.array_equal(a.point, b.point)


def test_matches_vertex_enumeration_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        prob = random_bounded_lp(rng)
        s = solve(prob)
        verts = enumerate_vertices(prob)
        assert s.status is Status.OPTIMAL
        assert abs(s.objective_value - verts[0][1]) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.01, 100))
def test_objective_scaling_keeps_the_vertex(seed, lam):
    prob = random_bounded_lp(np.random.default_rng(seed))
    a = solve(prob)
    b = solve(lp(prob.objective * lam, prob.constraints, prob.rhs))
    np.testing.assert_allclose(b.point, a.point, atol=1e-9)
    assert b.objective_value == pytest.approx(lam * a.objective_value, rel=1e-9, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_feasibility_residual_and_complementary_slackness(seed):
    prob = random_bounded_lp(np.random.default_rng(seed))
    s = solve(prob)
    r = prob.constraints @ s.point - prob.rhs
    assert r.max() <= 1e-8 * (1 + np.abs(prob.rhs).max())
    assert np.all(s.duals >= -1e-9)
    assert np.all(np.abs(s.duals * r) <= 1e-7)
    assert s.objective_value == pytest.approx(prob.objective @ s.point, abs=1e-12)
    # reduced costs of the bounded-below columns
    red = prob.objective + prob.constraints.T @ s.duals
    assert np.all(red[s.point <= 1e-9] >= -1e-7)
    assert np.all(np.abs(red[s.point > 1e-7]) <= 1e-7)


# ------------------------------------------------------------ vertices


def test_vertices_of_an_interval():
    verts = enumerate_vertices(lp([1], [[1]], [5]))
    assert sorted(float(v[0][0]) for v in verts) == [0.0, 5.0]


def test_vertices_of_a_square():
    verts = enumerate_vertices(lp([-1, -1], [[1, 0], [0, 1]], [1, 1]))
    assert len(verts) == 4
    np.testing.assert_allclose(verts[0][0], [1, 1])
    assert verts[0][1] == pytest.approx(-2.0)


def test_vertices_of_infeasible_instance():
    assert enumerate_vertices(lp([1], [[1]], [-1])) == []


def test_vertex_size_guard():
    with pytest.raises(ValueError):
        enumerate_vertices(lp(np.ones(9), np.ones((1, 9)), [1]))
    with pytest.raises(ValueError):
        enumerate_vertices(lp([1], np.ones((11, 1)), np.ones(11)))


# ------------------------------------------------------------ sensitivities


def test_sensitivity_single_row():
    prob = lp([-1], [[1]], [5])
    sens = rhs_sensitivity(solve(prob), prob)
    assert sens[0] == pytest.approx(-1.0)
    up = solve(lp([-1], [[1]], [5.1])).objective_value
    dn = solve(lp([-1], [[1]], [4.9])).objective_value
    assert sens[0] == pytest.approx((up - dn) / 0.2)


def test_sensitivity_of_slack_row_is_zero():
    prob = lp([-1], [[1], [1]], [5, 7])
    sens = rhs_sensitivity(solve(prob), prob)
    np.testing.assert_allclose(sens, [-1.0, 0.0], atol=1e-12)


def test_sensitivity_two_rows():
    prob = lp([-1, -1], [[1, 0], [0, 1]], [1, 1])
    np.testing.assert_allclose(rhs_sensitivity(solve(prob), prob), [-1, -1])


def test_degenerate_basis_flagged():
    # two rows bind at the same vertex
    prob = lp([-1], [[1], [2]], [1, 2])
    s = solve(prob)
    assert s.degenerate
    with pytest.raises(DegenerateBasisError):
        rhs_sensitivity(s, prob)


def test_sensitivity_matches_central_differences():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 40:
        prob = random_bounded_lp(rng)
        s = solve(prob)
        if s.degenerate:
            continue
        sens = rhs_sensitivity(s, prob)
        h = 1e-6
        for i in range(prob.n_cons):
            bp, bm = prob.rhs.copy(), prob.rhs.copy()
            bp[i] += h
            bm[i] -= h
            fd = (solve(lp(prob.objective, prob.constraints, bp)).objective_value
                  - solve(lp(prob.objective, prob.constraints, bm)).objective_value) / (2 * h)
            assert abs(fd - sens[i]) <= 1e-6
        checked += 1


def test_sensitivity_needs_optimal_solution():
    prob = lp([1], [[1]], [-1])
    with pytest.raises(ValueError):
        rhs_sensitivity(solve(prob), prob)


# ------------------------------------------------------------ warm-start solver


def test_warm_start_solver_agrees_with_reference():
    rng = np.random.default_rng(5)
    n, m = 6, 5
    A = rng.uniform(-1, 1, size=(m, n))
    ws = WarmStartSolver(A)
    u = np.full(n, 3.0)
    for _ in range(30):
        b = A @ rng.uniform(0, 1, n) + rng.uniform(0, 1, m)
        c = rng.uniform(-1, 1, n)
        x, duals, _ = ws.solve(b, c, u)
        ref = solve(lp(c, A, b, upper=u))
        assert c @ x == pytest.approx(ref.objective_value, abs=1e-9)
        assert np.all(A @ x - b <= 1e-9)
        # dual objective equals primal objective (bounds enter through reduced costs)
        red = c + A.T @ duals
        assert -b @ duals + np.minimum(red, 0) @ u == pytest.approx(c @ x, abs=1e-8)


def test_warm_start_solver_infeasible_raises():
    ws = WarmStartSolver(np.array([[1.0]]))
    with pytest.raises(LpError):
        ws.solve(np.array([-1.0]), np.array([1.0]), np.array([5.0]))


def test_solve_many_matches_single_solves():
    rng = np.random.default_rng(9)
    n, m = 5, 4
    A = rng.uniform(-1, 1, size=(m, n))
    ws = WarmStartSolver(A)
    u = np.full(n, 2.0)
    b0 = A @ rng.uniform(0, 1, n) + 1.0
    c = rng.uniform(-1, 1, n)
    ws.solve(b0, c, u)
    B = b0 + rng.uniform(0, 0.5, size=(6, m))
    X = ws.solve_many(B, np.tile(c, (6, 1)), np.tile(u, (6, 1)))
    for k in range(6):
        assert c @ X[k] == pytest.approx(solve(lp(c, A, B[k], upper=u)).objective_value, abs=1e-9)
