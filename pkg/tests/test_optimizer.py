import io
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from pcfa.lp import LinearProgram, solve
from pcfa.optimizer import (AdaGrad, CallableObjective, Polynomial, RMSProp, SmoothingSchedule, StaticObjective,
                            StepState, apply_stepsize, output_pmf, run_sgf_cfa, run_sng_cfa, run_static_cfa,
                            sample_output_index, schedule_values, sgf_gradient_estimate, sng_gradient_estimate,
                            static_subgradient)
from pcfa.policy import AffineRhs, ExponentialStorageBounds
from pcfa.simulator import SimConfig

# ------------------------------------------------------------ stepsizes


def test_adagrad_first_step():
    steps, st = apply_stepsize(AdaGrad(eta=1.0, eps=0.0), StepState(), [3.0, 4.0])
    np.testing.assert_allclose(steps, [1 / 3, 1 / 4])
    np.testing.assert_array_equal(st.sum_sq, [9.0, 16.0])


def test_rmsprop_first_step():
    steps, st = apply_stepsize(RMSProp(eta=0.3, beta=0.9), StepState(), [3.0, 4.0])
    assert st.avg_sq == pytest.approx(2.5)
    np.testing.assert_allclose(steps, 0.3 / np.sqrt(2.5))


def test_zero_gradient_with_eps_gives_finite_step():
    steps, st = apply_stepsize(AdaGrad(eta=1.0, eps=1e-8), StepState(), np.zeros(3))
    assert np.all(np.isfinite(steps))
    np.testing.assert_array_equal(st.sum_sq, 0.0)


def test_polynomial_rule():
    st = StepState()
    for k in range(1, 5):
        steps, st = apply_stepsize(Polynomial(), st, [1.0])
        assert steps[0] == 1 / np.sqrt(k)


def test_rules_validate():
    for bad in (lambda: AdaGrad(eta=0), lambda: RMSProp(beta=1.0), lambda: RMSProp(eta=-1), lambda: Polynomial(0)):
        with pytest.raises(ValueError):
            bad()


def test_recursions_on_a_recorded_tape():
    tape = np.random.default_rng(3).normal(size=(100, 4))
    st_a, st_r = StepState(), StepState()
    G = np.zeros(4)
    gbar = 0.0
    for g in tape:
        a, st_a = apply_stepsize(AdaGrad(0.5, 1e-6), st_a, g)
        G += g * g
        np.testing.assert_allclose(a, 0.5 / np.sqrt(G + 1e-6), rtol=1e-14)
        r, st_r = apply_stepsize(RMSProp(0.5, 0.8), st_r, g)
        gbar = 0.8 * gbar + 0.2 * (g @ g)
        np.testing.assert_allclose(r, 0.5 / np.sqrt(gbar), rtol=1e-14)


# ------------------------------------------------------------ schedules and output index


def test_schedule_examples():
    s = SmoothingSchedule(L0=1.0, d=1, beta=0.25)
    assert schedule_values(s, 1) == (5.0, 1.0)
    eta, alpha = schedule_values(s, 16)
    assert eta == pytest.approx(2.5) and alpha == 0.25
    e, _ = schedule_values(SmoothingSchedule(2.0, 23, 0.3), np.arange(1, 10**6 + 1, 997))
    assert np.all(np.diff(e) < 0)
    with pytest.raises(ValueError):
        schedule_values(s, 0)
    for beta in (0.0, 0.5):
        with pytest.raises(ValueError):
            SmoothingSchedule(beta=beta)


def test_pmf_examples():
    np.testing.assert_allclose(output_pmf([1.0, 1.0]), [0.5, 0.5])
    p = output_pmf(1 / np.sqrt([1.0, 2.0]))
    assert p[0] == pytest.approx(1 / (1 + 1 / np.sqrt(2)), rel=1e-15)
    with pytest.raises(ValueError):
        output_pmf([1.0, 0.0])
    with pytest.raises(ValueError):
        sample_output_index([1.0, -1.0], np.random.default_rng(0))


def test_pmf_matches_rational_weights():
    w = [Fraction(1, k) for k in range(1, 51)]
    total = sum(w)
    p = output_pmf([float(x) for x in w])
    for pk, wk in zip(p, w):
        assert abs(pk - float(wk / total)) <= 4e-16


def test_output_index_frequencies():
    alphas = 1 / np.sqrt(np.arange(1, 11))
    rng = np.random.default_rng(123)
    draws = np.array([sample_output_index(alphas, rng) for _ in range(100_000)])
    assert draws.min() >= 1 and draws.max() <= 10
    counts = np.bincount(draws, minlength=11)[1:]
    expected = output_pmf(alphas) * draws.size
    _, pval = stats.chisquare(counts, expected)
    assert pval > 1e-3
    sd = np.sqrt(expected * (1 - expected / draws.size))
    assert np.all(np.abs(counts - expected) <= 3 * sd + 1)


# ------------------------------------------------------------ gradient estimators


def test_sgf_constant_function_gives_zero():
    g = sgf_gradient_estimate(lambda th, w: 7.0, np.ones(3), 0.1, 0, np.array([1.0, -2.0, 0.3]))
    np.testing.assert_array_equal(g, 0.0)


def test_sgf_linear_one_dimensional():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(100_000)
    G = np.array([sgf_gradient_estimate(lambda th, w: 3 * th[0], [0.4], 0.5, 0, [x])[0] for x in v[:200]])
    np.testing.assert_allclose(G, 3 * v[:200] ** 2)
    G = 3 * v**2  # same estimator, vectorized
    assert abs(G.mean() - 3) <= 5 * G.std(ddof=1) / np.sqrt(G.size)


def test_sgf_small_eta_is_directional():
    f = lambda th, w: float(np.sin(th[0]) + th[1] ** 2)
    th, v = np.array([0.3, -0.7]), np.array([0.6, 1.1])
    grad = np.array([np.cos(0.3), -1.4])
    for eta, tol in ((1e-2, 2e-2), (1e-4, 2e-4)):
        np.testing.assert_allclose(sgf_gradient_estimate(f, th, eta, 0, v), (grad @ v) * v, atol=tol)


def test_sng_examples():
    assert sng_gradient_estimate(lambda th, w: th[0] ** 2, [2.0], 0.1, 0)[0] == pytest.approx(4.0, abs=1e-12)
    np.testing.assert_array_equal(sng_gradient_estimate(lambda th, w: 1.0, [1.0, 2.0], 0.1, 0), 0.0)
    a = np.array([1.5, -2.0, 0.25])
    for h in (0.01, 0.5):
        np.testing.assert_allclose(sng_gradient_estimate(lambda th, w: a @ th, np.zeros(3), h, 0), a, atol=1e-12)
    with pytest.raises(ValueError):
        sng_gradient_estimate(lambda th, w: 0.0, [1.0], 0.0, 0)


def test_common_path_is_shared():
    seen = []
    obj = CallableObjective(lambda th, w: seen.append(w) or 0.0)
    sng_gradient_estimate(obj, np.zeros(4), 0.1, 17)
    assert seen == [17] * 8


def test_smoothing_stays_close_to_lipschitz_function():
    # |x - 1| + 0.5 max(x, 0) is Lipschitz with L0 = 1.5
    F = lambda x: np.abs(x - 1) + 0.5 * np.maximum(x, 0)
    v = np.random.default_rng(8).standard_normal(400_000)
    for eta in (0.05, 0.3, 1.0):
        for th in (-0.5, 0.0, 1.0, 2.0):
            vals = F(th + eta * v)
            err = abs(vals.mean() - F(th))
            assert err <= eta * 1.5 + 4 * vals.std() / np.sqrt(v.size)


def test_sgf_unbiased_for_linear_plus_noise():
    a = np.array([1.0, -2.0, 0.5])

    def f(th, w):
        return float(a @ th + np.random.default_rng(w).normal())

    rng = np.random.default_rng(1)
    n = 20_000
    th = np.array([0.2, 0.1, -0.3])
    G = np.array([sgf_gradient_estimate(f, th, 0.5, i, rng.standard_normal(3)) for i in range(n)])
    se = G.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(G.mean(axis=0) - a) <= 5 * se)


# ------------------------------------------------------------ runs


def noisy_quadratic(center, noise):
    def f(th, w):
        return float(np.sum((np.asarray(th) - center) ** 2) + noise * np.random.default_rng(w).normal())
    return CallableObjective(f)


def test_sng_zero_gradient_keeps_theta():
    th0 = np.array([0.4, 1.3])
    run = run_sng_cfa(lambda th, w: 5.0, th0, 20)
    np.testing.assert_array_equal(run.output, th0)
    assert run.thetas.shape == (21, 2)


def test_sng_cost_accounting():
    obj = noisy_quadratic(np.zeros(5), 0.0)
    run_sng_cfa(obj, np.ones(5), 7)
    assert obj.evaluations == 7 * 2 * 5


def test_sng_converges_on_noisy_quadratic():
    obj = noisy_quadratic(np.array([1.7]), 0.1)
    th0 = np.array([0.2])
    run = run_sng_cfa(obj, th0, 400, RMSProp(eta=0.05), h=0.05, box=None)
    assert abs(run.output[0] - 1.7) <= 0.05 * abs(th0[0] - 1.7)
    assert run.output_index == 400


def test_sgf_single_step():
    obj = noisy_quadratic(np.zeros(3), 0.0)
    th0 = np.array([1.0, -1.0, 0.5])
    run = run_sgf_cfa(obj, th0, 1, SmoothingSchedule(0.01, 3), batch=4)
    assert run.output_index == 1
    np.testing.assert_array_equal(run.output, run.thetas[1])
    assert run.thetas.shape == (2, 3)
    assert obj.evaluations == 8


def test_sgf_reaches_small_gradient_on_quadratic():
    d = 5
    center = np.linspace(-1, 1, d)
    grad = lambda th: 2 * (th - center)
    obj = noisy_quadratic(center, 0.1)
    th0 = center + 2.0
    run = run_sgf_cfa(obj, th0, 800, SmoothingSchedule(0.005, d), batch=12, rule=RMSProp(0.05))
    assert run.thetas.shape == (801, d)
    assert np.linalg.norm(grad(run.output)) <= 0.1 * np.linalg.norm(grad(th0))


def test_sgf_checks_dimension_and_records_errors():
    with pytest.raises(ValueError):
        run_sgf_cfa(lambda th, w: 0.0, np.zeros(2), 3, SmoothingSchedule(d=3))

    def boom(th, w):
        if w >= 5:
            raise RuntimeError("bad path")
        return 0.0

    run = run_sgf_cfa(boom, np.zeros(2), 10, SmoothingSchedule(d=2), batch=2)
    assert "bad path" in run.error
    assert run.N == 2 and run.thetas.shape == (3, 2)


def test_trace_and_report():
    run = run_sgf_cfa(noisy_quadratic(np.zeros(2), 0.0), np.ones(2), 5, SmoothingSchedule(0.1, 2), batch=2)
    buf = io.StringIO()
    run.write_trace(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "k,theta_0,theta_1,alpha,eta,grad_norm,batch_mean_cost"
    assert len(lines) == 7
    rep = run.report()
    assert rep["method"] == "sgf" and 1 <= rep["output_index"] <= 5
    assert rep["seeds"]["paths_per_iteration"] == 2


# ------------------------------------------------------------ static mode


def test_static_subgradient_one_stage():
    theta = 4.0
    prob = LinearProgram(objective=np.array([-1.0]), constraints=np.array([[1.0]]), rhs=np.array([theta]))
    g = static_subgradient(solve(prob), prob, [0], [1.0])
    assert g[0] == pytest.approx(-1.0)
    assert static_subgradient(solve(prob), prob, [0], [0.0])[0] == 0.0


def test_static_subgradient_affine_chain():
    f = np.array([3.0, 7.0])
    J = AffineRhs.rhs_gradient(f)
    np.testing.assert_array_equal(J, [[1.0, 3.0], [1.0, 7.0]])
    # two independent rows x_i <= theta0 + theta1 f_i, each worth -c_i
    c = np.array([-1.0, -2.0])
    th = np.array([0.5, 1.0])
    prob = LinearProgram(objective=c, constraints=np.eye(2), rhs=th[0] + th[1] * f)
    g = static_subgradient(solve(prob), prob, [0, 1], J)
    np.testing.assert_allclose(g, [c.sum(), c @ f])


STATIC = SimConfig.build(T=8, H=8)


def test_static_subgradient_matches_differences():
    obj = StaticObjective(STATIC)
    rng = np.random.default_rng(4)
    h, checked = 1e-5, 0
    for i in range(15):
        v = rng.uniform([0, 0], [5, 2])
        pt = obj.point(v, i)
        for j in range(2):
            e = h * np.eye(2)[j]
            f_p, f_0, f_m = obj.values(v + e, i)[0], pt.value, obj.values(v - e, i)[0]
            fwd, bwd = (f_p - f_0) / h, (f_0 - f_m) / h
            if abs(fwd - bwd) > 1e-6 * max(1.0, abs(fwd)):
                continue  # basis change inside the stencil
            assert pt.subgradient[j] == pytest.approx((f_p - f_m) / (2 * h), rel=1e-4, abs=1e-4)
            checked += 1
    assert checked >= 15


def test_static_fast_and_reference_solvers_agree():
    fast, ref = StaticObjective(STATIC), StaticObjective(STATIC, reference=True)
    for i, v in enumerate(([0.0, 1.0], [2.0, 0.5], [1.0, 2.5])):
        a, b = fast.point(v, i), ref.point(v, i)
        assert a.value == pytest.approx(b.value, abs=1e-7)
        np.testing.assert_allclose(a.subgradient, b.subgradient, atol=1e-6)
        assert b.degenerate in (True, False) and a.degenerate is None


def test_static_value_convex_along_a_line():
    obj = StaticObjective(STATIC)
    ts = np.linspace(0, 3, 31)
    vals = np.array([obj.values([0.5, t], 2)[0] for t in ts])
    assert np.all(np.diff(vals, 2) >= -1e-7)


def test_static_run_stays_at_the_optimum():
    obj = StaticObjective(STATIC)
    box = ((0.0, 0.0), (10.0, 3.0))
    top = np.array([10.0, 3.0])
    run = run_static_cfa(obj, top, 10, box=box)
    np.testing.assert_allclose(run.output, top)
    assert run.thetas.shape == (11, 2)


def test_static_run_rejects_inventory_parameterization():
    with pytest.raises(ValueError):
        run_static_cfa(StaticObjective(STATIC), [0.0, 1.0], 3, theta_template=ExponentialStorageBounds(0, 0, 1, 0))
