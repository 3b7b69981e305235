import numpy as np
import pytest

from ibpg.config import preset
from ibpg.experiments import build_instance
from ibpg.kernels import quartic_kernel
from ibpg.regularizers import L1Norm
from ibpg.smooth import PhaseRetrieval, PhaseRetrievalData
from ibpg.solver import (
    CompositeProblem,
    DivergenceError,
    InertialSchedule,
    SolverConfig,
    SolverState,
    TRACE_COLUMNS,
    IterationTrace,
    ibpg_step,
    imd_step,
    initial_state,
    lyapunov_value,
    relative_error_certificate,
    run,
    run_imd,
    schedule_validate,
)
from oracles import bisect_cubic

GAMMA = 0.99 / 3


def quartic_1d(lam=0.0, reg=None):
    d = PhaseRetrievalData(np.array([[1.0]]), np.array([0.0]))
    return CompositeProblem(quartic_kernel(1), PhaseRetrieval(d), reg, lam, L=1 / GAMMA)


@pytest.fixture(scope="module")
def l1_instance():
    return build_instance(preset("desk-lyapunov")).problem


# schedules


def test_schedule_bpg_ok():
    rep = schedule_validate(InertialSchedule("bpg"), 100)
    assert rep.ok and rep.first_violation is None


@pytest.mark.parametrize("kappa", [1.5, 2.0])
def test_schedule_polynomial_alpha_three_ok(kappa):
    assert schedule_validate(InertialSchedule("polynomial", alpha=3.0, kappa=kappa), 10_000).ok


def test_schedule_far_outside_guidance_violates():
    rep = schedule_validate(InertialSchedule("polynomial", alpha=50.0, kappa=1.1), 10_000)
    assert not rep.ok and rep.first_violation is not None


def test_schedule_rejects_short_horizon_and_bad_params():
    with pytest.raises(ValueError):
        schedule_validate(InertialSchedule(), 1)
    for kw in ({"mode": "cosine"}, {"kappa": 1.0}, {"kappa": 2.5}, {"a": 0.0}, {"a": 1.2}):
        with pytest.raises(ValueError):
            InertialSchedule(**kw)


def test_schedule_values_and_switch():
    s = InertialSchedule("polynomial", alpha=3.0, a=0.8, switch_at=10)
    assert s.value(0) == 1.0
    assert s.value(1) == pytest.approx(2 / 5)
    assert s.value(10) == 0.8 and s.value(500) == 0.8
    assert InertialSchedule("constant", a=0.7).gamma(5, 2.0) == pytest.approx(0.35)


# single steps


def test_first_step_matches_hand_chain():
    prob = quartic_1d()
    st = initial_state(np.array([1.0]), InertialSchedule("bpg"), prob.L)
    assert st.gamma == pytest.approx(GAMMA, rel=1e-15)
    s1 = ibpg_step(st, prob, InertialSchedule("bpg"))
    p = 2.0 - GAMMA
    assert s1.x[0] == pytest.approx(p / bisect_cubic(p * p), rel=1e-13)
    # high-precision reference values
    assert s1.x[0] == pytest.approx(0.91184247229085969133, rel=1e-14)
    s2 = ibpg_step(s1, prob, InertialSchedule("bpg"))
    assert s2.x[0] == pytest.approx(0.83584851632053940917, rel=1e-14)


def test_bpg_step_has_no_extrapolation():
    prob = quartic_1d()
    st = SolverState(np.array([0.7]), np.array([1.3]), np.array([-2.0]), 1.0, GAMMA, 3)
    new = ibpg_step(st, prob, InertialSchedule("bpg"))
    np.testing.assert_array_equal(new.y, st.x)
    np.testing.assert_array_equal(new.z, new.x)


def test_critical_point_is_fixed(l1_instance):
    # a zero-residual phase-retrieval instance with G = 0 has a critical point at the planted signal
    prob = CompositeProblem(l1_instance.kernel, l1_instance.smooth, L=l1_instance.L)
    xs = prob.smooth.data.x_ref
    sched = InertialSchedule("constant", a=0.8)
    st = SolverState(xs, xs.copy(), xs.copy(), 0.8, sched.gamma(0, prob.L), 0)
    new = ibpg_step(st, prob, sched)
    assert np.max(np.abs(new.x - xs)) <= 1e-10
    v1, v2 = relative_error_certificate(new.x, st.x, new.y, prob, st.gamma)
    assert v1 <= 1e-9 and v2 <= 1e-9


def test_gamma_invariant_along_step():
    prob = quartic_1d()
    sched = InertialSchedule("polynomial", alpha=2.0, kappa=1.5)
    st = initial_state(np.array([1.0]), sched, prob.L)
    for _ in range(5):
        st = ibpg_step(st, prob, sched)
        assert st.gamma == pytest.approx(st.a ** 0.5 / prob.L, rel=1e-15)


def test_imd_matches_ibpg_without_regularizer(l1_instance):
    prob = CompositeProblem(l1_instance.kernel, l1_instance.smooth, L=l1_instance.L)
    a = 0.9
    sched = InertialSchedule("constant", a=a, a_initial=None)
    gamma = sched.gamma(0, prob.L)
    x0 = np.random.default_rng(0).standard_normal(prob.n) * 0.5
    s_ib = SolverState(x0, x0.copy(), x0.copy(), a, gamma, 0)
    s_md = s_ib
    for _ in range(30):
        s_ib = ibpg_step(s_ib, prob, sched)
        s_md = imd_step(s_md, prob.smooth, prob.kernel, a, gamma)
        assert np.max(np.abs(s_ib.x - s_md.x)) <= 1e-12 * (1 + np.max(np.abs(s_md.x)))


def test_imd_stationary_at_zero_gradient():
    prob = quartic_1d()
    st = SolverState(np.zeros(1), np.zeros(1), np.zeros(1), 0.9, GAMMA, 0)
    assert imd_step(st, prob.smooth, prob.kernel, 0.9, GAMMA).x[0] == 0.0
    x, it, status = run_imd(prob.smooth, prob.kernel, np.zeros(1), 0.9, L=1 / GAMMA)
    assert status == "converged" and it == 1


def test_non_finite_step_raises():
    prob = quartic_1d()
    st = SolverState(np.array([np.nan]), np.zeros(1), np.zeros(1), 1.0, GAMMA, 0)
    with pytest.raises(DivergenceError):
        ibpg_step(st, prob, InertialSchedule())


# Lyapunov function


def test_lyapunov_examples():
    prob = quartic_1d()
    x = np.array([0.6])
    assert lyapunov_value(x, x, 0.5, 2.0, prob.L, prob) == pytest.approx(0.6**4 / 4, rel=1e-15)
    xp = np.array([0.2])
    from ibpg.kernels import bregman_divergence

    d = bregman_divergence(prob.kernel, x, xp)
    assert lyapunov_value(x, xp, 1.0, 1.5, prob.L, prob) == pytest.approx(0.6**4 / 4 + prob.L * d)
    assert lyapunov_value(x, xp, 0.25, 2.0, prob.L, prob) == pytest.approx(0.6**4 / 4 + 4 * prob.L * d)


@pytest.mark.parametrize("a", [1.0, 0.9, 0.7])
def test_lyapunov_monotone_on_run(l1_instance, a):
    sched = InertialSchedule("constant", a=a)
    tr = run(l1_instance, SolverConfig(max_iters=400, tol=0.0, schedule=sched, seed=3))
    psi = tr.column("lyapunov")
    assert np.all(psi[1:] <= psi[:-1] + 1e-9 * (1 + np.abs(psi[:-1])))


def test_min_step_rate_bounded(l1_instance):
    tr = run(l1_instance, SolverConfig(max_iters=600, tol=0.0, seed=1))
    sq = tr.column("step_norm")[1:] ** 2
    scaled = np.arange(1, sq.size + 1) * np.minimum.accumulate(sq)
    assert np.all(np.isfinite(scaled))
    assert scaled[-1] <= 2 * scaled.max()  # bounded, not growing without limit
    assert scaled.max() <= 2 * tr.column("lyapunov")[0] * tr.L


# the driver


def test_huge_tolerance_stops_after_one_iteration():
    tr = run(quartic_1d(), SolverConfig(tol=1e9, x0=np.array([1.0])))
    assert len(tr) == 2 and tr.converged
    assert tr.records["k"] == [0, 1]


def test_trace_columns_and_record_count(l1_instance):
    tr = run(l1_instance, SolverConfig(max_iters=25, tol=0.0))
    assert tuple(tr.records) == TRACE_COLUMNS
    assert all(len(v) == 26 for v in tr.records.values())
    assert not tr.converged and "max_iters" in tr.message
    g = tr.column("gamma_k")
    np.testing.assert_allclose(g, tr.column("a_k") ** (tr.kappa - 1) / tr.L, rtol=1e-15)


def test_run_converges_on_l1(l1_instance):
    x0 = l1_instance.x_ref + 1e-3 * np.random.default_rng(0).standard_normal(l1_instance.n)
    tr = run(l1_instance, SolverConfig(max_iters=20_000, tol=1e-9, x0=x0))
    assert tr.converged
    assert tr.records["step_norm"][-1] <= 1e-9 * (1 + np.linalg.norm(tr.x_final))


def test_run_deterministic(tmp_path, l1_instance):
    cfg = SolverConfig(max_iters=200, tol=0.0, schedule=InertialSchedule("constant", a=0.8), seed=5)
    run(l1_instance, cfg).write_csv(tmp_path / "a.csv")
    run(l1_instance, cfg).write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = IterationTrace.read_csv(tmp_path / "a.csv")
    assert back["k"][-1] == 200 and len(back["phi"]) == 201


def test_bpg_matches_reference_loop(l1_instance):
    prob = l1_instance
    x0 = np.random.default_rng(2).standard_normal(prob.n)
    tr = run(prob, SolverConfig(max_iters=50, tol=0.0, x0=x0))
    gamma = 1 / prob.L
    x = x0.copy()
    for k in range(1, 51):
        x = prob.reg.dprox(prob.kernel.grad(x) - gamma * prob.smooth.grad(x), gamma * prob.lam)
        assert np.max(np.abs(tr.iterates[k] - x)) <= 1e-12 * (1 + np.max(np.abs(x)))


def test_certificate_with_unit_inertia_reduces_to_gradient_difference(l1_instance):
    prob = l1_instance
    tr = run(prob, SolverConfig(max_iters=5, tol=0.0, seed=4))
    xk, xn = tr.iterates[3], tr.iterates[4]
    v1, _ = relative_error_certificate(xn, xk, xk, prob, 1 / prob.L)
    assert v1 == pytest.approx(np.linalg.norm(prob.smooth.grad(xn) - prob.smooth.grad(xk)), rel=1e-12)


def test_divergence_attaches_partial_trace():
    prob = quartic_1d()
    prob.L = 1e-3  # absurdly long step
    with pytest.raises(DivergenceError) as err:
        run(prob, SolverConfig(x0=np.array([3.0]), max_iters=100, divergence_bound=1e3))
    tr = err.value.trace
    assert tr is not None and len(tr) >= 1
    assert "exceeded" in tr.message or "non-finite" in tr.message


def test_l1_problem_with_regularizer_reaches_zero():
    # lam large enough that the D-prox kills everything
    prob = quartic_1d(lam=10.0, reg=L1Norm())
    tr = run(prob, SolverConfig(x0=np.array([0.5]), max_iters=10))
    assert tr.x_final[0] == 0.0
