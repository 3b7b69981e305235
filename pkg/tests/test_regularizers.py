import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ibpg.kernels import kernel_grad_inverse, quartic_kernel
from ibpg.linops import haar_dictionary, gaussian_matrix
from ibpg.regularizers import (
    GroupL1Norm,
    L1Norm,
    TotalVariation1D,
    dprox_objective,
    euclid_tv_prox_1d,
    group_l1_dprox,
    l1_dprox,
    soft_threshold,
    support_of,
    synthesis_l1,
    tangent_projector,
    tv_dprox,
)
from ibpg.smooth import PhaseRetrieval, PhaseRetrievalData
from oracles import dprox_cvxpy, dprox_nelder_mead, tv_prox_dual_pg

REGS = {
    "l1": lambda n: L1Norm(),
    "group": lambda n: GroupL1Norm.contiguous(n, 2),
    "tv": lambda n: TotalVariation1D(n),
}
points = arrays(np.float64, 4, elements=st.floats(-5, 5, allow_nan=False))
taus = st.floats(0.0, 3.0)


@pytest.mark.parametrize("fn", [l1_dprox, lambda p, t: group_l1_dprox(p, t, [[0, 1], [2]]), tv_dprox])
def test_zero_input(fn):
    np.testing.assert_allclose(fn(np.zeros(3), 0.7), np.zeros(3), rtol=0, atol=1e-15)


def test_l1_known_point():
    # soft threshold gives (2, 0); t^3 - t^2 = 4 has t = 2
    np.testing.assert_allclose(l1_dprox(np.array([3.0, 0.5]), 1.0), [1.0, 0.0], rtol=1e-15)


def test_l1_against_nelder_mead():
    p, tau = np.array([3.0, 0.5]), 1.0
    k = quartic_kernel(2)
    zb = dprox_nelder_mead(lambda z: dprox_objective(L1Norm(), k, p, tau, z), np.array([0.9, 0.1]))
    assert np.max(np.abs(l1_dprox(p, tau) - zb)) <= 1e-6


def test_tau_zero_matches_grad_inverse():
    p = np.array([2.0, 0.0, 0.0])
    k = quartic_kernel(3)
    for reg in (L1Norm(), GroupL1Norm.contiguous(3, 1), TotalVariation1D(3)):
        np.testing.assert_array_equal(reg.dprox(p, 0.0), kernel_grad_inverse(k, p))
    np.testing.assert_allclose(l1_dprox(p, 0.0), p / 2)


def test_group_singletons_match_l1():
    p = np.random.default_rng(0).standard_normal(6)
    np.testing.assert_allclose(group_l1_dprox(p, 0.4, [[i] for i in range(6)]), l1_dprox(p, 0.4), rtol=1e-14)


def test_group_blocks_validated():
    with pytest.raises(ValueError):
        group_l1_dprox(np.ones(3), 0.1, [[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        group_l1_dprox(np.ones(3), 0.1, [[0, 1]])


@pytest.mark.parametrize("seed", range(3))
def test_group_against_cvxpy(seed):
    p = np.random.default_rng(seed).standard_normal(4) * 2
    blocks = [[0, 1], [2, 3]]
    z = group_l1_dprox(p, 0.3, blocks)
    assert np.max(np.abs(z - dprox_cvxpy("group", p, 0.3, blocks))) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_tv_against_cvxpy_and_nelder_mead(seed):
    p = np.random.default_rng(seed).standard_normal(5) * 2
    z = tv_dprox(p, 0.2)
    k = quartic_kernel(5)
    zc = dprox_cvxpy("tv", p, 0.2)
    # the conic solver stops slightly short; ours must be at least as good
    obj = lambda v: dprox_objective(TotalVariation1D(5), k, p, 0.2, v)  # noqa: E731
    assert obj(z) <= obj(zc) + 1e-12
    assert np.max(np.abs(z - zc)) <= 1e-4
    zb = dprox_nelder_mead(lambda v: dprox_objective(TotalVariation1D(5), k, p, 0.2, v), z + 0.01)
    assert np.max(np.abs(z - zb)) <= 1e-5


def test_tv_methods_agree():
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = rng.standard_normal(8) * 3
        tau = rng.uniform(0, 2)
        np.testing.assert_allclose(tv_dprox(p, tau, "bisection"), tv_dprox(p, tau), atol=1e-10)
    with pytest.raises(ValueError):
        tv_dprox(p, 0.1, "maxflow")


def test_tv_constant_input():
    p = np.full(4, 1.0)  # |p| = 2
    np.testing.assert_allclose(tv_dprox(p, 0.5), p / 2, rtol=1e-14)


def test_euclid_tv_examples():
    w = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_array_equal(euclid_tv_prox_1d(w, 0.0), w)
    np.testing.assert_array_equal(euclid_tv_prox_1d(np.full(5, 1.5), 0.8), np.full(5, 1.5))
    np.testing.assert_allclose(euclid_tv_prox_1d(w, 100.0), np.full(4, w.mean()), atol=1e-14)


def test_euclid_tv_against_dual_projected_gradient():
    w = np.random.default_rng(1).standard_normal(6)
    np.testing.assert_allclose(euclid_tv_prox_1d(w, 0.4), tv_prox_dual_pg(w, 0.4), atol=1e-8)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-5, 5, allow_nan=False)), st.floats(0, 3))
def test_euclid_tv_optimality(w, mu):
    z = euclid_tv_prox_1d(w, mu)
    # dual certificate: w - z = D^T u with |u| <= mu, u = sign(Dz) mu on jumps
    u = -np.cumsum(w - z)[:-1]
    assert abs(np.sum(w - z)) <= 1e-9 * (1 + np.abs(w).sum())
    assert np.all(np.abs(u) <= mu + 1e-9 * (1 + np.abs(w).sum()))


@settings(max_examples=200)
@given(points, taus, st.sampled_from(sorted(REGS)))
def test_optimality_residual(p, tau, name):
    reg = REGS[name](4)
    z = reg.dprox(p, tau)
    assert reg.subgradient_residual(z, p, tau) <= 1e-8 * (1 + np.abs(p).max())


@settings(max_examples=200)
@given(points, st.floats(1e-3, 3.0))
def test_l1_subgradient_reconstruction(p, tau):
    # dividing by tau amplifies rounding, so tau stays away from zero here
    z = l1_dprox(p, tau)
    s = (p - (z @ z + 1) * z) / tau
    assert np.all(np.abs(s) <= 1 + 1e-8)
    on = z != 0
    np.testing.assert_allclose(s[on], np.sign(z[on]), atol=1e-8)


@settings(max_examples=100)
@given(points, points, taus, st.sampled_from(sorted(REGS)))
def test_firm_nonexpansive(p, q, tau, name):
    reg = REGS[name](4)
    jp, jq = reg.dprox(p, tau), reg.dprox(q, tau)
    d = jp - jq
    assert d @ (p - q) >= d @ d - 1e-10 * (1 + (p - q) @ (p - q))


@settings(max_examples=100)
@given(points, taus, st.sampled_from(sorted(REGS)))
def test_dprox_is_minimizer(p, tau, name):
    reg = REGS[name](4)
    k = quartic_kernel(4)
    z = reg.dprox(p, tau)
    f0 = dprox_objective(reg, k, p, tau, z)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert dprox_objective(reg, k, p, tau, z + 1e-3 * rng.standard_normal(4)) >= f0 - 1e-12


@settings(max_examples=100)
@given(points, st.floats(0.01, 3), st.sampled_from(sorted(REGS)))
def test_pattern_stable_under_tiny_perturbation(p, tau, name):
    reg = REGS[name](4)
    a = support_of(reg, reg.dprox(p, tau))
    b = support_of(reg, reg.dprox(p + 1e-13, tau))
    if a != b:
        # only possible when an entry sits at the threshold; confirm it is borderline
        z = reg.dprox(p, tau)
        assert np.min(np.abs(z[z != 0]), initial=1.0) < 1e-6 or np.min(np.abs(np.diff(z))) < 1e-6


def test_support_examples():
    assert support_of(L1Norm(), np.zeros(3)) == ()
    assert support_of(L1Norm(), np.array([1.0, 0.0, -2.0]), 1e-9) == (0, 2)
    x = np.array([0.0, 0, 1, 1, 1, -1, -1, -1])
    assert len(support_of(TotalVariation1D(8), x)) == 2
    assert support_of(GroupL1Norm.contiguous(4, 2), np.array([0, 0, 1.0, 0])) == (1,)


def test_tangent_projector_examples():
    np.testing.assert_array_equal(tangent_projector(L1Norm(), np.eye(3)[0]), np.diag([1.0, 0, 0]))
    np.testing.assert_allclose(tangent_projector(TotalVariation1D(4), np.full(4, 2.0)), np.full((4, 4), 0.25))


@pytest.mark.parametrize("name", sorted(REGS))
def test_projector_identities(name):
    rng = np.random.default_rng(0)
    x = np.zeros(8)
    if name == "tv":
        x = np.cumsum(np.where(rng.uniform(size=8) < 0.3, rng.standard_normal(8), 0.0))
    else:
        x[[1, 4, 5]] = rng.standard_normal(3)
    P = tangent_projector(REGS[name](8), x)
    assert np.max(np.abs(P @ P - P)) <= 1e-12
    assert np.max(np.abs(P - P.T)) <= 1e-12
    assert np.max(np.abs(P @ x - x)) <= 1e-12


def test_tv_projector_matches_null_space():
    x = np.array([1.0, 1, 2, 2, 2, 0])
    P = tangent_projector(TotalVariation1D(6), x)
    D = np.diff(np.eye(6), axis=0)
    inactive = [i for i in range(5) if i not in support_of(TotalVariation1D(6), x)]
    ns = np.linalg.svd(D[inactive])[2][len(inactive):].T
    np.testing.assert_allclose(P, ns @ ns.T, atol=1e-12)


def test_synthesis_identity_dictionary_matches_plain_l1():
    from ibpg.linops import LinearOperator

    A = gaussian_matrix(8, 6, 0).matrix
    d = PhaseRetrievalData.noiseless(A, np.random.default_rng(0).standard_normal(6))
    smooth, reg = synthesis_l1(PhaseRetrieval(d), LinearOperator(np.eye(6)))
    v = np.random.default_rng(1).standard_normal(6)
    assert smooth.value(v) == PhaseRetrieval(d).value(v)
    np.testing.assert_array_equal(smooth.grad(v), PhaseRetrieval(d).grad(v))
    assert isinstance(reg, L1Norm)
    assert smooth.value(np.zeros(6)) == PhaseRetrieval(d).value(np.zeros(6))


def test_synthesis_dimension_mismatch():
    d = PhaseRetrievalData.noiseless(gaussian_matrix(5, 6, 0).matrix, np.ones(6))
    with pytest.raises(ValueError):
        synthesis_l1(PhaseRetrieval(d), haar_dictionary(8, 1))


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([-2.0, 0.5, 3.0]), 1.0), [-1.0, 0.0, 2.0])


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        l1_dprox(np.ones(2), -0.1)
    with pytest.raises(ValueError):
        tv_dprox(np.ones(2), -0.1)


def test_nondegeneracy_margin():
    x = np.array([1.0, 0.0, 0.0])
    g = np.array([-1e-5, 5e-6, -2e-6])
    assert L1Norm().nondegeneracy_margin(x, g, 1e-5) == pytest.approx(0.5)
