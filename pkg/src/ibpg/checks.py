"""Fast numerical oracles for the building blocks.

Each check returns a :class:`CheckResult`; :func:`run_checks` runs the whole
suite. The D-prox oracle solves an epigraph reformulation with SLSQP, which
shares no code with the closed forms it is compared against.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .kernels import quartic_kernel, solve_scale_cubic, tsp_worst_ratio
from .linops import adjoint_mismatch, finite_difference, gaussian_matrix, haar_dictionary, substream
from .regularizers import GroupL1Norm, L1Norm, TotalVariation1D, synthesis_l1
from .smooth import PhaseRetrieval, PhaseRetrievalData, SmoothTerm

__all__ = [
    "CheckResult",
    "bruteforce_dprox",
    "check_dprox",
    "check_gradients",
    "check_firm_nonexpansive",
    "check_cubic",
    "check_round_trip",
    "check_adjoints",
    "check_tsp",
    "run_checks",
    "FaultyGradient",
]


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float = 0.0
    informational: bool = False

    def line(self) -> str:
        status = "info" if self.informational else ("PASS" if self.passed else "FAIL")
        return f"{status:4s} {self.name:<34s} {self.value:.3e} (tol {self.tol:.1e}, {self.seconds:.2f}s)"


def _timed(name, tol, fn, informational=False) -> CheckResult:
    t0 = time.perf_counter()
    value = float(fn())
    passed = informational or value <= tol
    return CheckResult(name, value, tol, bool(passed), time.perf_counter() - t0, informational)


def _blocks_matrix(reg, n):
    """Rows ``B_j`` so that ``R(x) = sum_j |B_j x|``, grouped per block."""
    if isinstance(reg, L1Norm):
        return [np.eye(n)[[i]] for i in range(n)]
    if isinstance(reg, GroupL1Norm):
        return [np.eye(n)[list(b)] for b in reg.blocks]
    if isinstance(reg, TotalVariation1D):
        D = finite_difference(n).matrix
        return [D[[i]] for i in range(D.shape[0])]
    raise TypeError(f"no epigraph form for {type(reg).__name__}")


def bruteforce_dprox(reg, p: np.ndarray, tau: float) -> np.ndarray:
    """Minimize ``tau R(x) + psi(x) - <p, x>`` through ``min psi - <p,x> + tau sum t_j, t_j >= |B_j x|``."""
    p = np.asarray(p, dtype=float)
    n = p.size
    kern = quartic_kernel(n)
    rows = _blocks_matrix(reg, n)
    nb = len(rows)

    def obj(z):
        x = z[:n]
        return kern.value(x) - p @ x + tau * z[n:].sum()

    def jac(z):
        x = z[:n]
        return np.concatenate([kern.grad(x) - p, np.full(nb, tau)])

    cons = []
    for j, B in enumerate(rows):
        if B.shape[0] == 1:
            # two linear cuts: t_j >= +/- B_j x
            for sgn in (1.0, -1.0):
                g = np.concatenate([-sgn * B[0], np.eye(nb)[j]])
                cons.append({"type": "ineq", "fun": lambda z, g=g: g @ z, "jac": lambda z, g=g: g})
        else:
            # t_j - |B_j x| keeps a nonzero gradient at the block's zero, unlike t_j^2 - |B_j x|^2
            def f(z, B=B, j=j):
                return z[n + j] - np.linalg.norm(B @ z[:n])

            def df(z, B=B, j=j):
                g = np.zeros(n + nb)
                bx = B @ z[:n]
                nrm = np.linalg.norm(bx)
                if nrm > 0:
                    g[:n] = -B.T @ bx / nrm
                g[n + j] = 1.0
                return g

            cons.append({"type": "ineq", "fun": f, "jac": df})
    # start from the unregularized minimizer so the epigraph start is feasible
    x0 = kern.grad_inverse(p)
    t0 = np.array([np.linalg.norm(B @ x0) for B in rows]) + 1e-3
    bounds = [(None, None)] * n + [(0.0, None)] * nb
    res = scipy.optimize.minimize(obj, np.concatenate([x0, t0]), jac=jac, constraints=cons, bounds=bounds,
                                  method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
    return res.x[:n]


def _random_regularizers(n):
    cut = max(1, n // 2)
    regs = [("l1", L1Norm()), ("group", GroupL1Norm([tuple(range(cut)), tuple(range(cut, n))] if n > 1 else [(0,)]))]
    if n >= 2:
        regs.append(("tv", TotalVariation1D(n)))
    return regs


def check_dprox(n_cases: int = 200, max_dim: int = 5, seed: int = 0) -> dict:
    """Worst l-inf gap per regularizer between the closed-form D-prox and the brute-force oracle."""
    rng = substream(seed, "check-dprox")
    worst = {"l1": 0.0, "group": 0.0, "tv": 0.0}
    for _ in range(n_cases):
        n = int(rng.integers(1, max_dim + 1))
        p = rng.normal(scale=2.0, size=n)
        tau = float(rng.uniform(0.01, 2.0))
        for name, reg in _random_regularizers(n):
            gap = float(np.max(np.abs(reg.dprox(p, tau) - bruteforce_dprox(reg, p, tau))))
            worst[name] = max(worst[name], gap)
    return worst


class FaultyGradient(SmoothTerm):
    """Wraps a smooth term and flips the sign of one gradient entry; exercises the detectors."""

    def __init__(self, inner: SmoothTerm, index: int = 0):
        self.inner = inner
        self.n = inner.n
        self.L = inner.L
        self.index = index

    def value(self, x):
        return self.inner.value(x)

    def grad(self, x):
        g = np.array(self.inner.grad(x), dtype=float)
        g[self.index] = -g[self.index]
        return g

    def hess(self, x):
        return self.inner.hess(x)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _fd_jacobian(grad, x, h=1e-6):
    return np.column_stack([(grad(x + h * e) - grad(x - h * e)) / (2 * h) for e in np.eye(x.size)])


def gradient_error(term: SmoothTerm, points) -> float:
    """Worst relative error of ``grad`` and ``hess`` against central differences."""
    worst = 0.0
    for x in points:
        worst = max(worst, _rel(term.grad(x), _fd_gradient(term.value, x)))
        worst = max(worst, _rel(term.hess(x), _fd_jacobian(term.grad, x)))
    return worst


def _test_terms(seed: int, fault: bool = False):
    rng = substream(seed, "check-terms")
    n, m = 6, 9
    A = gaussian_matrix(m, n, seed).matrix
    pr = PhaseRetrieval(PhaseRetrievalData.noiseless(A, rng.standard_normal(n)))
    W = haar_dictionary(8, 2)
    composed, _ = synthesis_l1(PhaseRetrieval(PhaseRetrievalData.noiseless(gaussian_matrix(5, 8, seed).matrix,
                                                                          rng.standard_normal(8))), W)
    terms = {"phase_retrieval": pr, "composed": composed}
    if fault:
        terms = {k: FaultyGradient(t) for k, t in terms.items()}
    return terms, rng


def check_gradients(seed: int = 0, n_points: int = 5, fault: bool = False) -> float:
    terms, rng = _test_terms(seed, fault)
    worst = 0.0
    for term in terms.values():
        worst = max(worst, gradient_error(term, [rng.standard_normal(term.n) for _ in range(n_points)]))
    kern = quartic_kernel(4)

    class _Kernel(SmoothTerm):
        n = 4
        value = staticmethod(kern.value)
        grad = staticmethod(kern.grad)
        hess = staticmethod(kern.hess)

    return max(worst, gradient_error(_Kernel(), [rng.standard_normal(4) for _ in range(n_points)]))


def check_firm_nonexpansive(n_pairs: int = 500, n: int = 6, seed: int = 0) -> float:
    """Worst violation of ``<grad psi(Pu) - grad psi(Pv), Pu - Pv> <= <u - v, Pu - Pv>`` for the
    D-prox, and of the Euclidean firm-nonexpansiveness inequality for the Euclidean prox.

    Values are scaled by ``1 + |u - v|^2``; nonpositive means both hold.
    """
    rng = substream(seed, "check-fne")
    kern = quartic_kernel(n)
    worst = -math.inf
    regs = [L1Norm(), GroupL1Norm.contiguous(n, 2), TotalVariation1D(n)]
    for reg in regs:
        for _ in range(n_pairs):
            u, v = rng.normal(scale=2.0, size=(2, n))
            tau = float(rng.uniform(0.05, 2.0))
            pu, pv = reg.dprox(u, tau), reg.dprox(v, tau)
            d = pu - pv
            scale = 1.0 + np.dot(u - v, u - v)
            worst = max(worst, (np.dot(kern.grad(pu) - kern.grad(pv), d) - np.dot(u - v, d)) / scale)
            eu, ev = reg.euclid_prox(u, tau), reg.euclid_prox(v, tau)
            e = eu - ev
            worst = max(worst, (np.dot(e, e) - np.dot(u - v, e)) / scale)
    return float(worst)


def check_cubic(n_samples: int = 2000, seed: int = 0) -> float:
    """Worst relative residual ``|t^3 - t^2 - c| / max(1, c)`` over ``c`` spanning 1e-16..1e16."""
    rng = substream(seed, "check-cubic")
    cs = np.concatenate([[0.0, 1e-300, 1.0], 10.0 ** rng.uniform(-16, 16, n_samples)])
    worst = 0.0
    for c in cs:
        t = solve_scale_cubic(c)
        worst = max(worst, abs(t * t * (t - 1.0) - c) / max(1.0, c))
    return worst


def check_round_trip(n_samples: int = 500, seed: int = 0) -> float:
    """Worst ``|grad_inverse(grad x) - x| / (1 + |x|)`` for the quartic kernel."""
    rng = substream(seed, "check-round-trip")
    worst = 0.0
    for _ in range(n_samples):
        n = int(rng.integers(1, 10))
        x = rng.standard_normal(n) * 10.0 ** rng.uniform(-6, 3)
        kern = quartic_kernel(n)
        worst = max(worst, np.linalg.norm(kern.grad_inverse(kern.grad(x)) - x) / (1.0 + np.linalg.norm(x)))
    return float(worst)


def check_adjoints(seed: int = 0) -> float:
    ops = [gaussian_matrix(20, 32, seed), finite_difference(32), haar_dictionary(32, 3)]
    return max(adjoint_mismatch(op, probes=10, seed=seed) for op in ops)


def check_tsp(seed: int = 0, radius: float = 1.0, samples: int = 2000) -> float:
    """Worst sampled triangle-scaling ratio at exponent 2 on a ball (a constant, not a bound of 1)."""
    return tsp_worst_ratio(quartic_kernel(3), 2.0, samples, radius, rng=substream(seed, "check-tsp"))


def run_checks(seed: int = 0, fault: str | None = None, n_dprox: int = 200) -> list[CheckResult]:
    """Run the oracle suite. ``fault="gradient"`` perturbs the gradients under test."""
    if fault not in (None, "gradient"):
        raise ValueError(f"unknown fault {fault!r}")
    t0 = time.perf_counter()
    dp = check_dprox(n_dprox, 5, seed)
    dt = time.perf_counter() - t0
    out = [CheckResult(f"dprox_vs_bruteforce[{k}]", v, 1e-5, v <= 1e-5, dt / 3) for k, v in dp.items()]
    out += [
        _timed("gradient_hessian_fd", 1e-5, lambda: check_gradients(seed, fault=fault == "gradient")),
        _timed("firm_nonexpansive", 1e-10, lambda: check_firm_nonexpansive(seed=seed)),
        _timed("cubic_residual", 1e-12, lambda: check_cubic(seed=seed)),
        _timed("kernel_round_trip", 1e-10, lambda: check_round_trip(seed=seed)),
        _timed("adjoint_probe", 1e-10, lambda: check_adjoints(seed)),
        _timed("tsp_ratio_kappa2_r1", math.inf, lambda: check_tsp(seed), informational=True),
    ]
    return out
