"""Post-hoc checks of the convergence theory on recorded runs.

Covers finite identification of the active support, the local linear model
at a limit point and its spectral rate, least-squares rate fitting, the
descent-like conditions (sufficient decrease, relative error, continuity) and
the Jacobian/Monte-Carlo study of saddle escape for inertial mirror descent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kernels import Kernel, quartic_kernel
from .linops import substream
from .smooth import PhaseRetrieval, PhaseRetrievalData, SmoothTerm, quadratic_term
from .solver import SCHEMA_VERSION, CompositeProblem, IterationTrace, relative_error_certificate, run_imd

__all__ = [
    "detect_identification",
    "SigmaEstimate",
    "estimate_sigma",
    "orthonormal_range",
    "LocalModel",
    "build_local_model",
    "SpectralRate",
    "spectral_rate",
    "quadratic_roots",
    "RateFit",
    "fit_empirical_rate",
    "jacobian_T",
    "JacobianSpectrum",
    "jacobian_T_spectrum",
    "CriticalPoint",
    "EscapeReport",
    "escape_study",
    "double_well_toy",
    "indefinite_quadratic_toy",
    "convex_quadratic_toy",
    "DescentReport",
    "descent_conditions_report",
    "StepRateReport",
    "step_rate_report",
    "admissible_band",
]


def detect_identification(patterns, reference=None) -> int | None:
    """Smallest ``K`` with ``patterns[k] == reference`` for every ``k >= K``.

    ``patterns`` may hold support tuples or their hashes; ``reference``
    defaults to the last entry. Returns ``None`` if the last entry differs
    from ``reference``.
    """
    patterns = list(patterns)
    if not patterns:
        return None
    ref = patterns[-1] if reference is None else reference
    if patterns[-1] != ref:
        return None
    k = len(patterns) - 1
    while k > 0 and patterns[k - 1] == ref:
        k -= 1
    return k


def orthonormal_range(P: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the range of a symmetric projector."""
    P = np.asarray(P, dtype=float)
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V[:, w > 0.5]


@dataclass
class SigmaEstimate:
    sigma: float
    dim: int
    injective: bool  # restricted injectivity holds with sigma > 0
    trivial: bool = False  # tangent space is {0}; sigma is +inf by convention


def estimate_sigma(problem: CompositeProblem, x_star, projector=None, basis=None) -> SigmaEstimate:
    """Largest ``sigma`` with ``Hess F - sigma Hess psi >= 0`` on the tangent space.

    Computed as the smallest generalized eigenvalue of the pair restricted to
    an orthonormal basis of ``range(P_T)``, clamped below at 0.
    """
    Q = basis if basis is not None else orthonormal_range(projector)
    d = Q.shape[1]
    if d == 0:
        return SigmaEstimate(math.inf, 0, True, True)
    hf = Q.T @ problem.smooth.hess(x_star) @ Q
    hp = Q.T @ problem.kernel.hess(x_star) @ Q
    lo = float(scipy.linalg.eigh(0.5 * (hf + hf.T), 0.5 * (hp + hp.T), eigvals_only=True)[0])
    return SigmaEstimate(max(lo, 0.0), d, lo > 0.0)


def quadratic_roots(eta: np.ndarray, a: float) -> np.ndarray:
    """Roots of ``r^2 - (2a - a^2) eta r - (1-a)^2 eta = 0`` for each ``eta``; shape ``(len(eta), 2)``."""
    eta = np.asarray(eta, dtype=float)
    b = (2.0 * a - a * a) * eta
    c = (1.0 - a) ** 2 * eta
    disc = np.sqrt((b * b + 4.0 * c).astype(complex))
    return np.stack([(b + disc) / 2.0, (b - disc) / 2.0], axis=1)


@dataclass
class LocalModel:
    """Linearization of the fixed-point map on the tangent space at ``x_star``.

    Matrices are expressed in the orthonormal basis ``basis`` of ``T``.
    """

    x_star: np.ndarray
    basis: np.ndarray
    gamma: float
    a: float
    H_F: np.ndarray
    H_psi: np.ndarray
    V: np.ndarray
    U: np.ndarray
    W: np.ndarray
    M: np.ndarray
    eta: np.ndarray  # eigenvalues of W V, ascending

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def to_dict(self) -> dict:
        def mat(a):
            a = np.atleast_2d(a)
            return {"shape": list(a.shape), "data": a.ravel().tolist()}

        return {
            "schema_version": SCHEMA_VERSION,
            "gamma": self.gamma,
            "a": self.a,
            "dim": self.dim,
            "x_star": self.x_star.tolist(),
            "eta": self.eta.tolist(),
            **{k: mat(getattr(self, k)) for k in ("H_F", "H_psi", "V", "W", "M")},
        }


def build_local_model(problem: CompositeProblem, x_star, gamma: float, a: float, projector=None,
                      basis=None, polyhedral: bool = True, U=None, eps=None) -> LocalModel:
    """Assemble ``H_F, H_psi, V, U, W, M`` on the reduced tangent coordinates.

    ``U`` (Riemannian curvature of the regularizer) is zero for polyhedral
    regularizers; otherwise pass it in ambient coordinates.
    """
    x_star = np.asarray(x_star, dtype=float)
    if basis is None:
        basis = problem.reg.tangent_basis(x_star, eps) if projector is None else orthonormal_range(projector)
    Q = basis
    d = Q.shape[1]
    hf = gamma * (Q.T @ problem.smooth.hess(x_star) @ Q)
    hp = Q.T @ problem.kernel.hess(x_star) @ Q
    hf, hp = 0.5 * (hf + hf.T), 0.5 * (hp + hp.T)
    if polyhedral or U is None:
        u = np.zeros((d, d))
    else:
        u = Q.T @ np.asarray(U, dtype=float) @ Q
    V = hp - hf
    B = hp + u
    if d and np.linalg.cond(B) > 1e14:
        raise np.linalg.LinAlgError("H_psi + U is numerically singular")
    W = np.linalg.inv(B) if d else np.zeros((0, 0))
    W = 0.5 * (W + W.T)
    eta = scipy.linalg.eigh(V, B, eigvals_only=True) if d else np.zeros(0)
    WV = W @ V
    M = np.block([[(2 * a - a * a) * WV, (1 - a) ** 2 * WV], [np.eye(d), np.zeros((d, d))]])
    return LocalModel(x_star, Q, gamma, a, hf, hp, V, u, W, M, np.asarray(eta))


@dataclass
class SpectralRate:
    rho: float  # spectral radius of M, direct eigensolve
    rho_roots: float  # max root magnitude from the per-eta quadratics
    mismatch: float  # largest gap between sorted magnitudes
    eigenvalues: np.ndarray
    roots: np.ndarray

    @property
    def agree(self) -> bool:
        return self.mismatch <= 1e-8


def spectral_rate(model: LocalModel) -> SpectralRate:
    """``rho(M)`` two ways: eigensolve of ``M`` and the scalar quadratics in ``eta``."""
    if model.dim == 0:
        return SpectralRate(0.0, 0.0, 0.0, np.zeros(0), np.zeros((0, 2)))
    ev = np.linalg.eigvals(model.M)
    roots = quadratic_roots(model.eta, model.a)
    m1 = np.sort(np.abs(ev))
    m2 = np.sort(np.abs(roots.ravel()))
    return SpectralRate(float(m1[-1]), float(m2[-1]), float(np.max(np.abs(m1 - m2))), ev, roots)


@dataclass
class RateFit:
    rho: float
    slope: float
    n_points: int
    defined: bool
    contractive: bool
    start: int = 0


def fit_empirical_rate(errors, start: int = 0, tail_fraction: float = 0.5, floor: float = 1e-13,
                       min_points: int = 10) -> RateFit:
    """Least-squares fit ``log e_k ~ c + k log rho`` on the tail of ``errors``.

    Only ``k >= start`` with ``e_k > floor`` are used, then the last
    ``tail_fraction`` of those points. ``defined`` is false when fewer than
    ``min_points`` remain.
    """
    e = np.asarray(errors, dtype=float)
    k = np.arange(e.size)
    keep = (k >= start) & (e > floor) & np.isfinite(e)
    ks, es = k[keep], e[keep]
    if ks.size:
        cut = int(math.floor((1.0 - tail_fraction) * ks.size))
        ks, es = ks[cut:], es[cut:]
    if ks.size < min_points:
        return RateFit(math.nan, math.nan, int(ks.size), False, False, start)
    slope = float(np.polyfit(ks.astype(float), np.log(es), 1)[0])
    rho = math.exp(slope)
    return RateFit(rho, slope, int(ks.size), True, rho < 1.0, start)


def jacobian_T(smooth: SmoothTerm, kernel: Kernel, x_cur, x_prev, gamma: float, a: float) -> np.ndarray:
    """Jacobian of ``(x_k, x_{k-1}) -> (x_{k+1}, x_k)`` for fixed-``a`` mirror descent.

    With ``y = (2a - a^2) x_k + (1-a)^2 x_{k-1}`` and
    ``J = Hess psi(x_{k+1})^-1 (Hess psi(y) - gamma Hess F(y))`` this is
    ``[[(2a - a^2) J, (1-a)^2 J], [I, 0]]``.
    """
    x_cur = np.asarray(x_cur, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    n = x_cur.size
    y = (2 * a - a * a) * x_cur + (1 - a) ** 2 * x_prev
    x_next = kernel.grad_inverse(kernel.grad(y) - gamma * smooth.grad(y))
    J = np.linalg.solve(kernel.hess(x_next), kernel.hess(y) - gamma * smooth.hess(y))
    return np.block([[(2 * a - a * a) * J, (1 - a) ** 2 * J], [np.eye(n), np.zeros((n, n))]])


@dataclass
class JacobianSpectrum:
    eigenvalues: np.ndarray
    max_abs: float
    det: float
    grad_residual: float

    @property
    def unstable(self) -> bool:
        return self.max_abs > 1.0

    @property
    def invertible(self) -> bool:
        return abs(self.det) > 1e-12


def jacobian_T_spectrum(smooth: SmoothTerm, kernel: Kernel, x_star, gamma: float, a: float) -> JacobianSpectrum:
    x_star = np.asarray(x_star, dtype=float)
    DT = jacobian_T(smooth, kernel, x_star, x_star, gamma, a)
    ev = np.linalg.eigvals(DT)
    return JacobianSpectrum(ev, float(np.max(np.abs(ev))), float(np.linalg.det(DT)),
                            float(np.linalg.norm(smooth.grad(x_star))))


@dataclass(frozen=True)
class CriticalPoint:
    x: tuple
    kind: str  # "min" or "strict_saddle"

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)


def double_well_toy():
    """``F(x) = (x^2 - 1)^2 / 4``: phase retrieval with ``A = [1]``, ``y = [1]``."""
    data = PhaseRetrievalData(np.array([[1.0]]), np.array([1.0]), np.array([1.0]))
    smooth = PhaseRetrieval(data)
    cat = [CriticalPoint((1.0,), "min"), CriticalPoint((-1.0,), "min"), CriticalPoint((0.0,), "strict_saddle")]
    return smooth, cat


def indefinite_quadratic_toy():
    """``F(x) = (x_1^2 - x_2^2) / 2``: strict saddle at 0, unbounded below."""
    return quadratic_term(np.diag([1.0, -1.0])), [CriticalPoint((0.0, 0.0), "strict_saddle")]


def convex_quadratic_toy(n: int = 2):
    return quadratic_term(np.eye(n)), [CriticalPoint(tuple([0.0] * n), "min")]


TRIAL_LABELS = ("min", "strict_saddle", "other", "diverged", "budget")


@dataclass
class EscapeReport:
    n_trials: int
    a: float
    gamma: float
    seed: int
    labels: list = field(default_factory=list)
    final_points: list = field(default_factory=list)
    saddle_distance: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    spectra: list = field(default_factory=list)

    @property
    def counts(self) -> dict:
        return {lab: self.labels.count(lab) for lab in TRIAL_LABELS}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_trials": self.n_trials,
            "a": self.a,
            "gamma": self.gamma,
            "seed": self.seed,
            "counts": self.counts,
            "trials": [
                {"label": lab, "final": list(map(float, x)), "saddle_distance": d, "iterations": it}
                for lab, x, d, it in zip(self.labels, self.final_points, self.saddle_distance, self.iterations)
            ],
            "critical_points": self.spectra,
        }


def escape_study(smooth: SmoothTerm, catalog, n_trials: int = 100, init_scale: float = 1.0, seed: int = 0,
                 a: float = 0.9, kernel: Kernel | None = None, L: float | None = None, budget: int = 100_000,
                 radius: float = 1e-3, escape_radius: float = 1e6, tol: float = 1e-12,
                 workers: int = 1) -> EscapeReport:
    """Run fixed-``a`` mirror descent from ``n_trials`` Gaussian starts and classify the limits.

    Trial ``i`` draws its start from substream ``"escape-<i>"`` of ``seed`` so
    results do not depend on ``workers``. A limit within ``radius`` of a
    catalog entry takes its label; other converged runs are ``"other"``,
    runs leaving ``escape_radius`` are ``"diverged"`` and runs out of
    ``budget`` are ``"budget"``.
    """
    kernel = quartic_kernel(smooth.n) if kernel is None else kernel
    L = smooth.L if L is None else L
    gamma = a ** (kernel.kappa - 1.0) / L
    saddles = [c.array for c in catalog if c.kind == "strict_saddle"]

    def trial(i):
        x0 = init_scale * substream(seed, f"escape-{i}").standard_normal(smooth.n)
        x, it, status = run_imd(smooth, kernel, x0, a, L=L, max_iters=budget, tol=tol,
                                escape_radius=escape_radius)
        dist = min((float(np.linalg.norm(x - s)) for s in saddles), default=math.inf)
        if status == "unbounded":
            label = "diverged"
        elif status == "budget":
            label = "budget"
        else:
            label = "other"
            best = min(catalog, key=lambda c: np.linalg.norm(x - c.array), default=None)
            if best is not None and np.linalg.norm(x - best.array) <= radius:
                label = best.kind
        return label, x, dist, it

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(trial, range(n_trials)))
    else:
        results = [trial(i) for i in range(n_trials)]
    rep = EscapeReport(n_trials, a, gamma, seed)
    for label, x, dist, it in results:
        rep.labels.append(label)
        rep.final_points.append(x.tolist())
        rep.saddle_distance.append(dist)
        rep.iterations.append(it)
    for c in catalog:
        js = jacobian_T_spectrum(smooth, kernel, c.array, gamma, a)
        rep.spectra.append({
            "x": list(c.x), "kind": c.kind, "max_abs_eigenvalue": js.max_abs, "det": js.det,
            "grad_residual": js.grad_residual,
            "eigenvalues_real": js.eigenvalues.real.tolist(), "eigenvalues_imag": js.eigenvalues.imag.tolist(),
        })
    return rep


@dataclass
class DescentReport:
    rho1: float  # min sufficient-decrease ratio (Psi_k - Psi_{k+1}) / |x_k - x_{k-1}|^2
    rho2: float  # max relative-error ratio |v_{k+1}| / (|x_{k+1}-x_k| + |x_k-x_{k-1}|)
    c3_tail_deviation: float  # max |Phi(x_k) - Phi(x_last)| over the tail
    first_c1_violation: int | None
    c1_pass: bool
    c2_pass: bool
    c3_pass: bool

    @property
    def passed(self) -> bool:
        return self.c1_pass and self.c2_pass and self.c3_pass


def descent_conditions_report(trace: IterationTrace, problem: CompositeProblem, rel_tol: float = 1e-9,
                              step_floor: float = 1e-12, rho2_max: float = 1e8, tail_fraction: float = 0.1,
                              c3_tol: float = 1e-6) -> DescentReport:
    """Empirical constants for the sufficient-decrease, relative-error and continuity conditions.

    C1 fails at the first ``k`` where ``Psi`` rises by more than
    ``rel_tol (1 + |Psi_k|)``. Steps shorter than ``step_floor`` are ignored
    for the ratios. C2 needs the stored iterates and extrapolation points.
    """
    psi = trace.column("lyapunov")
    step = trace.column("step_norm")
    phi = trace.column("phi")
    gam = trace.column("gamma_k")
    n = len(psi)
    rho1, first_bad = math.inf, None
    for k in range(1, n - 1):
        drop = psi[k] - psi[k + 1]
        if drop < -rel_tol * (1.0 + abs(psi[k])) and first_bad is None:
            first_bad = k
        # ratios only where the decrease is resolvable above rounding
        if step[k] > step_floor and step[k] ** 2 > rel_tol * (1.0 + abs(psi[k])):
            rho1 = min(rho1, drop / step[k] ** 2)
    rho2 = 0.0
    if len(trace.iterates) == n:
        for k in range(1, n - 1):
            denom = step[k + 1] + step[k]
            if denom <= step_floor:
                continue
            v1, v2 = relative_error_certificate(trace.iterates[k + 1], trace.iterates[k],
                                                trace.extrapolations[k + 1], problem, gam[k])
            rho2 = max(rho2, math.hypot(v1, v2) / denom)
    tail = max(1, int(tail_fraction * n))
    c3 = float(np.max(np.abs(phi[-tail:] - phi[-1])))
    rho1 = 0.0 if rho1 is math.inf else rho1
    return DescentReport(float(rho1), float(rho2), c3, first_bad, first_bad is None, bool(rho2 <= rho2_max),
                         bool(c3 <= c3_tol * (1.0 + abs(phi[-1]))))


@dataclass
class StepRateReport:
    q: np.ndarray  # q_k = k * min_{1<=i<=k} |x_i - x_{i-1}|^2
    nu_obs: float
    bound: float
    max_ratio_after: float
    monotone_pass: bool
    bound_pass: bool


def step_rate_report(trace: IterationTrace, sigma_psi: float = 1.0, after: int = 10, slack: float = 0.05,
                     floor: float = 1e-12) -> StepRateReport:
    """Check the ``O(1/k)`` bound on the smallest step.

    ``q_k`` uses the ``k`` genuine steps ``i = 1..k`` (the initial record has
    ``x_{-1} = x_0``). ``nu_obs`` is the smallest observed ratio
    ``(Psi_k - Psi_{k+1}) / (L D_psi(x_k, x_{k-1}))`` over steps with
    ``L D_psi`` above ``floor (1 + |Psi_k|)``; the bound is
    ``2 Psi_0 / (sigma_psi L nu_obs)``.
    """
    st = trace.column("step_norm") ** 2
    psi = trace.column("lyapunov")
    bd = trace.column("bregman_step")
    L = trace.L
    k = np.arange(st.size)
    mins = np.minimum.accumulate(np.where(k >= 1, st, np.inf))
    q = np.where(k >= 1, k * np.where(np.isfinite(mins), mins, 0.0), 0.0)
    nus = [(psi[i] - psi[i + 1]) / (L * bd[i]) for i in range(1, st.size - 1)
           if L * bd[i] > floor * (1.0 + abs(psi[i]))]
    nu = min(nus) if nus else math.nan
    bound = 2.0 * psi[0] / (sigma_psi * L * nu) if nu > 0 else math.inf
    tail = q[after:]
    ratio = float(np.max(tail[1:] / tail[:-1])) if tail.size > 1 and np.all(tail[:-1] > 0) else 1.0
    return StepRateReport(q, float(nu), float(bound), ratio, ratio <= 1.0 + slack,
                          bool(np.all(q <= bound * (1.0 + 1e-9))))


def admissible_band(L: float, sigma: float, hess_psi_max: float, sigma_psi: float = 1.0, kappa: float = 2.0) -> dict:
    """Lower end of the inertia band for ``rho(M) < 1``, evaluated literally.

    ``a_low > (q_F (q_psi - 1))^(1/(kappa-1))`` with ``q_F = L / sigma`` and
    ``q_psi = lambda_max(Hess psi(x*)) / sigma_psi``; the band is empty when
    that exceeds 1.
    """
    if sigma <= 0:
        return {"q_F": math.inf, "q_psi": hess_psi_max / sigma_psi, "a_low": math.inf, "nonempty": False}
    q_f = L / sigma
    q_psi = hess_psi_max / sigma_psi
    base = q_f * (q_psi - 1.0)
    a_low = base ** (1.0 / (kappa - 1.0)) if base > 0 else 0.0
    return {"q_F": q_f, "q_psi": q_psi, "a_low": a_low, "nonempty": a_low < 1.0}
