"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.optimize


def bisect_cubic(c, tol=1e-14):
    """Root t >= 1 of t^3 - t^2 = c by plain bisection."""
    lo, hi = 1.0, 1.0 + np.sqrt(c) + np.cbrt(c)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid**3 - mid**2 > c:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def pr_value_loop(A, y, x):
    m = A.shape[0]
    total = 0.0
    for j in range(m):
        r = float(np.dot(A[j], x)) ** 2 - y[j]
        total += r * r
    return total / (4.0 * m)


def psi(x):
    s = float(np.dot(x, x))
    return 0.25 * s * s + 0.5 * s


def dprox_cvxpy(kind, p, tau, blocks=None):
    """Minimize tau R(z) + |z|^4/4 + |z|^2/2 - <p, z> with cvxpy."""
    import cvxpy as cp

    n = p.size
    z = cp.Variable(n)
    if kind == "l1":
        reg = cp.norm1(z)
    elif kind == "group":
        reg = sum(cp.norm(z[list(b)], 2) for b in blocks)
    elif kind == "tv":
        reg = cp.norm1(cp.diff(z))
    else:
        raise ValueError(kind)
    obj = tau * reg + 0.25 * cp.power(cp.sum_squares(z), 2) + 0.5 * cp.sum_squares(z) - p @ z
    cp.Problem(cp.Minimize(obj)).solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12,
                                       tol_feas=1e-12)
    return np.asarray(z.value)


def tv_prox_dual_pg(w, mu, iters=100_000):
    """Euclidean TV prox via projected gradient on the dual box problem."""
    n = w.size
    D = np.diff(np.eye(n), axis=0)
    u = np.zeros(n - 1)
    step = 1.0 / 4.0
    for _ in range(iters):
        u = np.clip(u - step * (D @ (D.T @ u - w)), -mu, mu)
    return w - D.T @ u


def dprox_nelder_mead(objective, x0, restarts=5, seed=0):
    rng = np.random.default_rng(seed)
    best = None
    for r in range(restarts):
        start = x0 + (0 if r == 0 else 0.1 * rng.standard_normal(x0.size))
        res = scipy.optimize.minimize(objective, start, method="Nelder-Mead",
                                      options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 40_000,
                                               "maxfev": 40_000})
        if best is None or res.fun < best.fun:
            best = res
    return best.x


def generalized_min_eig(A, B):
    return float(scipy.linalg.eigvals(A, B).real.min())
