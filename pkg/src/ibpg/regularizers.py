"""Regularizers with Bregman proximal maps under the quartic kernel.

All shipped regularizers ``R`` are positively 1-homogeneous. For such ``R``
the D-prox ``z = (grad psi + tau dR)^-1 (p)`` with
``grad psi(z) = (|z|^2 + 1) z`` splits into a Euclidean prox followed by a
scalar rescale: ``w = prox_{tau R}(p)`` and ``z = w / t`` where
``t^3 - t^2 = |w|^2``. The stationarity system ``t z + tau s = p`` with
``s in dR(z) = dR(w)`` is then satisfied with ``t = |z|^2 + 1``.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .kernels import Kernel, QuarticKernel, solve_scale_cubic
from .linops import LinearOperator, finite_difference
from .smooth import ComposedTerm, SmoothTerm

__all__ = [
    "Regularizer",
    "ZeroRegularizer",
    "L1Norm",
    "GroupL1Norm",
    "TotalVariation1D",
    "SupportPattern",
    "soft_threshold",
    "l1_dprox",
    "group_l1_dprox",
    "euclid_tv_prox_1d",
    "tv_dprox",
    "support_of",
    "tangent_projector",
    "synthesis_l1",
    "dprox_objective",
    "default_support_eps",
]


def default_support_eps(x: np.ndarray) -> float:
    return 1e-8 * (1.0 + float(np.max(np.abs(x), initial=0.0)))


def _rescale(w: np.ndarray) -> np.ndarray:
    return w / solve_scale_cubic(float(np.dot(w, w)))


def soft_threshold(p: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(p) * np.maximum(np.abs(p) - tau, 0.0)


def l1_dprox(p: np.ndarray, tau: float) -> np.ndarray:
    """Quartic-kernel D-prox of ``tau |.|_1`` evaluated at the dual point ``p``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return _rescale(soft_threshold(np.asarray(p, dtype=float), tau))


def _check_blocks(blocks, n):
    seen = np.zeros(n, dtype=int)
    for b in blocks:
        seen[np.asarray(b, dtype=int)] += 1
    if np.any(seen != 1):
        raise ValueError("blocks must partition range(n) without overlap")


def group_l1_dprox(p: np.ndarray, tau: float, blocks) -> np.ndarray:
    """Quartic-kernel D-prox of ``tau sum_b |x_b|`` over non-overlapping ``blocks``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    p = np.asarray(p, dtype=float)
    _check_blocks(blocks, p.size)
    w = np.zeros_like(p)
    for b in blocks:
        nb = np.linalg.norm(p[b])
        if nb > tau:
            w[b] = (1.0 - tau / nb) * p[b]
    return _rescale(w)


def euclid_tv_prox_1d(w: np.ndarray, mu: float) -> np.ndarray:
    """Exact ``argmin_z mu |Dz|_1 + |z - w|^2 / 2`` (Condat's direct taut-string scan)."""
    y = np.asarray(w, dtype=float)
    n = y.size
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if n <= 1 or mu == 0.0:
        return y.copy()
    x = np.empty(n)
    lam = float(mu)
    mlam = -lam
    twolam = 2.0 * lam
    k = k0 = kplus = kminus = 0
    vmin = y[0] - lam
    vmax = y[0] + lam
    umin = lam
    umax = mlam
    last = n - 1
    while True:
        while k == last:
            if umin < 0.0:
                while True:
                    x[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    x[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = kplus = k0
                vmax = y[k0]
                umax = mlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                x[k0 : k + 1] = vmin
                return x
        umin += y[k + 1] - vmin
        if umin < mlam:
            while True:
                x[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = kplus = kminus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = mlam
            continue
        umax += y[k + 1] - vmax
        if umax > lam:
            while True:
                x[k0] = vmax
                k0 += 1
                if k0 > kplus:
                    break
            k = kplus = kminus = k0
            vmax = y[k0]
            vmin = vmax - twolam
            umin = lam
            umax = mlam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= mlam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = mlam


def tv_dprox(p: np.ndarray, tau: float, method: str = "scaling", tol: float = 1e-12) -> np.ndarray:
    """Quartic-kernel D-prox of ``tau |D.|_1`` (1-D anisotropic TV).

    ``method="scaling"`` uses homogeneity: one taut-string call at ``p`` and a
    cubic rescale. ``method="bisection"`` solves ``t = |z(t)|^2 + 1`` with
    ``z(t) = prox_{(tau/t) TV}(p/t)`` by bisection on ``[1, t_c + 1]``,
    ``t_c^3 - t_c^2 = |p|^2``; both return the same point.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    p = np.asarray(p, dtype=float)
    if method == "scaling":
        return _rescale(euclid_tv_prox_1d(p, tau))
    if method != "bisection":
        raise ValueError(f"unknown method {method!r}")

    def z_of(t):
        return euclid_tv_prox_1d(p / t, tau / t)

    def h(t):
        z = z_of(t)
        return t - float(np.dot(z, z)) - 1.0

    lo, hi = 1.0, solve_scale_cubic(float(np.dot(p, p))) + 1.0
    h_lo, h_hi = h(lo), h(hi)
    if h_lo > 0.0 or h_hi < 0.0:
        raise RuntimeError("tv_dprox bisection bracket does not contain a root")
    if h_lo == 0.0:
        return z_of(lo)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return z_of(0.5 * (lo + hi))


class SupportPattern(tuple):
    """Sorted tuple of active indices (entries, blocks or jumps)."""

    def digest(self) -> str:
        data = np.asarray(self, dtype=np.int64).tobytes()
        return hashlib.sha1(data).hexdigest()[:16]


class Regularizer:
    """Convex, positively homogeneous ``R`` with a quartic-kernel D-prox.

    ``dprox(p, tau)`` returns the minimizer of ``tau R(z) + psi(z) - <p, z>``.
    """

    polyhedral = True
    name = "regularizer"

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def dprox(self, p: np.ndarray, tau: float) -> np.ndarray:
        raise NotImplementedError

    def euclid_prox(self, p: np.ndarray, tau: float) -> np.ndarray:
        raise NotImplementedError

    def support(self, x: np.ndarray, eps: float | None = None) -> SupportPattern:
        raise NotImplementedError

    def tangent_basis(self, x: np.ndarray, eps: float | None = None) -> np.ndarray:
        """Orthonormal basis (columns) of the model tangent space at ``x``."""
        raise NotImplementedError

    def tangent_projector(self, x: np.ndarray, eps: float | None = None) -> np.ndarray:
        B = self.tangent_basis(x, eps)
        return B @ B.T

    def subgradient_residual(self, z: np.ndarray, p: np.ndarray, tau: float) -> float:
        """Distance-like violation of ``p - (|z|^2+1) z in tau dR(z)``."""
        raise NotImplementedError


class ZeroRegularizer(Regularizer):
    name = "zero"

    def __init__(self, n: int):
        self.n = n

    def value(self, x):
        return 0.0

    def dprox(self, p, tau):
        return QuarticKernel(n=np.asarray(p).size).grad_inverse(p)

    def euclid_prox(self, p, tau):
        return np.array(p, dtype=float)

    def support(self, x, eps=None):
        return SupportPattern(range(np.asarray(x).size))

    def tangent_basis(self, x, eps=None):
        return np.eye(np.asarray(x).size)

    def subgradient_residual(self, z, p, tau):
        return float(np.max(np.abs(p - (np.dot(z, z) + 1.0) * z), initial=0.0))


class L1Norm(Regularizer):
    name = "l1"

    def value(self, x):
        return float(np.sum(np.abs(x)))

    def dprox(self, p, tau):
        return l1_dprox(p, tau)

    def euclid_prox(self, p, tau):
        return soft_threshold(np.asarray(p, dtype=float), tau)

    def support(self, x, eps=None):
        eps = default_support_eps(x) if eps is None else eps
        return SupportPattern(int(i) for i in np.flatnonzero(np.abs(x) > eps))

    def tangent_basis(self, x, eps=None):
        idx = list(self.support(x, eps))
        return np.eye(np.asarray(x).size)[:, idx]

    def subgradient_residual(self, z, p, tau):
        z = np.asarray(z, dtype=float)
        r = p - (np.dot(z, z) + 1.0) * z
        on = z != 0.0
        err_on = np.abs(r[on] - tau * np.sign(z[on]))
        err_off = np.maximum(np.abs(r[~on]) - tau, 0.0)
        return float(max(np.max(err_on, initial=0.0), np.max(err_off, initial=0.0)))

    def nondegeneracy_margin(self, x_star, grad_f, lam, eps=None):
        """``1 - max_{i off support} |grad_f_i| / lam``; positive means nondegenerate."""
        off = np.ones(x_star.size, dtype=bool)
        off[list(self.support(x_star, eps))] = False
        if lam <= 0 or not off.any():
            return 1.0 if lam > 0 else 0.0
        return float(1.0 - np.max(np.abs(grad_f[off])) / lam)


class GroupL1Norm(Regularizer):
    """``sum_b |x_b|_2`` over a partition of the coordinates into blocks."""

    name = "group"

    def __init__(self, blocks):
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        self.n = sum(b.size for b in self.blocks)
        _check_blocks(self.blocks, self.n)

    @classmethod
    def contiguous(cls, n: int, block_size: int) -> "GroupL1Norm":
        if n % block_size:
            raise ValueError("block_size must divide n")
        return cls([np.arange(i, i + block_size) for i in range(0, n, block_size)])

    def value(self, x):
        return float(sum(np.linalg.norm(x[b]) for b in self.blocks))

    def dprox(self, p, tau):
        return group_l1_dprox(p, tau, self.blocks)

    def euclid_prox(self, p, tau):
        p = np.asarray(p, dtype=float)
        w = np.zeros_like(p)
        for b in self.blocks:
            nb = np.linalg.norm(p[b])
            if nb > tau:
                w[b] = (1.0 - tau / nb) * p[b]
        return w

    def support(self, x, eps=None):
        eps = default_support_eps(x) if eps is None else eps
        return SupportPattern(i for i, b in enumerate(self.blocks) if np.linalg.norm(x[b]) > eps)

    def tangent_basis(self, x, eps=None):
        idx = np.concatenate([self.blocks[i] for i in self.support(x, eps)] or [np.array([], int)])
        return np.eye(np.asarray(x).size)[:, np.sort(idx)]

    def subgradient_residual(self, z, p, tau):
        z = np.asarray(z, dtype=float)
        r = p - (np.dot(z, z) + 1.0) * z
        worst = 0.0
        for b in self.blocks:
            nz = np.linalg.norm(z[b])
            if nz > 0.0:
                worst = max(worst, float(np.linalg.norm(r[b] - tau * z[b] / nz)))
            else:
                worst = max(worst, float(np.linalg.norm(r[b])) - tau)
        return worst


class TotalVariation1D(Regularizer):
    """Anisotropic 1-D total variation ``|Dx|_1`` with forward differences."""

    name = "tv"

    def __init__(self, n: int, method: str = "scaling"):
        self.n = n
        self.D = finite_difference(n)
        self.method = method

    def value(self, x):
        return float(np.sum(np.abs(np.diff(x))))

    def dprox(self, p, tau):
        return tv_dprox(p, tau, method=self.method)

    def euclid_prox(self, p, tau):
        return euclid_tv_prox_1d(p, tau)

    def support(self, x, eps=None):
        eps = default_support_eps(x) if eps is None else eps
        return SupportPattern(int(i) for i in np.flatnonzero(np.abs(np.diff(x)) > eps))

    def tangent_basis(self, x, eps=None):
        # null space of the inactive difference rows: vectors constant on each
        # segment between consecutive jumps; normalized segment indicators
        n = np.asarray(x).size
        cuts = [0] + [j + 1 for j in self.support(x, eps)] + [n]
        B = np.zeros((n, len(cuts) - 1))
        for c, (lo, hi) in enumerate(zip(cuts[:-1], cuts[1:])):
            B[lo:hi, c] = 1.0 / np.sqrt(hi - lo)
        return B

    def subgradient_residual(self, z, p, tau):
        z = np.asarray(z, dtype=float)
        r = p - (np.dot(z, z) + 1.0) * z
        # D^T u = r  =>  u_i = -sum_{j<=i} r_j, needs sum(r) = 0
        cs = -np.cumsum(r)
        u, closure = cs[:-1], cs[-1]
        dz = np.diff(z)
        on = dz != 0.0
        err_on = np.abs(u[on] - tau * np.sign(dz[on]))
        err_off = np.maximum(np.abs(u[~on]) - tau, 0.0)
        return float(max(abs(closure), np.max(err_on, initial=0.0), np.max(err_off, initial=0.0)))


def support_of(reg: Regularizer, x: np.ndarray, eps: float | None = None) -> SupportPattern:
    return reg.support(np.asarray(x, dtype=float), eps)


def tangent_projector(reg: Regularizer, x: np.ndarray, eps: float | None = None) -> np.ndarray:
    return reg.tangent_projector(np.asarray(x, dtype=float), eps)


def dprox_objective(reg: Regularizer, kernel: Kernel, p: np.ndarray, tau: float, z: np.ndarray) -> float:
    """``tau R(z) + psi(z) - <p, z>``; its minimizer is ``reg.dprox(p, tau)``."""
    return tau * reg.value(z) + kernel.value(z) - float(np.dot(p, z))


def synthesis_l1(inner: SmoothTerm, W: LinearOperator, L: float | None = None):
    """Coefficient-space problem ``v -> F(Wv) + lam |v|_1``; returns ``(smooth, reg)``.

    Reconstruct with ``W.apply(v)``.
    """
    if W.shape[0] != inner.n:
        raise ValueError(f"W maps into R^{W.shape[0]}, F lives on R^{inner.n}")
    return ComposedTerm(inner, W, L), L1Norm()
