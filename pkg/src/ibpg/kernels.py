"""Legendre kernels and Bregman divergences.

Two kernels ship: the quartic-plus-quadratic entropy
``psi(x) = |x|^4 / 4 + |x|^2 / 2``, which makes the phase-retrieval data
term relatively smooth, and the Euclidean energy ``|x|^2 / 2`` used as a
cross-check. Inverting the quartic gradient reduces to the scalar cubic
``t^3 - t^2 = c`` handled by :func:`solve_scale_cubic`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Kernel",
    "QuarticKernel",
    "EuclideanKernel",
    "quartic_kernel",
    "euclidean_kernel",
    "solve_scale_cubic",
    "kernel_grad_inverse",
    "bregman_divergence",
    "tsp_worst_ratio",
]


def solve_scale_cubic(c: float) -> float:
    """Return the unique root ``t >= 1`` of ``t**3 - t**2 = c``.

    Newton iterations started at ``1 + c**(1/3)`` and kept inside the bracket
    ``[1, 1 + sqrt(c) + c**(1/3)]`` by bisection fallback. ``g(t) = t^3 - t^2``
    is increasing for ``t >= 1`` so the bracket always holds the root.

    Raises
    ------
    ValueError
        If ``c`` is negative.
    """
    c = float(c)
    if not c >= 0.0:
        raise ValueError(f"solve_scale_cubic needs c >= 0, got {c!r}")
    if c == 0.0:
        return 1.0
    cbrt = np.cbrt(c)
    lo, hi = 1.0, 1.0 + np.sqrt(c) + cbrt
    t = 1.0 + cbrt
    tol = 1e-13 * max(1.0, c)
    for _ in range(200):
        g = t * t * (t - 1.0) - c
        if abs(g) <= tol:
            break
        if g > 0.0:
            hi = t
        else:
            lo = t
        dg = t * (3.0 * t - 2.0)
        t_new = t - g / dg
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if t_new == t:
            break
        t = t_new
    return float(t)


@dataclass(frozen=True)
class Kernel:
    """Base class for a full-domain Legendre kernel on ``R^n``.

    Subclasses provide ``value``, ``grad``, ``hess`` and ``grad_inverse``.
    ``sigma`` is the strong-convexity modulus and ``kappa`` the triangle
    scaling exponent used by the inertial schedule.
    """

    n: int
    sigma: float = 1.0
    kappa: float = 2.0

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_inverse(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def divergence(self, x: np.ndarray, y: np.ndarray) -> float:
        return bregman_divergence(self, x, y)


@dataclass(frozen=True)
class QuarticKernel(Kernel):
    """``psi(x) = |x|^4/4 + |x|^2/2``; 1-strongly convex, full domain."""

    def value(self, x):
        sq = float(np.dot(x, x))
        return 0.25 * sq * sq + 0.5 * sq

    def grad(self, x):
        return (float(np.dot(x, x)) + 1.0) * np.asarray(x, dtype=float)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return (float(np.dot(x, x)) + 1.0) * np.eye(x.size) + 2.0 * np.outer(x, x)

    def grad_inverse(self, p):
        # grad psi(z) = (|z|^2 + 1) z = p  =>  z = p / t with t^3 - t^2 = |p|^2
        p = np.asarray(p, dtype=float)
        t = solve_scale_cubic(float(np.dot(p, p)))
        return p / t


@dataclass(frozen=True)
class EuclideanKernel(Kernel):
    """``psi(x) = |x|^2/2``; the Bregman divergence is half the squared distance."""

    def value(self, x):
        return 0.5 * float(np.dot(x, x))

    def grad(self, x):
        return np.array(x, dtype=float)

    def hess(self, x):
        return np.eye(np.asarray(x).size)

    def grad_inverse(self, p):
        return np.array(p, dtype=float)


def quartic_kernel(n: int, kappa: float = 2.0) -> QuarticKernel:
    if n < 1:
        raise ValueError("kernel dimension must be >= 1")
    return QuarticKernel(n=n, sigma=1.0, kappa=kappa)


def euclidean_kernel(n: int) -> EuclideanKernel:
    if n < 1:
        raise ValueError("kernel dimension must be >= 1")
    return EuclideanKernel(n=n, sigma=1.0, kappa=2.0)


def kernel_grad_inverse(kernel: Kernel, p: np.ndarray) -> np.ndarray:
    return kernel.grad_inverse(p)


def bregman_divergence(kernel: Kernel, x: np.ndarray, y: np.ndarray) -> float:
    """``psi(x) - psi(y) - <grad psi(y), x - y>``, clipped at zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(kernel, QuarticKernel):
        # cancellation-free form: with d = x - y, v = |y|^2, e = |x|^2 - |y|^2,
        # the quartic part equals e^2/4 + v |d|^2 / 2
        d = x - y
        dd = float(np.dot(d, d))
        v = float(np.dot(y, y))
        e = 2.0 * float(np.dot(y, d)) + dd
        return 0.25 * e * e + 0.5 * v * dd + 0.5 * dd
    val = kernel.value(x) - kernel.value(y) - float(np.dot(kernel.grad(y), x - y))
    return max(val, 0.0)


def tsp_worst_ratio(
    kernel: Kernel,
    kappa: float,
    samples: int,
    domain_radius: float,
    rng: np.random.Generator | None = None,
    a_values: np.ndarray | None = None,
) -> float:
    """Worst sampled ratio ``D((1-a)x+ay, (1-a)x+az) / (a**kappa * D(y, z))``.

    Points are drawn uniformly in the ball of radius ``domain_radius`` and
    ``a`` uniformly in ``(0, 1]`` unless ``a_values`` fixes it. A returned
    value ``C`` certifies the triangle scaling inequality on that ball with
    multiplicative factor ``C``, up to sampling.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    n = kernel.n

    def ball_point():
        g = rng.standard_normal(n)
        g /= np.linalg.norm(g)
        return domain_radius * rng.uniform() ** (1.0 / n) * g

    worst = 0.0
    for i in range(samples):
        x, y, z = ball_point(), ball_point(), ball_point()
        if a_values is None:
            a = 1.0 - rng.uniform()  # (0, 1]
        else:
            a = float(a_values[i % len(a_values)])
        den = bregman_divergence(kernel, y, z)
        if den < 1e-14:
            continue
        if a == 0.0:
            ratio = 0.0
        else:
            num = bregman_divergence(kernel, (1 - a) * x + a * y, (1 - a) * x + a * z)
            ratio = num / (a**kappa * den)
        worst = max(worst, ratio)
    return float(worst)
