"""Smooth terms F: phase-retrieval data fit, quadratic toys, synthesis composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, QuarticKernel, bregman_divergence
from .linops import LinearOperator

__all__ = [
    "SmoothTerm",
    "PhaseRetrievalData",
    "PhaseRetrieval",
    "QuadraticTerm",
    "ComposedTerm",
    "pr_value",
    "pr_grad",
    "pr_hessian",
    "estimate_smad_constant",
    "smad_deterministic_bound",
    "quadratic_term",
    "relative_smoothness_gap",
    "SmadEstimationError",
    "bregman_gap_sample",
]


class SmadEstimationError(RuntimeError):
    """Raised when no relative-smoothness constant passes the sampled check."""


class SmoothTerm:
    """Interface: ``n``, ``value``, ``grad``, ``hess`` and a constant ``L``."""

    n: int
    L: float

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class PhaseRetrievalData:
    A: np.ndarray
    y: np.ndarray
    x_ref: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.A.matrix if isinstance(self.A, LinearOperator) else self.A, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError("A must be a non-empty m x n matrix")
        if y.shape[0] != A.shape[0]:
            raise ValueError(f"y has {y.shape[0]} entries, A has {A.shape[0]} rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        if self.x_ref is not None:
            object.__setattr__(self, "x_ref", np.asarray(self.x_ref, dtype=float).ravel())

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @classmethod
    def noiseless(cls, A, x_ref) -> "PhaseRetrievalData":
        A = np.asarray(A.matrix if isinstance(A, LinearOperator) else A, dtype=float)
        x_ref = np.asarray(x_ref, dtype=float)
        return cls(A, (A @ x_ref) ** 2, x_ref)


def _check_dim(data: PhaseRetrievalData, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (data.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({data.n},)")
    return x


def pr_value(data: PhaseRetrievalData, x: np.ndarray) -> float:
    """``(1/4m) sum_j (<a_j, x>^2 - y_j)^2``."""
    x = _check_dim(data, x)
    r = (data.A @ x) ** 2 - data.y
    return float(np.dot(r, r)) / (4.0 * data.m)


def pr_grad(data: PhaseRetrievalData, x: np.ndarray) -> np.ndarray:
    """``(1/m) sum_j (<a_j, x>^2 - y_j) <a_j, x> a_j``."""
    x = _check_dim(data, x)
    ax = data.A @ x
    return data.A.T @ ((ax * ax - data.y) * ax) / data.m


def pr_hessian(data: PhaseRetrievalData, x: np.ndarray) -> np.ndarray:
    """``(1/m) sum_j (3 <a_j, x>^2 - y_j) a_j a_j^T``."""
    x = _check_dim(data, x)
    ax = data.A @ x
    w = (3.0 * ax * ax - data.y) / data.m
    h = (data.A * w[:, None]).T @ data.A
    return 0.5 * (h + h.T)


def smad_deterministic_bound(data: PhaseRetrievalData) -> float:
    """``(1/m) sum_j (3 |a_j|^4 + |a_j|^2 y_j)``.

    Cauchy-Schwarz gives ``Hess F(x) <= (1/m) sum_j 3 |a_j|^2 |x|^2 a_j a_j^T``
    (the ``-y_j`` part is bounded by ``|a_j|^2 y_j Id``), and both pieces are
    dominated by that multiple of ``Hess psi(x) >= (|x|^2 + 1) Id``.
    """
    sq = np.einsum("ij,ij->i", data.A, data.A)
    return float(np.mean(3.0 * sq * sq + sq * np.abs(data.y)))


def relative_smoothness_gap(term: SmoothTerm, kernel: Kernel, L: float, x: np.ndarray) -> float:
    """Smallest eigenvalue of ``L Hess psi(x) - Hess F(x)``."""
    return float(np.linalg.eigvalsh(L * kernel.hess(x) - term.hess(x))[0])


def estimate_smad_constant(
    data: PhaseRetrievalData,
    kernel: Kernel,
    n_check_samples: int = 100,
    seed: int = 0,
    radius: float | None = None,
) -> float:
    """Relative-smoothness constant of the phase-retrieval term w.r.t. ``kernel``.

    Starts from :func:`smad_deterministic_bound` and verifies
    ``L Hess psi - Hess F >= 0`` at ``n_check_samples`` random points (scale
    ``radius``, default ``1 + 2|x_ref|``), inflating by 1.1 up to ten times.
    """
    if not isinstance(kernel, QuarticKernel):
        raise ValueError("the phase-retrieval constant is derived for the quartic kernel")
    L = smad_deterministic_bound(data)
    if L <= 0.0:
        L = 1e-12
    term = PhaseRetrieval(data, L=L)
    if radius is None:
        ref = 0.0 if data.x_ref is None else float(np.linalg.norm(data.x_ref))
        radius = 1.0 + 2.0 * ref
    rng = np.random.default_rng(seed)
    points = [np.zeros(data.n)]
    for _ in range(n_check_samples):
        g = rng.standard_normal(data.n)
        points.append(radius * rng.uniform() * g / np.linalg.norm(g))
    if data.x_ref is not None:
        points.append(data.x_ref)
    for _ in range(11):
        if all(relative_smoothness_gap(term, kernel, L, x) >= -1e-8 * L for x in points):
            return L
        L *= 1.1
    raise SmadEstimationError("relative smoothness check still failing after 10 inflations")


class PhaseRetrieval(SmoothTerm):
    """Phase-retrieval fidelity ``F(x) = (1/4m) | |Ax|^2 - y |^2``."""

    def __init__(self, data: PhaseRetrievalData, L: float | None = None):
        self.data = data
        self.n = data.n
        self.L = smad_deterministic_bound(data) if L is None else float(L)

    def value(self, x):
        return pr_value(self.data, x)

    def grad(self, x):
        return pr_grad(self.data, x)

    def hess(self, x):
        return pr_hessian(self.data, x)


@dataclass(eq=False)
class QuadraticTerm(SmoothTerm):
    """``F(x) = <x, Qx>/2 - <b, x>``."""

    Q: np.ndarray
    b: np.ndarray
    L: float = field(default=1.0)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.n = self.Q.shape[0]

    def value(self, x):
        return 0.5 * float(x @ self.Q @ x) - float(self.b @ x)

    def grad(self, x):
        return self.Q @ x - self.b

    def hess(self, x):
        return np.array(self.Q)


def quadratic_term(Q: np.ndarray, b: np.ndarray | None = None) -> QuadraticTerm:
    """Quadratic toy; ``L = max(lambda_max(Q), 1)`` works since ``Hess psi >= Id``."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("Q must be square")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    b = np.zeros(Q.shape[0]) if b is None else np.asarray(b, dtype=float)
    L = max(float(np.linalg.eigvalsh(Q)[-1]), 1.0)
    return QuadraticTerm(Q, b, L)


class ComposedTerm(SmoothTerm):
    """``v -> F(W v)`` for a synthesis dictionary ``W``.

    The Hessian ``W^T Hess F(Wv) W`` is exact. The default constant
    ``F.L * max(|W|^4, |W|^2)`` is valid (since ``|Wv| <= |W| |v|``) but
    loose; pass ``L`` to override it.
    """

    def __init__(self, inner: SmoothTerm, W: LinearOperator, L: float | None = None):
        self.inner = inner
        self.W = W
        self.n = W.shape[1]
        if L is None:
            op = np.linalg.norm(W.matrix, 2)
            L = inner.L * max(op**4, op**2)
        self.L = float(L)

    def value(self, v):
        return self.inner.value(self.W.apply(v))

    def grad(self, v):
        return self.W.adjoint(self.inner.grad(self.W.apply(v)))

    def hess(self, v):
        Wm = self.W.matrix
        return Wm.T @ self.inner.hess(self.W.apply(v)) @ Wm


def bregman_gap_sample(term: SmoothTerm, kernel: Kernel, L: float, x: np.ndarray, h: np.ndarray) -> float:
    """``D_F(x+h, x) - L D_psi(x+h, x)``; nonpositive when ``F`` is ``L``-smooth relative to psi."""
    xh = x + h
    d_f = term.value(xh) - term.value(x) - float(np.dot(term.grad(x), h))
    return d_f - L * bregman_divergence(kernel, xh, x)
