"""scikit-learn style estimator for regularized phase retrieval."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .analysis import detect_identification
from .kernels import quartic_kernel
from .linops import substream
from .regularizers import GroupL1Norm, L1Norm, TotalVariation1D
from .smooth import PhaseRetrieval, PhaseRetrievalData, estimate_smad_constant
from .solver import CompositeProblem, InertialSchedule, SolverConfig, run

__all__ = ["PhaseRetrievalRegressor"]


class PhaseRetrievalRegressor(RegressorMixin, BaseEstimator):
    """Recover ``x`` from ``y ~ (A x)^2`` by inertial Bregman proximal gradient.

    Parameters
    ----------
    penalty : {"l1", "group", "tv"}
        Regularizer on ``x``.
    lam : float
        Regularization weight.
    block_size : int
        Contiguous block length for ``penalty="group"``.
    schedule, a, alpha, kappa
        Inertia schedule, see :class:`ibpg.solver.InertialSchedule`.
    gamma : float or None
        Fixed step. ``None`` uses an estimated relative-smoothness constant.
    max_iter, tol : int, float
        Iteration budget and relative step tolerance.
    init_scale : float
        Standard deviation of the random start (ignored when ``x0`` is passed to ``fit``).
    random_state : int
        Seed of the start.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Final iterate. Defined up to a global sign.
    n_iter_ : int
    identification_index_ : int or None
        First iteration after which the support stayed fixed.
    trace_ : IterationTrace
    converged_ : bool
    """

    def __init__(self, penalty="l1", lam=1e-5, block_size=8, schedule="bpg", a=1.0, alpha=3.0, kappa=2.0,
                 gamma=None, max_iter=20_000, tol=1e-10, init_scale=1.0, random_state=0):
        self.penalty = penalty
        self.lam = lam
        self.block_size = block_size
        self.schedule = schedule
        self.a = a
        self.alpha = alpha
        self.kappa = kappa
        self.gamma = gamma
        self.max_iter = max_iter
        self.tol = tol
        self.init_scale = init_scale
        self.random_state = random_state

    def _regularizer(self, n):
        if self.penalty == "l1":
            return L1Norm()
        if self.penalty == "group":
            if n % self.block_size:
                raise ValueError("block_size must divide n_features")
            return GroupL1Norm.contiguous(n, self.block_size)
        if self.penalty == "tv":
            return TotalVariation1D(n)
        raise ValueError(f"unknown penalty {self.penalty!r}")

    def fit(self, X, y, x0=None):
        X, y = check_X_y(X, y, y_numeric=True)
        n = X.shape[1]
        self.n_features_in_ = n
        data = PhaseRetrievalData(X, y)
        kernel = quartic_kernel(n, self.kappa)
        L = 1.0 / self.gamma if self.gamma is not None else estimate_smad_constant(data, kernel)
        problem = CompositeProblem(kernel, PhaseRetrieval(data, L=L), self._regularizer(n), self.lam, L=L)
        if x0 is None:
            x0 = self.init_scale * substream(self.random_state, "init").standard_normal(n)
        sched = InertialSchedule(mode=self.schedule, a=self.a, alpha=self.alpha, kappa=self.kappa)
        trace = run(problem, SolverConfig(max_iters=self.max_iter, tol=self.tol, schedule=sched,
                                          x0=np.asarray(x0, dtype=float), store_iterates=False))
        self.trace_ = trace
        self.coef_ = trace.x_final
        self.n_iter_ = len(trace) - 1
        self.converged_ = trace.converged
        self.identification_index_ = detect_identification(trace.records["support_hash"])
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return (X @ self.coef_) ** 2
