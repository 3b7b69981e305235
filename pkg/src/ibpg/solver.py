"""Inertial Bregman proximal gradient (IBPG), BPG and inertial mirror descent.

One iteration, with ``gamma_k = a_k**(kappa-1) / L``::

    y_k     = z_k + a_k (x_k - z_k)
    x_{k+1} = (grad psi + gamma_k lam dR)^-1 (grad psi(y_k) - gamma_k grad F(y_k))
    z_{k+1} = x_k + a_k (x_{k+1} - x_k)

``a_k = 1`` gives plain BPG. With ``R = 0`` the update is mirror descent and
:func:`imd_step` runs it with a fixed inertial parameter.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernels import Kernel, bregman_divergence
from .linops import substream
from .regularizers import Regularizer, ZeroRegularizer
from .smooth import SmoothTerm

__all__ = [
    "InertialSchedule",
    "ScheduleReport",
    "schedule_validate",
    "CompositeProblem",
    "SolverState",
    "SolverConfig",
    "IterationTrace",
    "DivergenceError",
    "initial_state",
    "ibpg_step",
    "imd_step",
    "lyapunov_value",
    "relative_error_certificate",
    "run",
    "run_imd",
    "TRACE_COLUMNS",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = "1.0"
TRACE_COLUMNS = (
    "k", "phi", "f", "g", "lyapunov", "step_norm", "bregman_step",
    "a_k", "gamma_k", "support_hash", "dist_to_ref",
)


class DivergenceError(RuntimeError):
    """Iterates became non-finite or left the configured bound.

    ``trace`` holds every record produced before the failure.
    """

    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state


@dataclass(frozen=True)
class InertialSchedule:
    """Inertial parameters ``a_k``.

    ``mode`` is ``"bpg"`` (``a_k = 1``), ``"constant"`` (``a_k = a``) or
    ``"polynomial"`` (``a_k = (k+1)/(k+1+alpha)``). ``a_initial`` overrides
    ``a_0`` (the algorithm starts from ``a_0 = 1``); ``None`` keeps the mode's
    own value at ``k = 0``. From index ``switch_at`` on, the schedule emits the
    constant ``a``.
    """

    mode: str = "bpg"
    a: float = 1.0
    alpha: float = 3.0
    kappa: float = 2.0
    a_low: float | None = None
    a_high: float = 1.0
    switch_at: int | None = None
    a_initial: float | None = 1.0

    def __post_init__(self):
        if self.mode not in ("bpg", "constant", "polynomial"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not 1.0 < self.kappa <= 2.0:
            raise ValueError("kappa must lie in (1, 2]")
        if not 0.0 < self.a <= 1.0:
            raise ValueError("a must lie in (0, 1]")
        if self.mode == "polynomial" and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def lower(self) -> float:
        if self.a_low is not None:
            return self.a_low
        if self.mode == "bpg":
            return 1.0
        if self.mode == "constant":
            return self.a
        return min(1.0 / (1.0 + self.alpha), self.a)

    def value(self, k: int) -> float:
        if k == 0 and self.a_initial is not None:
            return float(self.a_initial)
        if self.mode == "bpg":
            return 1.0
        if self.mode == "constant" or (self.switch_at is not None and k >= self.switch_at):
            return float(self.a)
        return (k + 1.0) / (k + 1.0 + self.alpha)

    def gamma(self, k: int, L: float) -> float:
        return self.value(k) ** (self.kappa - 1.0) / L


@dataclass
class ScheduleReport:
    ok: bool
    first_violation: int | None
    horizon: int
    out_of_bounds: int | None = None


def schedule_condition(a_k: float, a_next: float, kappa: float) -> tuple[float, float]:
    """Both sides of ``(a'^(1-kappa) + 1)^(1/kappa) (1 - a') < a^(1/kappa - 1) / (1 - a)``."""
    lhs = (a_next ** (1.0 - kappa) + 1.0) ** (1.0 / kappa) * (1.0 - a_next)
    rhs = math.inf if a_k >= 1.0 else a_k ** (1.0 / kappa - 1.0) / (1.0 - a_k)
    return lhs, rhs


def schedule_validate(schedule: InertialSchedule, horizon: int, slack: float = 1e-12) -> ScheduleReport:
    """Check the admissibility inequality for consecutive pairs ``k = 0..horizon``."""
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    lo, hi = schedule.lower, schedule.a_high
    out = None
    for k in range(horizon + 1):
        a_k, a_next = schedule.value(k), schedule.value(k + 1)
        if out is None and not (lo - slack <= a_next <= hi + slack):
            out = k + 1
        lhs, rhs = schedule_condition(a_k, a_next, schedule.kappa)
        if not lhs < rhs * (1.0 + slack):
            return ScheduleReport(False, k, horizon, out)
    return ScheduleReport(out is None, None, horizon, out)


@dataclass(eq=False)
class CompositeProblem:
    """``min_x F(x) + lam R(x)`` with a kernel and step constant ``L``.

    ``L`` defaults to the smooth term's relative-smoothness constant. Setting
    it to ``1/gamma`` reproduces a fixed-step run with step ``gamma``.
    """

    kernel: Kernel
    smooth: SmoothTerm
    reg: Regularizer | None = None
    lam: float = 0.0
    L: float | None = None
    x_ref: np.ndarray | None = None
    support_eps: float | None = None

    def __post_init__(self):
        if self.reg is None:
            self.reg = ZeroRegularizer(self.smooth.n)
        if self.L is None:
            self.L = float(self.smooth.L)
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def n(self) -> int:
        return self.smooth.n

    def g(self, x) -> float:
        return self.lam * self.reg.value(x) if self.lam else 0.0

    def phi(self, x) -> float:
        return self.smooth.value(x) + self.g(x)

    def dprox(self, p, gamma) -> np.ndarray:
        if self.lam == 0.0:
            return self.kernel.grad_inverse(p)
        return self.reg.dprox(p, gamma * self.lam)

    def support(self, x):
        if isinstance(self.reg, ZeroRegularizer):
            return self.reg.support(x)
        return self.reg.support(x, self.support_eps)


@dataclass(frozen=True, eq=False)
class SolverState:
    x: np.ndarray
    x_prev: np.ndarray
    z: np.ndarray
    a: float
    gamma: float
    k: int
    a_prev: float = 1.0
    y: np.ndarray | None = None  # extrapolation point that produced x


def initial_state(x0: np.ndarray, schedule: InertialSchedule, L: float) -> SolverState:
    """``z_{-1} = x_{-1} = z_0 = x_0``, ``a_{-1} = 1``, ``a_0`` from the schedule."""
    x0 = np.array(x0, dtype=float)
    a0 = schedule.value(0)
    return SolverState(x0, x0.copy(), x0.copy(), a0, a0 ** (schedule.kappa - 1.0) / L, 0, 1.0, None)


def _check_finite(state, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(f"non-finite iterate at k={state.k}", state=state)


def ibpg_step(state: SolverState, problem: CompositeProblem, schedule: InertialSchedule) -> SolverState:
    a, gamma = state.a, state.gamma
    y = a * state.x + (1.0 - a) * state.z  # exact y = x when a = 1
    p = problem.kernel.grad(y) - gamma * problem.smooth.grad(y)
    _check_finite(state, p)
    x_next = problem.dprox(p, gamma)
    _check_finite(state, x_next)
    z_next = a * x_next + (1.0 - a) * state.x
    a_next = schedule.value(state.k + 1)
    return SolverState(
        x_next, state.x, z_next, a_next, a_next ** (schedule.kappa - 1.0) / problem.L,
        state.k + 1, a, y,
    )


def imd_step(state: SolverState, smooth: SmoothTerm, kernel: Kernel, a: float, gamma: float) -> SolverState:
    """Inertial mirror descent step with fixed ``a`` and ``gamma`` (no regularizer)."""
    y = a * state.x + (1.0 - a) * state.z  # exact y = x when a = 1
    p = kernel.grad(y) - gamma * smooth.grad(y)
    _check_finite(state, p)
    x_next = kernel.grad_inverse(p)
    _check_finite(state, x_next)
    z_next = a * x_next + (1.0 - a) * state.x
    return SolverState(x_next, state.x, z_next, a, gamma, state.k + 1, a, y)


def lyapunov_value(x, x_prev, a_prev, kappa, L, problem: CompositeProblem) -> float:
    """``Phi(x_k) + a_{k-1}^(1-kappa) L D_psi(x_k, x_{k-1})`` (``inf Phi`` omitted)."""
    return problem.phi(x) + a_prev ** (1.0 - kappa) * L * bregman_divergence(problem.kernel, x, x_prev)


def relative_error_certificate(x_next, x, y, problem: CompositeProblem, gamma: float):
    """Norms of the two blocks of the explicit subgradient ``v_{k+1}`` of the Lyapunov function.

    ``v1 = grad F(x_{k+1}) - grad F(y_k) + (grad psi(y_k) - grad psi(x_k)) / gamma``,
    ``v2 = -Hess psi(x_k) (x_{k+1} - x_k) / gamma``.
    """
    ker, sm = problem.kernel, problem.smooth
    v1 = sm.grad(x_next) - sm.grad(y) + (ker.grad(y) - ker.grad(x)) / gamma
    v2 = -(ker.hess(x) @ (x_next - x)) / gamma
    return float(np.linalg.norm(v1)), float(np.linalg.norm(v2))


@dataclass
class SolverConfig:
    max_iters: int = 50_000
    tol: float = 1e-10
    schedule: InertialSchedule = field(default_factory=InertialSchedule)
    init_scale: float = 1.0
    seed: int = 0
    x0: np.ndarray | None = None
    store_iterates: bool = True
    divergence_bound: float = 1e12


@dataclass
class IterationTrace:
    """Per-iteration records; index ``k`` of each list refers to iterate ``x_k``.

    ``a_k``/``gamma_k`` are the parameters used to compute ``x_{k+1}`` from
    record ``k``. ``iterates`` and ``extrapolations`` (``y_{k-1}`` that
    produced ``x_k``; ``None`` at ``k = 0``) are kept when requested.
    """

    kappa: float
    L: float
    records: dict = field(default_factory=lambda: {c: [] for c in TRACE_COLUMNS})
    patterns: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    extrapolations: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def __len__(self):
        return len(self.records["k"])

    def column(self, name) -> np.ndarray:
        if name == "support_hash":
            return np.array(self.records[name], dtype=object)
        return np.asarray(self.records[name], dtype=float)

    @property
    def x_final(self) -> np.ndarray:
        return self.iterates[-1]

    def append(self, k, x, x_prev, a_used_prev, a_k, gamma_k, problem, pattern):
        phi_f = problem.smooth.value(x)
        phi_g = problem.g(x)
        d = bregman_divergence(problem.kernel, x, x_prev)
        r = self.records
        r["k"].append(k)
        r["phi"].append(phi_f + phi_g)
        r["f"].append(phi_f)
        r["g"].append(phi_g)
        r["lyapunov"].append(phi_f + phi_g + a_used_prev ** (1.0 - self.kappa) * self.L * d)
        r["step_norm"].append(float(np.linalg.norm(x - x_prev)))
        r["bregman_step"].append(d)
        r["a_k"].append(a_k)
        r["gamma_k"].append(gamma_k)
        r["support_hash"].append(pattern.digest())
        ref = problem.x_ref
        r["dist_to_ref"].append(float(np.linalg.norm(x - ref)) if ref is not None else math.nan)
        self.patterns.append(pattern)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for i in range(len(self)):
                row = []
                for c in TRACE_COLUMNS:
                    v = self.records[c][i]
                    row.append(v if isinstance(v, (str, int)) else repr(float(v)))
                w.writerow(row)

    @staticmethod
    def read_csv(path: str | Path) -> dict:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        out = {c: [] for c in TRACE_COLUMNS}
        for row in rows:
            for c in TRACE_COLUMNS:
                v = row[c]
                out[c].append(v if c == "support_hash" else (int(v) if c == "k" else float(v)))
        return out


def _initial_point(problem: CompositeProblem, config: SolverConfig) -> np.ndarray:
    if config.x0 is not None:
        return np.array(config.x0, dtype=float)
    return config.init_scale * substream(config.seed, "init").standard_normal(problem.n)


def run(problem: CompositeProblem, config: SolverConfig | None = None) -> IterationTrace:
    """Iterate until ``|x_k - x_{k-1}| <= tol (1 + |x_k|)`` or ``max_iters``.

    Raises :class:`DivergenceError` (with the partial trace attached) when an
    iterate is non-finite or exceeds ``divergence_bound`` in norm.
    """
    config = SolverConfig() if config is None else config
    sched = config.schedule
    x0 = _initial_point(problem, config)
    state = initial_state(x0, sched, problem.L)
    trace = IterationTrace(kappa=sched.kappa, L=problem.L)
    trace.append(0, state.x, state.x_prev, 1.0, state.a, state.gamma, problem, problem.support(state.x))
    if config.store_iterates:
        trace.iterates.append(state.x.copy())
        trace.extrapolations.append(None)
    for _ in range(config.max_iters):
        try:
            new = ibpg_step(state, problem, sched)
        except DivergenceError as err:
            err.trace = trace
            trace.message = str(err)
            raise
        if not np.linalg.norm(new.x) <= config.divergence_bound:
            trace.message = f"iterate norm exceeded {config.divergence_bound:g} at k={new.k}"
            raise DivergenceError(trace.message, trace=trace, state=new)
        state = new
        trace.append(state.k, state.x, state.x_prev, state.a_prev, state.a, state.gamma,
                     problem, problem.support(state.x))
        if config.store_iterates:
            trace.iterates.append(state.x.copy())
            trace.extrapolations.append(state.y.copy())
        if trace.records["step_norm"][-1] <= config.tol * (1.0 + np.linalg.norm(state.x)):
            trace.converged = True
            trace.message = f"converged at k={state.k}"
            break
    else:
        trace.message = f"max_iters={config.max_iters} reached"
    if not config.store_iterates:
        trace.iterates.append(state.x.copy())
    return trace


def run_imd(smooth: SmoothTerm, kernel: Kernel, x0, a: float, L: float | None = None,
            max_iters: int = 100_000, tol: float = 1e-12, escape_radius: float = 1e6,
            x_prev=None):
    """Fixed-parameter inertial mirror descent from ``(x0, x_prev)``.

    Returns ``(x_final, iterations, status)`` where status is ``"converged"``,
    ``"unbounded"`` (norm passed ``escape_radius``) or ``"budget"``.
    """
    L = smooth.L if L is None else L
    gamma = a ** (kernel.kappa - 1.0) / L
    x0 = np.array(x0, dtype=float)
    xp = x0.copy() if x_prev is None else np.array(x_prev, dtype=float)
    state = SolverState(x0, xp, xp + (x0 - xp) if x_prev is None else xp + a * (x0 - xp), a, gamma, 0, a)
    for it in range(1, max_iters + 1):
        try:
            state = imd_step(state, smooth, kernel, a, gamma)
        except DivergenceError:
            return state.x, it, "unbounded"
        nx = np.linalg.norm(state.x)
        if nx > escape_radius:
            return state.x, it, "unbounded"
        if np.linalg.norm(state.x - state.x_prev) <= tol * (1.0 + nx):
            return state.x, it, "converged"
    return state.x, max_iters, "budget"


def summary_dict(trace: IterationTrace, config: SolverConfig | None = None, extra: dict | None = None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "iterations": len(trace) - 1,
        "converged": trace.converged,
        "message": trace.message,
        "final_phi": trace.records["phi"][-1],
        "final_step_norm": trace.records["step_norm"][-1],
        "final_support_hash": trace.records["support_hash"][-1],
        "L": trace.L,
        "kappa": trace.kappa,
    }
    if config is not None:
        cfg = asdict(replace(config, x0=None))
        out["solver_config"] = cfg
    if extra:
        out.update(extra)
    return out


def _json_default(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    return float(v)


def write_summary(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")
