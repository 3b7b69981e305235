"""Build seeded instances from a config, run them and persist the artifacts."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    build_local_model,
    convex_quadratic_toy,
    descent_conditions_report,
    detect_identification,
    double_well_toy,
    escape_study,
    estimate_sigma,
    fit_empirical_rate,
    indefinite_quadratic_toy,
    spectral_rate,
)
from .config import ExperimentConfig, ConfigError, save_config
from .kernels import quartic_kernel
from .linops import (
    LinearOperator,
    gaussian_matrix,
    haar_dictionary,
    load_operator_text,
    measurement_count,
    planted_signal,
    save_operator_text,
    substream,
)
from .regularizers import GroupL1Norm, L1Norm, TotalVariation1D, synthesis_l1
from .smooth import PhaseRetrieval, PhaseRetrievalData, estimate_smad_constant
from .solver import SCHEMA_VERSION, CompositeProblem, InertialSchedule, SolverConfig, run, summary_dict, write_summary

__all__ = [
    "Instance",
    "RunResult",
    "build_instance",
    "schedule_from_config",
    "run_experiment",
    "write_run",
    "output_root",
    "load_run",
    "predict_rate_table",
    "run_escape",
    "OUTPUT_ROOT_ENV",
]

OUTPUT_ROOT_ENV = "IBPG_OUTPUT_ROOT"
SIGNAL_KIND = {"l1": "sparse", "group": "block-sparse", "tv-analysis": "piecewise-constant",
               "haar-synthesis": "piecewise-constant"}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@dataclass
class Instance:
    problem: CompositeProblem
    x_ref: np.ndarray | None  # planted signal (signal space)
    synthesis: LinearOperator | None = None  # coefficient -> signal map for synthesis problems
    catalog: list = field(default_factory=list)

    def to_signal(self, v: np.ndarray) -> np.ndarray:
        return v if self.synthesis is None else self.synthesis.apply(v)


def schedule_from_config(cfg: ExperimentConfig) -> InertialSchedule:
    return InertialSchedule(mode=cfg.schedule, a=cfg.a, alpha=cfg.alpha, kappa=cfg.kappa, a_low=cfg.a_low,
                            a_high=cfg.a_high, switch_at=cfg.switch_at)


def _step_constant(cfg: ExperimentConfig):
    if cfg.gamma is not None:
        return 1.0 / cfg.gamma
    return cfg.L


def build_instance(cfg: ExperimentConfig) -> Instance:
    """Deterministic problem instance for ``cfg``."""
    kernel_kappa = cfg.kappa
    if cfg.problem == "smooth-toy":
        smooth, catalog = {
            "double-well": double_well_toy,
            "indefinite-quadratic": indefinite_quadratic_toy,
            "convex-quadratic": lambda: convex_quadratic_toy(cfg.n),
        }[cfg.toy]()
        prob = CompositeProblem(quartic_kernel(smooth.n, kernel_kappa), smooth, None, 0.0, L=_step_constant(cfg))
        return Instance(prob, None, None, catalog)

    kind = SIGNAL_KIND[cfg.problem]
    try:
        x_ref = planted_signal(kind, cfg.n, cfg.s, cfg.seed_signal, cfg.block_size)
        m = cfg.m if cfg.m is not None else measurement_count(cfg.recipe, cfg.n, cfg.s, cfg.block_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    A = gaussian_matrix(m, cfg.n, cfg.seed_matrix).matrix * cfg.effective_row_scale
    data = PhaseRetrievalData.noiseless(A, x_ref)
    step_L = _step_constant(cfg)

    if cfg.problem == "haar-synthesis":
        try:
            W = haar_dictionary(cfg.n, cfg.j_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        # a step override fixes the signal-space constant; composition rescales it by |W|
        smooth, reg = synthesis_l1(PhaseRetrieval(data, L=step_L), W)
        prob = CompositeProblem(quartic_kernel(W.shape[1], kernel_kappa), smooth, reg, cfg.lam,
                                support_eps=cfg.support_eps)
        return Instance(prob, x_ref, W)

    kernel = quartic_kernel(cfg.n, kernel_kappa)
    if step_L is None:
        step_L = estimate_smad_constant(data, kernel, cfg.smad_check_samples, seed=cfg.seed_matrix)
    if cfg.problem == "l1":
        reg = L1Norm()
    elif cfg.problem == "group":
        if cfg.n % cfg.block_size:
            raise ConfigError("block_size must divide n")
        reg = GroupL1Norm.contiguous(cfg.n, cfg.block_size)
    else:
        reg = TotalVariation1D(cfg.n)
    prob = CompositeProblem(kernel, PhaseRetrieval(data, L=step_L), reg, cfg.lam, L=step_L, x_ref=x_ref,
                            support_eps=cfg.support_eps)
    return Instance(prob, x_ref)


def initial_point(cfg: ExperimentConfig, inst: Instance) -> np.ndarray:
    dim = inst.problem.n
    noise = cfg.init_scale * substream(cfg.seed_init, "init").standard_normal(dim)
    if cfg.init_center == "zero" or inst.x_ref is None:
        return noise
    if inst.synthesis is not None:
        # minimum-norm coefficients of the planted signal
        center = np.linalg.lstsq(inst.synthesis.matrix, inst.x_ref, rcond=None)[0]
    else:
        center = inst.x_ref
    return center + noise


@dataclass
class RunResult:
    config: ExperimentConfig
    trace: object
    identification: int | None
    rho_pred: float | None
    rho_obs: float | None
    sigma: float | None
    descent: object | None
    metrics: dict
    timings: dict
    local_model: object | None = None
    spectral: object | None = None
    out_dir: Path | None = None


def _relative_error(x, ref):
    nr = np.linalg.norm(ref)
    if nr == 0:
        return float(np.linalg.norm(x))
    return float(min(np.linalg.norm(x - ref), np.linalg.norm(x + ref)) / nr)


def run_experiment(cfg: ExperimentConfig, inst: Instance | None = None) -> RunResult:
    """Run the solver and the enabled analyses. Raises ``DivergenceError`` on blow-up."""
    t0 = time.perf_counter()
    inst = build_instance(cfg) if inst is None else inst
    prob = inst.problem
    sched = schedule_from_config(cfg)
    t1 = time.perf_counter()
    trace = run(prob, SolverConfig(max_iters=cfg.max_iters, tol=cfg.tol, schedule=sched, x0=initial_point(cfg, inst)))
    t2 = time.perf_counter()
    x_star = trace.x_final
    metrics = {"dimension": prob.n, "L": prob.L, "lam": prob.lam}
    if inst.x_ref is not None:
        metrics["relative_error_to_reference"] = _relative_error(inst.to_signal(x_star), inst.x_ref)
    K = detect_identification(trace.records["support_hash"]) if cfg.identify else None
    metrics["final_support_size"] = len(trace.patterns[-1])
    rho_pred = rho_obs = sigma = None
    model = spec = None
    if cfg.predict_rate and prob.lam >= 0 and trace.converged:
        gamma = trace.records["gamma_k"][-1]
        a = trace.records["a_k"][-1]
        model = build_local_model(prob, x_star, gamma, a, eps=prob.support_eps)
        spec = spectral_rate(model)
        rho_pred = spec.rho
        sigma = estimate_sigma(prob, x_star, basis=model.basis).sigma
        errors = [np.linalg.norm(x - x_star) for x in trace.iterates]
        floor = max(1e-13, 1e3 * trace.records["step_norm"][-1])
        fit = fit_empirical_rate(errors, start=K or 0, tail_fraction=cfg.rate_tail_fraction, floor=floor)
        rho_obs = fit.rho if fit.defined else None
        metrics.update({"rate_fit_points": fit.n_points, "spectral_mismatch": spec.mismatch,
                        "eta_min": float(model.eta[0]) if model.dim else None,
                        "eta_max": float(model.eta[-1]) if model.dim else None})
    if isinstance(prob.reg, L1Norm) and inst.synthesis is None:
        metrics["nondegeneracy_margin"] = prob.reg.nondegeneracy_margin(
            x_star, prob.smooth.grad(x_star), prob.lam, prob.support_eps) if prob.lam > 0 else None
    step = trace.records["step_norm"][-1]
    nx = float(np.linalg.norm(x_star))
    if rho_obs is not None and rho_obs < 1:
        metrics["limit_error_estimate"] = step / (1.0 - rho_obs) / max(nx, 1e-300)
    descent = descent_conditions_report(trace, prob) if cfg.descent_report else None
    t3 = time.perf_counter()
    timings = {"build_s": t1 - t0, "solve_s": t2 - t1, "analysis_s": t3 - t2}
    return RunResult(cfg, trace, K, rho_pred, rho_obs, sigma, descent, metrics, timings, model, spec)


def _plot_rows(result: RunResult):
    x_star = result.trace.x_final
    ns = max(float(np.linalg.norm(x_star)), 1e-300)
    errs = [float(np.linalg.norm(x - x_star)) / ns for x in result.trace.iterates]
    K = result.identification or 0
    rows = []
    for k, e in enumerate(errs):
        pred = ""
        if result.rho_pred is not None and k >= K and errs[K] > 0 and 0 < result.rho_pred:
            pred = repr(math.log10(errs[K]) + (k - K) * math.log10(result.rho_pred))
        rows.append((k, repr(math.log10(e)) if e > 0 else "", pred))
    return rows


def summary_of(result: RunResult) -> dict:
    d = result.descent
    extra = {
        "schema_version": SCHEMA_VERSION,
        "config": result.config.to_dict(),
        "identification_index": result.identification,
        "rho_predicted": result.rho_pred,
        "rho_observed": result.rho_obs,
        "sigma": result.sigma,
        "metrics": result.metrics,
    }
    if d is not None:
        extra["descent"] = {
            "rho1": d.rho1, "rho2": d.rho2, "c3_tail_deviation": d.c3_tail_deviation,
            "first_c1_violation": d.first_c1_violation, "c1": d.c1_pass, "c2": d.c2_pass, "c3": d.c3_pass,
        }
    return summary_dict(result.trace, extra=extra)


def write_run(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(result.config, out / "config.toml")
    result.trace.write_csv(out / "trace.csv")
    write_summary(out / "summary.json", summary_of(result))
    save_operator_text(out / "final_iterate.txt", result.trace.x_final)
    with open(out / "plot.csv", "w", encoding="utf-8") as fh:
        fh.write("k,log10_rel_error,log10_predicted\n")
        for k, e, p in _plot_rows(result):
            fh.write(f"{k},{e},{p}\n")
    if result.local_model is not None:
        (out / "local_model.json").write_text(json.dumps(result.local_model.to_dict(), indent=1) + "\n",
                                              encoding="utf-8")
    result.out_dir = out
    return out


def load_run(run_dir: str | Path) -> tuple[dict, np.ndarray]:
    """Summary dict and final iterate of a run directory; rejects unknown schema majors."""
    run_dir = Path(run_dir)
    try:
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        x = load_operator_text(run_dir / "final_iterate.txt").ravel()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{run_dir}: not a run directory ({exc})") from exc
    major = str(summary.get("schema_version", "")).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise ConfigError(f"{run_dir}: unsupported schema version {summary.get('schema_version')!r}")
    return summary, x


def predict_rate_table(run_dir: str | Path) -> dict:
    """Rebuild the instance of a finished run and recompute its local-model prediction."""
    summary, x_star = load_run(run_dir)
    if not summary.get("converged"):
        raise ConfigError(f"{run_dir}: run did not converge; no limit point to linearize at")
    cfg = ExperimentConfig.from_dict(summary["config"])
    inst = build_instance(cfg)
    prob = inst.problem
    trace_csv = Path(run_dir) / "trace.csv"
    from .solver import IterationTrace

    rec = IterationTrace.read_csv(trace_csv)
    gamma, a = rec["gamma_k"][-1], rec["a_k"][-1]
    model = build_local_model(prob, x_star, gamma, a, eps=prob.support_eps)
    spec = spectral_rate(model)
    sig = estimate_sigma(prob, x_star, basis=model.basis)
    rho_obs = summary.get("rho_observed")
    return {
        "gamma": gamma,
        "a": a,
        "sigma": sig.sigma,
        "tangent_dim": model.dim,
        "eta_min": float(model.eta[0]) if model.dim else None,
        "eta_max": float(model.eta[-1]) if model.dim else None,
        "rho_M": spec.rho,
        "rho_roots": spec.rho_roots,
        "rho_observed": rho_obs,
        "gap": None if rho_obs is None else abs(spec.rho - rho_obs),
        "note": "a = 1: spec(M) = {0} U spec(WV)" if a == 1.0 else "",
    }


def run_escape(cfg: ExperimentConfig):
    if cfg.problem != "smooth-toy":
        raise ConfigError("escape needs problem = 'smooth-toy'")
    inst = build_instance(cfg)
    return escape_study(inst.problem.smooth, inst.catalog, n_trials=cfg.n_trials,
                        init_scale=cfg.escape_init_scale, seed=cfg.seed_init, a=cfg.escape_a,
                        kernel=inst.problem.kernel, L=inst.problem.L, budget=cfg.escape_budget,
                        radius=cfg.escape_radius, escape_radius=cfg.escape_bound, workers=cfg.workers)
