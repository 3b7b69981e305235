"""Command-line entry point: ``ibpg {run,check,escape,predict-rate,batch,presets}``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 oracle failure.
Output goes under ``$IBPG_OUTPUT_ROOT`` (default ``./runs``) unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import tomli

from . import __version__
from .checks import run_checks
from .config import PRESETS, ConfigError, ExperimentConfig, load_config, preset
from .experiments import output_root, predict_rate_table, run_escape, run_experiment, write_run
from .solver import DivergenceError, write_summary

log = logging.getLogger("ibpg")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_ORACLE = 0, 2, 3, 4


def _parse_override(text: str) -> dict:
    """``key=value`` with a TOML value; bare words are taken as strings."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        return tomli.loads(f"{key.strip()} = {value.strip()}")
    except tomli.TOMLDecodeError:
        return {key.strip(): value.strip()}


def _resolve(source: str, overrides=()) -> ExperimentConfig:
    """Preset name or TOML path, with ``key=value`` overrides applied."""
    cfg = preset(source) if source in PRESETS else load_config(source)
    changes = {}
    for item in overrides:
        changes.update(_parse_override(item))
    return cfg.replace(**changes) if changes else cfg


def _run_one(cfg: ExperimentConfig, out: Path) -> int:
    try:
        result = run_experiment(cfg)
    except DivergenceError as err:
        out.mkdir(parents=True, exist_ok=True)
        if err.trace is not None:
            err.trace.write_csv(out / "trace.csv")
        write_summary(out / "summary.json", {"schema_version": "1.0", "diverged": True, "message": str(err),
                                             "config": cfg.to_dict()})
        log.error("%s diverged: %s (partial trace in %s)", cfg.name, err, out)
        return EXIT_DIVERGED
    write_run(result, out)
    t = result.timings
    print(f"{cfg.name}: iterations={len(result.trace) - 1} converged={result.trace.converged} "
          f"K={result.identification} rho_pred={_fmt(result.rho_pred)} rho_obs={_fmt(result.rho_obs)} -> {out}")
    log.info("timings: build %.2fs, solve %.2fs, analysis %.2fs", t["build_s"], t["solve_s"], t["analysis_s"])
    return EXIT_OK


def _fmt(v):
    return "n/a" if v is None else f"{v:.6f}"


def cmd_run(args) -> int:
    cfg = _resolve(args.config, args.set)
    out = Path(args.out) if args.out else output_root() / cfg.name
    return _run_one(cfg, out)


def cmd_check(args) -> int:
    results = run_checks(seed=args.seed, fault=args.inject_fault, n_dprox=args.cases)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_ORACLE
    print("all checks passed")
    return EXIT_OK


def cmd_escape(args) -> int:
    cfg = _resolve(args.config, args.set)
    report = run_escape(cfg)
    out = Path(args.out) if args.out else output_root() / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "escape.json", report.to_dict())
    print(f"{'label':<14s} count")
    for label, count in report.counts.items():
        print(f"{label:<14s} {count}")
    for sp in report.to_dict()["critical_points"]:
        print(f"{sp['kind']} at {sp['x']}: max|eig DT| = {sp['max_abs_eigenvalue']:.4f}, det DT = {sp['det']:.3e}")
    return EXIT_OK


def cmd_predict_rate(args) -> int:
    table = predict_rate_table(args.run_dir)
    if args.json:
        print(json.dumps(table, indent=2))
        return EXIT_OK
    for key, value in table.items():
        print(f"{key:<14s} {value if isinstance(value, str) else _fmt(value) if isinstance(value, float) else value}")
    return EXIT_OK


def cmd_batch(args) -> int:
    configs = [_resolve(src, args.set) for src in args.configs]
    root = Path(args.out) if args.out else output_root()
    outs, seen = [], {}
    for cfg in configs:
        # repeated names get a numeric suffix so runs never share a directory
        k = seen.get(cfg.name, 0)
        seen[cfg.name] = k + 1
        outs.append(root / (cfg.name if k == 0 else f"{cfg.name}-{k}"))
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        codes = list(pool.map(_run_one, configs, outs))
    return max(codes)


def cmd_presets(args) -> int:
    for name, cfg in PRESETS.items():
        print(f"{name:<18s} problem={cfg.problem} n={cfg.n}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ibpg", description="Inertial Bregman proximal gradient experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and timings")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="preset name or path to a TOML config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run", help="solve one configured instance and write its artifacts")
    with_config(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="run the numerical oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=200, help="random D-prox cases per regularizer")
    p.add_argument("--inject-fault", choices=["gradient"], help="break a component to test the detectors")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("escape", help="saddle-escape study on a smooth toy")
    with_config(p)
    p.set_defaults(func=cmd_escape)

    p = sub.add_parser("predict-rate", help="local-model rate prediction for a finished run")
    p.add_argument("run_dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict_rate)

    p = sub.add_parser("batch", help="run several configs in parallel threads")
    p.add_argument("configs", nargs="+", help="preset names or TOML paths")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override applied to every run")
    p.add_argument("--out", help="root directory; each run gets its own subdirectory")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("presets", help="list the built-in configurations")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
