"""Flat experiment configuration stored as TOML.

Every field of :class:`ExperimentConfig` is a top-level key; unknown keys and
ill-typed values raise :class:`ConfigError`. Optional fields that are unset
are simply omitted from the file.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import tomli
import tomli_w

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "save_config", "PRESETS", "preset"]

PROBLEM_KINDS = ("l1", "group", "tv-analysis", "haar-synthesis", "smooth-toy")
RECIPES = ("l1", "group", "tv")
TOYS = ("double-well", "indefinite-quadratic", "convex-quadratic")
FIXED_STEP = 0.99 / (3.0 + 1e-4)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    problem: str = "l1"
    n: int = 32
    s: int = 4
    block_size: int = 8
    m: int | None = None
    recipe: str | None = None
    row_scale: float = 1.0
    normalize_rows: bool = False
    lam: float = 1e-5
    j_max: int = 3
    # inertia schedule
    schedule: str = "bpg"
    a: float = 1.0
    alpha: float = 3.0
    kappa: float = 2.0
    a_low: float | None = None
    a_high: float = 1.0
    switch_at: int | None = None
    # step: at most one of L / gamma; neither means the estimated constant
    L: float | None = None
    gamma: float | None = None
    smad_check_samples: int = 100
    # seeds
    seed_matrix: int = 0
    seed_signal: int = 0
    seed_init: int = 0
    init_scale: float = 1.0
    init_center: str = "zero"
    max_iters: int = 50_000
    tol: float = 1e-10
    support_eps: float | None = None
    # analyses
    identify: bool = True
    predict_rate: bool = True
    descent_report: bool = True
    rate_tail_fraction: float = 0.5
    # escape study (smooth-toy)
    toy: str = "double-well"
    n_trials: int = 100
    escape_a: float = 0.9
    escape_budget: int = 100_000
    escape_radius: float = 1e-3
    escape_init_scale: float = 1.0
    escape_bound: float = 1e6  # trials whose iterate norm passes this count as diverged
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        err = []
        if self.problem not in PROBLEM_KINDS:
            err.append(f"problem must be one of {PROBLEM_KINDS}")
        if self.n < 1:
            err.append("n must be >= 1")
        if self.lam < 0:
            err.append("lam must be >= 0")
        if self.problem != "smooth-toy" and (self.m is None) == (self.recipe is None):
            err.append("exactly one of m / recipe must be set")
        if self.m is not None and self.m < 1:
            err.append("m must be >= 1")
        if self.recipe is not None and self.recipe not in RECIPES:
            err.append(f"recipe must be one of {RECIPES}")
        if self.schedule not in ("bpg", "constant", "polynomial"):
            err.append("schedule must be bpg, constant or polynomial")
        if not 0.0 < self.a <= 1.0:
            err.append("a must lie in (0, 1]")
        if not 1.0 < self.kappa <= 2.0:
            err.append("kappa must lie in (1, 2]")
        if self.L is not None and self.gamma is not None:
            err.append("set at most one of L and gamma")
        for key in ("L", "gamma"):
            v = getattr(self, key)
            if v is not None and not v > 0:
                err.append(f"{key} must be positive")
        if self.init_center not in ("zero", "reference"):
            err.append("init_center must be zero or reference")
        if self.toy not in TOYS:
            err.append(f"toy must be one of {TOYS}")
        if not 0.0 < self.escape_a <= 1.0:
            err.append("escape_a must lie in (0, 1]")
        if self.max_iters < 1 or self.tol < 0:
            err.append("max_iters must be >= 1 and tol >= 0")
        if self.n_trials < 1 or self.workers < 1:
            err.append("n_trials and workers must be >= 1")
        if not 0.0 < self.rate_tail_fraction <= 1.0:
            err.append("rate_tail_fraction must lie in (0, 1]")
        if err:
            raise ConfigError("; ".join(err))

    @property
    def effective_row_scale(self) -> float:
        return self.row_scale / (math.sqrt(self.n) if self.normalize_rows else 1.0)

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        hints = typing.get_type_hints(cls)
        clean = {}
        for key, value in data.items():
            clean[key] = _coerce(key, value, hints[key])
        return cls(**clean)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})


def _coerce(key, value, hint):
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    base = args[0] if args else hint
    if base is bool:
        ok = isinstance(value, bool)
    elif base is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, base)
    if not ok:
        raise ConfigError(f"{key} must be of type {base.__name__}")
    return value


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(config.to_dict(), fh)


def _full_scale(**kw) -> ExperimentConfig:
    # n = 128 instances; rows scaled by 0.5 so the fixed step is stable, warm start
    base = dict(n=128, lam=1e-5, gamma=FIXED_STEP, row_scale=0.5, init_center="reference",
                init_scale=1e-3, max_iters=50_000, tol=1e-12)
    base.update(kw)
    return ExperimentConfig(**base)


PRESETS: dict[str, ExperimentConfig] = {
    "full-l1": _full_scale(name="full-l1", problem="l1", s=12, recipe="l1"),
    "full-group": _full_scale(name="full-group", problem="group", s=2, block_size=8, recipe="group"),
    "full-tv": _full_scale(name="full-tv", problem="tv-analysis", s=12, recipe="tv"),
    "full-haar": _full_scale(name="full-haar", problem="haar-synthesis", s=12, recipe="tv", j_max=3,
                         init_center="zero", init_scale=1e-3, predict_rate=False, max_iters=5000, tol=1e-9),
    "desk-l1": ExperimentConfig(name="desk-l1", problem="l1", n=32, s=4, m=32, row_scale=0.5,
                                gamma=FIXED_STEP, init_center="reference", init_scale=1e-3, tol=1e-12),
    "desk-group": ExperimentConfig(name="desk-group", problem="group", n=32, s=1, block_size=4, m=32,
                                   row_scale=0.5, gamma=FIXED_STEP, init_center="reference",
                                   init_scale=1e-3, tol=1e-12),
    "desk-tv": ExperimentConfig(name="desk-tv", problem="tv-analysis", n=32, s=3, m=32,
                                row_scale=0.5, gamma=FIXED_STEP, init_center="reference",
                                init_scale=1e-3, tol=1e-12),
    "desk-lyapunov": ExperimentConfig(name="desk-lyapunov", problem="l1", n=32, s=4, m=32,
                                      row_scale=0.5, gamma=FIXED_STEP, init_scale=1.0, max_iters=5000),
    "toy-double-well": ExperimentConfig(name="toy-double-well", problem="smooth-toy", toy="double-well",
                                        n=1, lam=0.0),
    "toy-saddle": ExperimentConfig(name="toy-saddle", problem="smooth-toy", toy="indefinite-quadratic",
                                   n=2, lam=0.0, escape_bound=10.0),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return dataclasses.replace(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
