"""Experiment configuration: defaults, file loading and validation.

A config file is YAML (JSON is accepted as a subset).  Every field has a
default describing ten synthetic households with 2 kWh batteries, half-hour
steps and a one-day horizon, so an empty file is a valid experiment.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .admm import AdmmConfig
from .dataset import NetConsumptionSeries, SynthProfile, load_csv, synth_scenario
from .objectives import TubeSpec
from .prosumer import ProsumerParams, TimeGrid


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` holds one ``field: message`` entry per issue."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _default_tube() -> list[list[float]]:
    return [[0, 0.2, 0.4], [72, 0.6, 0.8]]


@dataclass
class ExperimentConfig:
    # data source: a CSV path, or synthetic households generated from ``seed``
    data: str | None = None
    households: int = 10
    days: int = 4
    synth: dict = field(default_factory=dict)
    seed: int = 0
    # batteries: one shared parameter set, or a list with one entry per household
    prosumer: dict = field(default_factory=dict)
    prosumers: list | None = None
    x0: float | list = 0.5
    T: float = 0.5
    N: int = 48
    # tube segments ``[start, lower, upper]`` in absolute steps
    tube: list = field(default_factory=_default_tube)
    # a list of weights runs one closed loop (or diagnosis) per weight
    kappa: float | list = 0.5
    kappa_grid: Any = "0:1:0.05"
    tradeoff: list = field(default_factory=list)
    # a list of penalties is only meaningful for admm-diagnose
    rho: float | list = 0.3
    max_iters: int = 500
    primal_tol: float | None = None
    dual_tol: float | None = None
    # closed loop
    steps: int = 144
    k0: int = 0
    # frontier horizon start (absolute step)
    horizon_k: int = 48
    # sensitivity study
    axis: str = "tube_width"
    values: list = field(default_factory=lambda: [0.2, 2.0])
    # also write per-iteration ADMM traces
    trace: bool = False

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # derived objects ---------------------------------------------------

    def admm(self) -> AdmmConfig:
        return AdmmConfig(
            rho=_first(self.rho),
            max_iters=self.max_iters,
            primal_tol=self.primal_tol,
            dual_tol=self.dual_tol,
            kappa=_first(self.kappa),
        )

    def params(self) -> tuple[ProsumerParams, ...]:
        if self.prosumers is not None:
            return tuple(ProsumerParams(**p) for p in self.prosumers)
        return (ProsumerParams(**self.prosumer),) * self.n_households()

    def n_households(self) -> int:
        if self.prosumers is not None:
            return len(self.prosumers)
        return self.households

    def series(self) -> NetConsumptionSeries:
        if self.data is not None:
            return load_csv(self.data, step_hours=self.T)
        length = int(round(self.days * 24 / self.T))
        return synth_scenario(self.seed, self.households, length, SynthProfile(**self.synth), T=self.T)

    def tube_spec(self, length: int) -> TubeSpec:
        return TubeSpec.from_segments(self.tube, length)

    def kappas(self) -> np.ndarray:
        return parse_kappa_grid(self.kappa_grid)


def _first(x):
    return x[0] if isinstance(x, list) else x


def parse_kappa_grid(grid) -> np.ndarray:
    """``"start:stop:step"``, a comma list, or a sequence of numbers."""
    if isinstance(grid, str):
        if ":" in grid:
            parts = grid.split(":")
            if len(parts) != 3:
                raise ValueError(f"kappa grid '{grid}' must be start:stop:step")
            start, stop, step = (float(p) for p in parts)
            if step <= 0:
                raise ValueError("kappa grid step must be positive")
            n = int(round((stop - start) / step))
            if not np.isclose(start + n * step, stop, rtol=0, atol=1e-9):
                raise ValueError(f"step {step} does not divide [{start}, {stop}]")
            return np.round(start + np.arange(n + 1) * step, 12)
        grid = [s for s in grid.split(",") if s.strip()]
    return np.array([float(v) for v in grid])


_FIELDS = set(ExperimentConfig.__dataclass_fields__)


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _FIELDS)
    if unknown:
        raise ConfigError([f"{k}: unknown field" for k in unknown])
    cfg = ExperimentConfig(**raw)
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    """Read a config file, or the ``config`` block of a run manifest."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"file: not valid YAML/JSON ({exc})"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["file: top level must be a mapping"])
    if "manifest_version" in raw:
        raw = raw.get("config", {})
    return from_dict(raw)


def validate(cfg: ExperimentConfig) -> None:
    """Check every field; collects all problems before raising."""
    problems: list[str] = []

    def check(name, ok, msg):
        if not ok:
            problems.append(f"{name}: {msg}")

    def attempt(name, fn):
        try:
            return fn()
        except (TypeError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
            return None

    check("households", isinstance(cfg.households, int) and cfg.households >= 1, "must be a positive integer")
    check("days", isinstance(cfg.days, (int, float)) and cfg.days > 0, "must be positive")
    check("seed", isinstance(cfg.seed, int) and cfg.seed >= 0, "must be a nonnegative integer")
    attempt("synth", lambda: SynthProfile(**cfg.synth))
    if cfg.data is not None:
        check("data", Path(cfg.data).is_file(), f"file '{cfg.data}' not found")
    attempt("T/N", lambda: TimeGrid(cfg.T, cfg.N))
    check("N", isinstance(cfg.N, int) and cfg.N >= 2, "prediction horizon needs at least two steps")
    params = attempt("prosumer" if cfg.prosumers is None else "prosumers", cfg.params)
    x0 = np.atleast_1d(np.asarray(cfg.x0, dtype=float)) if not isinstance(cfg.x0, str) else None
    if x0 is None or not np.all(np.isfinite(x0)):
        problems.append("x0: must be a number or a list of numbers")
    elif params is not None:
        if x0.size not in (1, len(params)):
            problems.append(f"x0: expected 1 or {len(params)} values, got {x0.size}")
        else:
            caps = np.array([p.capacity for p in params])
            if np.any(x0 < 0) or np.any(x0 > caps):
                problems.append("x0: initial charge must lie in [0, capacity]")
    attempt("tube", lambda: TubeSpec.from_segments(cfg.tube, 1 + max(int(s[0]) for s in cfg.tube)))
    kappas = cfg.kappa if isinstance(cfg.kappa, list) else [cfg.kappa]
    check("kappa", bool(kappas) and all(isinstance(k, (int, float)) and 0.0 <= k <= 1.0 for k in kappas), "must lie in [0, 1]")
    rhos = cfg.rho if isinstance(cfg.rho, list) else [cfg.rho]
    check("rho", bool(rhos) and all(isinstance(r, (int, float)) and r > 0 for r in rhos), "must be positive")
    grid = attempt("kappa_grid", cfg.kappas)
    if grid is not None:
        check("kappa_grid", grid.size > 0 and np.all((grid >= 0) & (grid <= 1)), "values must lie in [0, 1]")
        check("kappa_grid", np.all(np.diff(grid) > 0), "values must be strictly increasing")
    for k0 in cfg.tradeoff:
        check("tradeoff", isinstance(k0, (int, float)) and 0.0 <= k0 <= 1.0, f"{k0} must lie in [0, 1]")
    check("max_iters", isinstance(cfg.max_iters, int) and cfg.max_iters >= 1, "must be a positive integer")
    if not problems:
        attempt("admm", cfg.admm)
    check("trace", isinstance(cfg.trace, bool), "must be true or false")
    check("steps", isinstance(cfg.steps, int) and cfg.steps >= 1, "must be a positive integer")
    check("k0", isinstance(cfg.k0, int) and cfg.k0 >= 0, "must be a nonnegative integer")
    check("horizon_k", isinstance(cfg.horizon_k, int) and cfg.horizon_k >= 0, "must be a nonnegative integer")
    check("axis", cfg.axis in ("tube_width", "initial_soc"), "must be 'tube_width' or 'initial_soc'")
    vals = cfg.values if isinstance(cfg.values, list) else []
    check("values", bool(vals) and all(isinstance(v, (int, float)) for v in vals), "must be a nonempty list of numbers")
    if cfg.axis == "tube_width" and vals:
        check("values", all(v > 0 for v in vals), "tube widths must be positive")
    if cfg.axis == "initial_soc" and vals and params is not None:
        cap = min(p.capacity for p in params)
        check("values", all(0 <= v <= cap for v in vals), f"initial charges must lie in [0, {cap}]")
    if problems:
        raise ConfigError(problems)
