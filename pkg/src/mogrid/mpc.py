"""Receding-horizon closed loop.

At every step ``k`` the forecast window and the reference are rebuilt, one
efficient point of the two-objective problem is computed with the
distributed solver, the first control of every household is applied and the
batteries advance by one step.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .admm import AdmmConfig, WarmStart
from .dataset import NetConsumptionSeries
from .horizon import HorizonProblem
from .objectives import TubeSpec, g_hat, h_hat
from .pareto import EfficientSolution, solve_point
from .prosumer import TOL_FEAS, Controls, ProsumerParams, TimeGrid, check_feasible, demand_output, max_violation, simulate_soc

__all__ = ["ClosedLoopTrace", "HorizonProblem", "OpenLoopTrajectory", "open_loop_run", "run_mpc", "write_trace_csv"]

log = logging.getLogger(__name__)

Forecast = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class ClosedLoopTrace:
    """Per-step record of a closed-loop run.

    Arrays indexed by step have ``steps`` rows; ``soc`` has one extra row for
    the state after the last step.  ``stage_g`` and ``stage_h`` are the
    realized squared reference deviation and squared tube violation of the
    aggregate at each step; ``horizon_g`` and ``horizon_h`` are the objective
    values of the efficient point computed at that step.
    """

    k: np.ndarray
    kappa: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray
    soc: np.ndarray
    w: np.ndarray
    z: np.ndarray
    z_bar: np.ndarray
    zeta_bar: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    stage_g: np.ndarray
    stage_h: np.ndarray
    horizon_g: np.ndarray
    horizon_h: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    max_violation: float
    events: list[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.k)

    @property
    def J1(self) -> float:
        """Mean squared deviation of the realized aggregate from the reference."""
        return float(np.mean(self.stage_g))

    @property
    def J2(self) -> float:
        """Accumulated squared tube violation of the realized aggregate."""
        return float(np.sum(self.stage_h))


def _check_inputs(series, tube, steps, k0, N):
    if steps < 1:
        raise ValueError("need at least one step")
    if N < 2:
        raise ValueError("prediction horizon must have at least two steps")
    last = k0 + steps - 1 + N
    if last > len(series):
        raise ValueError(
            f"scenario exhausted: {steps} steps from k={k0} with N={N} need {last} samples, have {len(series)}"
        )
    if len(tube) < last:
        raise ValueError(f"tube covers {len(tube)} steps, need {last}")


def run_mpc(
    series: NetConsumptionSeries,
    params: ProsumerParams | Sequence[ProsumerParams],
    tube: TubeSpec,
    x0,
    steps: int,
    cfg: AdmmConfig,
    *,
    N: int = 48,
    k0: int = 0,
    kappa_schedule: Callable[[int], float] | None = None,
    forecast: Forecast | None = None,
    warm_start: bool = True,
    on_step: Callable[[int, EfficientSolution], None] | None = None,
) -> ClosedLoopTrace:
    """Run ``steps`` closed-loop steps starting at absolute index ``k0``.

    ``tube`` is indexed by absolute step.  ``kappa_schedule(k)`` overrides
    ``cfg.kappa`` per step.  ``forecast(k, window)`` may replace the exact
    forecast window handed to the optimizer; the plant always evolves with the
    measured series.  A failed solve is logged as an event and the batteries
    idle for that step.  ``on_step(k, solution)`` sees every successful solve.
    """
    _check_inputs(series, tube, steps, k0, N)
    n_pro = series.n_prosumers
    if isinstance(params, ProsumerParams):
        params = (params,) * n_pro
    params = tuple(params)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n_pro,)).copy()

    rows = {name: [] for name in ("kappa", "um", "up", "w", "z", "zeta", "lo", "hi", "hg", "hh", "its", "conv")}
    socs = [x.copy()]
    events: list[str] = []
    worst = 0.0
    init: WarmStart | None = None
    for k in range(k0, k0 + steps):
        kappa = cfg.kappa if kappa_schedule is None else float(kappa_schedule(k))
        hp = HorizonProblem.from_series(series, params, tube, x, k, N)
        if forecast is not None:
            hp = HorizonProblem(forecast(k, hp.w.copy()), hp.x0, hp.params, hp.zeta_bar, hp.tube, hp.grid)
        step_cfg = replace(cfg, kappa=kappa, keep_history=cfg.keep_history and on_step is not None)
        try:
            sol: EfficientSolution | None = solve_point(hp, step_cfg, init=init)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            events.append(f"k={k}: solver failure ({exc}); batteries idle")
            log.warning(events[-1])
            sol = None
        if sol is None:
            um, up = np.zeros(n_pro), np.zeros(n_pro)
            its, conv, hg, hh = 0, False, np.nan, np.nan
            init = None
        else:
            if on_step is not None:
                on_step(k, sol)
            um = np.array([u.u_minus[0] for u in sol.controls])
            up = np.array([u.u_plus[0] for u in sol.controls])
            its, conv = sol.point.admm_iterations, sol.point.converged
            hg, hh = sol.point.g_val, sol.point.h_val
            if not conv:
                events.append(f"k={k}: ADMM stopped before tolerance after {its} iterations")
                log.info(events[-1])
            init = sol.result.warm_start().shifted() if warm_start else None

        w_now = series.w[:, k]
        x_next = np.empty(n_pro)
        for i, p in enumerate(params):
            step = Controls(um[i : i + 1], up[i : i + 1])
            grid = TimeGrid(series.T, 1, k)
            report = check_feasible(x[i], step, p, grid, tol=TOL_FEAS)
            if not report:
                events.append(f"k={k}: prosumer {i} violates {report.constraint} by {report.violation:.3g}")
            traj = simulate_soc(x[i], step, p, grid)
            worst = max(worst, max_violation(x[i], step, p, grid))
            # roundoff below the feasibility tolerance must not leak into the next window
            x_next[i] = min(max(traj[1], 0.0), p.capacity)
        z_now = np.array([demand_output(w_now[i : i + 1], Controls(um[i : i + 1], up[i : i + 1]), params[i])[0] for i in range(n_pro)])

        for key, val in (
            ("kappa", kappa), ("um", um), ("up", up), ("w", w_now.copy()), ("z", z_now),
            ("zeta", hp.zeta_bar[0]), ("lo", hp.tube.lower[0]), ("hi", hp.tube.upper[0]),
            ("hg", hg), ("hh", hh), ("its", its), ("conv", conv),
        ):
            rows[key].append(val)
        x = x_next
        socs.append(x.copy())

    z = np.array(rows["z"])
    z_bar = z.mean(axis=1)
    zeta = np.array(rows["zeta"])
    lo, hi = np.array(rows["lo"]), np.array(rows["hi"])
    return ClosedLoopTrace(
        k=np.arange(k0, k0 + steps),
        kappa=np.array(rows["kappa"]),
        u_minus=np.array(rows["um"]),
        u_plus=np.array(rows["up"]),
        soc=np.array(socs),
        w=np.array(rows["w"]),
        z=z,
        z_bar=z_bar,
        zeta_bar=zeta,
        lower=lo,
        upper=hi,
        stage_g=(z_bar - zeta) ** 2,
        stage_h=np.maximum(lo - z_bar, 0.0) ** 2 + np.maximum(z_bar - hi, 0.0) ** 2,
        horizon_g=np.array(rows["hg"], dtype=float),
        horizon_h=np.array(rows["hh"], dtype=float),
        iterations=np.array(rows["its"], dtype=int),
        converged=np.array(rows["conv"], dtype=bool),
        max_violation=worst,
        events=events,
    )


@dataclass
class OpenLoopTrajectory:
    """The full optimal plan of one horizon applied without re-planning."""

    controls: list[Controls]
    soc: np.ndarray
    z: np.ndarray
    z_bar: np.ndarray
    g_val: float
    h_val: float
    g_hat_val: float
    h_hat_val: float
    converged: bool


def open_loop_run(horizon: HorizonProblem, cfg: AdmmConfig) -> OpenLoopTrajectory:
    """Apply the entire optimal control sequence of ``horizon``."""
    sol = solve_point(horizon, cfg)
    z = np.vstack([demand_output(horizon.w[i], u, horizon.params[i]) for i, u in enumerate(sol.controls)])
    soc = np.vstack([simulate_soc(horizon.x0[i], u, horizon.params[i], horizon.grid) for i, u in enumerate(sol.controls)])
    z_bar = z.mean(axis=0)
    return OpenLoopTrajectory(
        controls=sol.controls,
        soc=soc,
        z=z,
        z_bar=z_bar,
        g_val=sol.point.g_val,
        h_val=sol.point.h_val,
        g_hat_val=g_hat(z_bar, horizon.zeta_bar),
        h_hat_val=h_hat(z_bar, horizon.tube),
        converged=sol.point.converged,
    )


TRACE_COLUMNS = [
    "k", "prosumer", "kappa", "u_minus", "u_plus", "soc", "soc_next", "w", "z",
    "z_bar", "zeta_bar", "lower", "upper", "stage_g", "stage_h", "horizon_g", "horizon_h",
    "iterations", "converged",
]


def _fmt(x) -> str:
    return f"{float(x):.9g}"


def write_trace_csv(trace: ClosedLoopTrace, path) -> None:
    """One row per (step, prosumer) followed by one ``aggregate`` row per step."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.DictWriter(fh, TRACE_COLUMNS, lineterminator="\n", restval="")
        out.writeheader()
        for t, k in enumerate(trace.k):
            for i in range(trace.z.shape[1]):
                out.writerow({
                    "k": int(k), "prosumer": i, "kappa": _fmt(trace.kappa[t]),
                    "u_minus": _fmt(trace.u_minus[t, i]), "u_plus": _fmt(trace.u_plus[t, i]),
                    "soc": _fmt(trace.soc[t, i]), "soc_next": _fmt(trace.soc[t + 1, i]),
                    "w": _fmt(trace.w[t, i]), "z": _fmt(trace.z[t, i]),
                })
            out.writerow({
                "k": int(k), "prosumer": "aggregate", "kappa": _fmt(trace.kappa[t]),
                "w": _fmt(trace.w[t].mean()), "z": _fmt(trace.z_bar[t]),
                "z_bar": _fmt(trace.z_bar[t]), "zeta_bar": _fmt(trace.zeta_bar[t]),
                "lower": _fmt(trace.lower[t]), "upper": _fmt(trace.upper[t]),
                "stage_g": _fmt(trace.stage_g[t]), "stage_h": _fmt(trace.stage_h[t]),
                "horizon_g": _fmt(trace.horizon_g[t]), "horizon_h": _fmt(trace.horizon_h[t]),
                "iterations": int(trace.iterations[t]), "converged": int(trace.converged[t]),
            })
