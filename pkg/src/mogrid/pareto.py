"""Pareto frontier of the peak-shaving / tube-flexibility trade-off.

Each weight ``kappa`` yields one weakly efficient point.  At the two ends the
weighted sum ignores one objective entirely, so those points are polished by
a second solve: at ``kappa = 0`` the tracking error is minimized while
keeping the optimal slack, at ``kappa = 1`` the slack is shrunk to the
smallest one compatible with the optimal aggregate.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .admm import AdmmConfig, AdmmResult, WarmStart, coordinate, make_agents, run_admm, worker_count
from .horizon import HorizonProblem
from .objectives import SlackVector, TubeSpec, g_of, h_of, minimal_slack, scalarized

TIE_TOL = 1e-9


@dataclass(frozen=True)
class ParetoPoint:
    kappa: float
    g_val: float
    h_val: float
    refined: bool
    admm_iterations: int
    converged: bool = True
    a_bar: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def f_tilde(self) -> float:
        return scalarized(self.kappa, self.g_val, self.h_val)

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.g_val, self.h_val)


@dataclass(frozen=True)
class MonotonicityReport:
    """Adjacent-pair check of ``g`` non-increasing and ``h`` non-decreasing in kappa.

    ``violations`` lists ``(index, objective, excess)`` for pairs
    ``(index, index + 1)`` that break the order by more than ``tol``.
    """

    tol: float
    violations: tuple[tuple[int, str, float], ...]
    g_strict: bool
    h_strict: bool

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class FrontierSweep:
    points: tuple[ParetoPoint, ...]
    monotonicity: MonotonicityReport

    @property
    def kappas(self) -> np.ndarray:
        return np.array([p.kappa for p in self.points])

    @property
    def g(self) -> np.ndarray:
        return np.array([p.g_val for p in self.points])

    @property
    def h(self) -> np.ndarray:
        return np.array([p.h_val for p in self.points])

    @property
    def unconverged(self) -> list[float]:
        return [p.kappa for p in self.points if not p.converged]

    @property
    def converged(self) -> bool:
        return not self.unconverged

    def point(self, kappa: float) -> ParetoPoint:
        for p in self.points:
            if abs(p.kappa - kappa) <= 1e-12:
                return p
        raise KeyError(f"kappa={kappa} is not part of the sweep")


def check_monotonicity(points: Sequence[ParetoPoint], tol: float) -> MonotonicityReport:
    viol = []
    for i in range(len(points) - 1):
        a, b = points[i], points[i + 1]
        if b.g_val > a.g_val + tol:
            viol.append((i, "g", b.g_val - a.g_val))
        if b.h_val < a.h_val - tol:
            viol.append((i, "h", a.h_val - b.h_val))
    g_strict = len(points) > 1 and points[-1].g_val < points[0].g_val
    h_strict = len(points) > 1 and points[-1].h_val > points[0].h_val
    return MonotonicityReport(tol, tuple(viol), g_strict, h_strict)


def _validate_grid(kappa_grid) -> np.ndarray:
    grid = np.asarray(kappa_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("kappa grid is empty")
    if np.any(grid < 0.0) or np.any(grid > 1.0):
        raise ValueError("kappa values must lie in [0, 1]")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("kappa grid must be strictly increasing")
    return grid


@dataclass
class EfficientSolution:
    """An efficient point together with the controls that realize it."""

    point: ParetoPoint
    result: AdmmResult
    z: np.ndarray
    controls: list
    soc: np.ndarray

    @property
    def z_bar(self) -> np.ndarray:
        return self.z.mean(axis=0)


def solve_point(
    horizon: HorizonProblem,
    cfg: AdmmConfig,
    *,
    init: WarmStart | None = None,
    agents=None,
) -> EfficientSolution:
    """Weighted-sum solve at ``cfg.kappa``, refined when ``kappa`` is 0 or 1.

    The returned controls realize the refined point: at ``kappa = 0`` they come
    from the auxiliary tracking solve.
    """
    if agents is None:
        agents = make_agents(horizon, cfg)
    kappa = cfg.kappa
    res = run_admm(horizon, cfg, init, agents=agents)
    iters, converged, z = res.iterations, res.converged, res.z
    if kappa == 0.0:
        # slack of the realizable aggregate, so the restricted set is never empty
        s_star = minimal_slack(res.z_bar, horizon.tube)
        aux = refine_kappa0(horizon, s_star, cfg, init=res.warm_start(), agents=agents)
        iters += aux.iterations
        converged = converged and aux.converged
        z = aux.z
        pt = ParetoPoint(0.0, g_of(aux.a_bar, horizon.zeta_bar), h_of(s_star), True, iters, converged, aux.a_bar)
    elif kappa == 1.0:
        s_star = refine_kappa1(res.a_bar, horizon.tube)
        pt = ParetoPoint(1.0, res.g_val, h_of(s_star), True, iters, converged, res.a_bar)
    else:
        pt = ParetoPoint(float(kappa), res.g_val, res.h_val, False, iters, converged, res.a_bar)
    controls = [a.solution.u for a in agents]
    soc = np.vstack([a.solution.soc for a in agents])
    return EfficientSolution(pt, res, z, controls, soc)


def sweep(
    horizon: HorizonProblem,
    kappa_grid: Sequence[float],
    cfg: AdmmConfig,
    *,
    warm_start: bool = True,
    on_solution: Callable[[EfficientSolution], None] | None = None,
) -> FrontierSweep:
    """Solve the weighted-sum problem along ``kappa_grid``.

    With ``warm_start`` each point starts from the previous one (sequential);
    otherwise points are independent cold starts and may run concurrently.
    Non-converged points are flagged, not raised.  ``on_solution`` receives
    every solve in grid order; iteration histories are kept only when it is
    given and ``cfg.keep_history`` is set.
    """
    grid = _validate_grid(kappa_grid)
    cfg = replace(cfg, keep_history=cfg.keep_history and on_solution is not None)
    points: list[ParetoPoint] = []
    if warm_start:
        agents = make_agents(horizon, cfg)
        init: WarmStart | None = None
        for kappa in grid:
            sol = solve_point(horizon, cfg.with_kappa(float(kappa)), init=init, agents=agents)
            if on_solution is not None:
                on_solution(sol)
            points.append(sol.point)
            init = sol.result.warm_start()
    else:
        inner = replace(cfg, workers=1)

        def solve(kappa):
            return solve_point(horizon, inner.with_kappa(float(kappa)))

        workers = min(worker_count(cfg), len(grid))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                sols = list(pool.map(solve, grid))
        else:
            sols = [solve(k) for k in grid]
        for sol in sols:
            if on_solution is not None:
                on_solution(sol)
            points.append(sol.point)
    primal_tol = cfg.tolerances(horizon.N)[0]
    return FrontierSweep(tuple(points), check_monotonicity(points, 10 * primal_tol))


def refine_kappa0(
    horizon: HorizonProblem,
    s_star: SlackVector,
    cfg: AdmmConfig,
    *,
    init: WarmStart | None = None,
    agents=None,
    inflate: float = 0.0,
) -> AdmmResult:
    """Best tracking among realizable aggregates that need no more slack than ``s_star``.

    Runs the ADMM loop with the coordinator step replaced by the restricted
    problem ``min g(a) + penalty`` over ``lower - s_lo <= a <= upper + s_up``.
    ``s_star`` should be the minimal slack of a realizable aggregate (the
    ``z_bar`` of a ``kappa = 0`` run) so the restricted set is nonempty; the
    optional ``inflate`` widens it further.  The refined aggregate is
    ``result.a_bar``.
    """
    N = horizon.N
    s_lo, s_up = (np.asarray(x, dtype=float) for x in s_star)
    if s_lo.shape != (N,) or s_up.shape != (N,):
        raise ValueError("slack must cover the horizon")
    if np.any(s_lo < 0) or np.any(s_up < 0):
        raise ValueError("slack must be nonnegative")
    lo = horizon.tube.lower - s_lo - inflate
    hi = horizon.tube.upper + s_up + inflate
    zeta, rho = horizon.zeta_bar, cfg.rho
    p = 0.5 * rho * horizon.n_prosumers
    fixed = SlackVector(s_lo.copy(), s_up.copy())

    def ce_update(z_bar, lambda_bar):
        q = z_bar + lambda_bar / rho
        return np.clip((zeta + p * q) / (1.0 + p), lo, hi), fixed

    if agents is None:
        agents = make_agents(horizon, cfg)
    return coordinate(agents, ce_update, zeta, horizon.tube, cfg.with_kappa(1.0), init)


def refine_kappa1(z_bar_star, tube: TubeSpec) -> SlackVector:
    """Smallest slack making ``z_bar_star`` tube-feasible."""
    return minimal_slack(z_bar_star, tube)


@dataclass(frozen=True)
class TradeoffBound:
    kappa0: float
    table: tuple[tuple[float, float], ...]

    @property
    def L_star(self) -> float:
        return max(L for _, L in self.table)

    def as_dict(self) -> dict[float, float]:
        return dict(self.table)


def tradeoff_ratio(g0: float, h0: float, g1: float, h1: float, tol: float = TIE_TOL) -> float:
    """Objective trade-off between two frontier points (gain in one per loss in the other)."""
    if g0 - g1 > tol and h1 - h0 > tol:
        return (g0 - g1) / (h1 - h0)
    if g1 - g0 > tol and h0 - h1 > tol:
        return (h0 - h1) / (g1 - g0)
    return 0.0


def tradeoff_bound(sweep: FrontierSweep, kappa0: float) -> TradeoffBound:
    """Largest trade-off ratio from the point at ``kappa0`` to every other sweep point.

    A finite maximum certifies that ``kappa0`` is properly efficient with
    respect to the sampled frontier.
    """
    p0 = sweep.point(kappa0)
    table = tuple(
        (p.kappa, tradeoff_ratio(p0.g_val, p0.h_val, p.g_val, p.h_val)) for p in sweep.points
    )
    return TradeoffBound(p0.kappa, table)


@dataclass(frozen=True)
class FrontierGraph:
    """Piecewise-linear map from tracking error ``g`` to slack cost ``h``."""

    g_nodes: np.ndarray
    h_nodes: np.ndarray

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.g_nodes[0]), float(self.g_nodes[-1])

    def __call__(self, g):
        g_arr = np.asarray(g, dtype=float)
        lo, hi = self.domain
        if np.any(g_arr < lo) or np.any(g_arr > hi):
            raise ValueError(f"g outside the frontier domain [{lo}, {hi}]")
        return np.interp(g_arr, self.g_nodes, self.h_nodes)


def frontier_graph(sweep: FrontierSweep, tol: float | None = None) -> FrontierGraph:
    """Interpolant through the sweep points ordered by ``g``.

    Points whose ``g`` agree within ``tol`` are merged (keeping the smaller
    ``h``).  Raises ``ValueError`` when the sweep is not monotone, which points
    at unconverged solves.
    """
    tol = sweep.monotonicity.tol if tol is None else tol
    if not sweep.monotonicity.ok:
        raise ValueError(f"sweep is not monotone: {list(sweep.monotonicity.violations)}")
    order = np.argsort(sweep.g, kind="stable")
    g, h = sweep.g[order], sweep.h[order]
    g_nodes, h_nodes = [g[0]], [h[0]]
    for gi, hi in zip(g[1:], h[1:]):
        if gi - g_nodes[-1] <= tol:
            h_nodes[-1] = min(h_nodes[-1], hi)
        else:
            g_nodes.append(gi)
            h_nodes.append(hi)
    h_nodes = np.array(h_nodes)
    if np.any(np.diff(h_nodes) > tol):
        raise ValueError("h increases with g; the sweep contains dominated points")
    return FrontierGraph(np.array(g_nodes), h_nodes)


FRONTIER_HEADER = ["kappa", "g", "h", "f_tilde", "refined", "iterations", "converged"]


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_frontier(sweep: FrontierSweep, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_HEADER)
        for p in sweep.points:
            w.writerow(
                [_fmt(p.kappa), _fmt(p.g_val), _fmt(p.h_val), _fmt(p.f_tilde), int(p.refined), p.admm_iterations, int(p.converged)]
            )


def write_tradeoff(bound: TradeoffBound, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kappa1", "L"])
        for k1, L in bound.table:
            w.writerow([_fmt(k1), _fmt(L)])
        w.writerow(["L_star", _fmt(bound.L_star)])


def kappa_grid(step: float = 0.05) -> np.ndarray:
    """Uniform grid ``0, step, ..., 1``."""
    n = int(round(1.0 / step))
    if not math.isclose(n * step, 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"step {step} does not divide [0, 1]")
    return np.round(np.arange(n + 1) * step, 12)
