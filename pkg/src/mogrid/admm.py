"""Distributed ADMM for the weighted-sum problem.

Each iteration every prosumer projects ``z_i - Pi`` onto its realizable set
(in parallel), the coordinator averages the responses, solves its own
subproblem for ``(a_bar, s)``, updates the averaged dual ``lambda_bar`` and
broadcasts ``Pi = z_bar - a_bar + lambda_bar / rho``.  The coordinator never
touches battery data: prosumers are opaque agents exposing ``respond(Pi)``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .ce_solver import CeSubproblem, solve_ce
from .horizon import HorizonProblem
from .local_solver import ProsumerAgent
from .objectives import SlackVector, TubeSpec, g_hat, g_of, h_hat, h_of
from .prosumer import Controls

log = logging.getLogger(__name__)

WORKERS_ENV = "MOGRID_WORKERS"


class NonFiniteIterateError(FloatingPointError):
    """An ADMM iterate became NaN or infinite (mis-scaled rho or corrupt data)."""


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM parameters.  Tolerances default to ``1e-6 * sqrt(N)``.

    The default ``rho`` balances the penalty ``rho * I / 2`` against the unit
    curvature of the objectives for a few dozen households; much smaller values
    make the coordinator drift for hundreds of iterations.
    """

    rho: float = 0.3
    max_iters: int = 500
    primal_tol: float | None = None
    dual_tol: float | None = None
    kappa: float = 0.5
    workers: int | None = None
    keep_history: bool = True

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        for name in ("primal_tol", "dual_tol"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")

    def tolerances(self, N: int) -> tuple[float, float]:
        default = 1e-6 * math.sqrt(N)
        return (self.primal_tol or default, self.dual_tol or default)

    def with_kappa(self, kappa: float) -> "AdmmConfig":
        return replace(self, kappa=kappa)


@dataclass
class AdmmState:
    """Iterate ``l`` together with its residuals and objective estimates."""

    iteration: int
    z: np.ndarray
    z_bar: np.ndarray
    a_bar: np.ndarray
    s: SlackVector
    lambda_bar: np.ndarray
    Pi: np.ndarray
    primal_residual: float
    dual_residual: float
    kappa: float
    g: float
    h: float
    g_hat: float
    h_hat: float
    penalty: float
    dual_energy: float

    @property
    def f(self) -> float:
        return self.kappa * self.g + (1 - self.kappa) * self.h

    @property
    def f_hat(self) -> float:
        return self.kappa * self.g_hat + (1 - self.kappa) * self.h_hat


@dataclass
class WarmStart:
    z: np.ndarray
    a_bar: np.ndarray
    lambda_bar: np.ndarray

    def shifted(self) -> "WarmStart":
        """Advance one step: drop the first entry, repeat the last one."""

        def shift(x):
            return np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)

        return WarmStart(shift(self.z), shift(self.a_bar), shift(self.lambda_bar))


@dataclass
class AdmmResult:
    converged: bool
    reason: str
    z: np.ndarray
    z_bar: np.ndarray
    a_bar: np.ndarray
    s: SlackVector
    lambda_bar: np.ndarray
    kappa: float
    rho: float
    g_val: float
    h_val: float
    g_hat_val: float
    h_hat_val: float
    iterations: int
    penalty_term: float
    primal_residual: float
    dual_residual: float
    controls: list[Controls] = field(default_factory=list, repr=False)
    soc: np.ndarray | None = field(default=None, repr=False)
    history: list[AdmmState] = field(default_factory=list, repr=False)

    @property
    def f_val(self) -> float:
        return self.kappa * self.g_val + (1 - self.kappa) * self.h_val

    @property
    def f_hat_val(self) -> float:
        return self.kappa * self.g_hat_val + (1 - self.kappa) * self.h_hat_val

    @property
    def dual_energy(self) -> float:
        """``I / (2 rho) |lambda_bar|^2``; equals the penalty term at a fixed point."""
        n_pro = self.z.shape[0]
        return n_pro / (2 * self.rho) * float(self.lambda_bar @ self.lambda_bar)

    def warm_start(self) -> WarmStart:
        return WarmStart(self.z.copy(), self.a_bar.copy(), self.lambda_bar.copy())


class Agent(Protocol):
    def initial_output(self) -> np.ndarray: ...

    def set_output(self, z) -> None: ...

    def respond(self, broadcast: np.ndarray) -> np.ndarray: ...


CeUpdate = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, SlackVector]"]


def worker_count(cfg: AdmmConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def make_agents(horizon: HorizonProblem, cfg: AdmmConfig) -> list[ProsumerAgent]:
    tol_kkt = min(1e-8, cfg.tolerances(horizon.N)[0] / 100)
    return [
        ProsumerAgent(horizon.w[i], horizon.x0[i], horizon.params[i], horizon.grid, tol_kkt)
        for i in range(horizon.n_prosumers)
    ]


def run_admm(
    horizon: HorizonProblem,
    cfg: AdmmConfig,
    init: WarmStart | None = None,
    *,
    agents: Sequence[ProsumerAgent] | None = None,
) -> AdmmResult:
    """Solve the scalarized problem for ``cfg.kappa`` on ``horizon``.

    ``agents`` may be passed to reuse prosumer warm starts across calls on the
    same horizon (e.g. along a kappa sweep).
    """
    if agents is None:
        agents = make_agents(horizon, cfg)
    tube, zeta, n_pro = horizon.tube, horizon.zeta_bar, horizon.n_prosumers

    def ce_update(z_bar, lambda_bar):
        sub = CeSubproblem(z_bar, lambda_bar, cfg.rho, cfg.kappa, n_pro, zeta, tube)
        return solve_ce(sub)

    result = coordinate(agents, ce_update, zeta, tube, cfg, init)
    result.controls = [a.solution.u for a in agents]
    result.soc = np.vstack([a.solution.soc for a in agents])
    return result


def coordinate(
    agents: Sequence[Agent],
    ce_update: CeUpdate,
    zeta_bar: np.ndarray,
    tube: TubeSpec,
    cfg: AdmmConfig,
    init: WarmStart | None = None,
) -> AdmmResult:
    """The ADMM coordinator loop over opaque prosumer agents."""
    n_pro = len(agents)
    N = len(zeta_bar)
    rho = cfg.rho
    primal_tol, dual_tol = cfg.tolerances(N)

    if init is None:
        z = np.vstack([a.initial_output() for a in agents])
        a_bar = z.mean(axis=0)
        lam = np.zeros(N)
    else:
        z = np.array(init.z, dtype=float)
        a_bar = np.array(init.a_bar, dtype=float)
        lam = np.array(init.lambda_bar, dtype=float)
        if z.shape != (n_pro, N) or a_bar.shape != (N,) or lam.shape != (N,):
            raise ValueError("warm start does not match the problem dimensions")
    for agent, zi in zip(agents, z):
        agent.set_output(zi)
    z_bar = z.mean(axis=0)
    Pi = z_bar - a_bar + lam / rho
    s = SlackVector.zeros(N)

    history: list[AdmmState] = []
    primal = dual = math.inf
    converged, reason = False, "max_iters"
    workers = min(worker_count(cfg), n_pro)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    it = 0
    try:
        for it in range(1, cfg.max_iters + 1):
            if pool is None:
                z = np.vstack([a.respond(Pi) for a in agents])
            else:
                z = np.vstack(list(pool.map(lambda a: a.respond(Pi), agents)))
            z_bar = z.mean(axis=0)
            a_new, s = ce_update(z_bar, lam)
            lam = lam + rho * (z_bar - a_new)
            Pi = z_bar - a_new + lam / rho
            primal = float(np.linalg.norm(z_bar - a_new))
            dual = rho * float(np.linalg.norm(a_new - a_bar))
            a_bar = a_new
            if not (np.all(np.isfinite(Pi)) and np.all(np.isfinite(a_bar))):
                raise NonFiniteIterateError(f"non-finite iterate at iteration {it}")
            if cfg.keep_history:
                history.append(_state(it, z, z_bar, a_bar, s, lam, Pi, primal, dual, cfg, zeta_bar, tube))
            if primal <= primal_tol and dual <= dual_tol:
                converged, reason = True, "tolerance"
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if not converged:
        log.debug("ADMM stopped after %d iterations (primal %.3g, dual %.3g)", it, primal, dual)
    r = z_bar - a_bar + lam / rho
    return AdmmResult(
        converged=converged,
        reason=reason,
        z=z,
        z_bar=z_bar,
        a_bar=a_bar,
        s=s,
        lambda_bar=lam,
        kappa=cfg.kappa,
        rho=rho,
        g_val=g_of(a_bar, zeta_bar),
        h_val=h_of(s),
        g_hat_val=g_hat(z_bar, zeta_bar),
        h_hat_val=h_hat(z_bar, tube),
        iterations=it,
        penalty_term=0.5 * rho * n_pro * float(r @ r),
        primal_residual=primal,
        dual_residual=dual,
        history=history,
    )


def _state(it, z, z_bar, a_bar, s, lam, Pi, primal, dual, cfg, zeta_bar, tube) -> AdmmState:
    n_pro = z.shape[0]
    r = z_bar - a_bar + lam / cfg.rho
    return AdmmState(
        iteration=it,
        z=z,
        z_bar=z_bar,
        a_bar=a_bar,
        s=s,
        lambda_bar=lam,
        Pi=Pi,
        primal_residual=primal,
        dual_residual=dual,
        kappa=cfg.kappa,
        g=g_of(a_bar, zeta_bar),
        h=h_of(s),
        g_hat=g_hat(z_bar, zeta_bar),
        h_hat=h_hat(z_bar, tube),
        penalty=0.5 * cfg.rho * n_pro * float(r @ r),
        dual_energy=n_pro / (2 * cfg.rho) * float(lam @ lam),
    )


@dataclass
class ConvergenceReport:
    iterations: int
    primal_log_slope: float
    primal_monotone_fraction: float
    final_primal_residual: float
    final_dual_residual: float
    penalty_term: float
    dual_energy: float
    penalty_deviation: float
    g_gap: np.ndarray
    h_gap: np.ndarray
    f_gap: np.ndarray
    g: np.ndarray
    h: np.ndarray
    g_hat: np.ndarray
    h_hat: np.ndarray

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "primal_log_slope": self.primal_log_slope,
            "primal_monotone_fraction": self.primal_monotone_fraction,
            "final_primal_residual": self.final_primal_residual,
            "final_dual_residual": self.final_dual_residual,
            "penalty_term": self.penalty_term,
            "dual_energy": self.dual_energy,
            "penalty_deviation": self.penalty_deviation,
            "final_g_gap": float(self.g_gap[-1]),
            "final_h_gap": float(self.h_gap[-1]),
            "final_f_gap": float(self.f_gap[-1]),
        }


def diagnose_convergence(history: Sequence[AdmmState]) -> ConvergenceReport:
    """Residual trend, fixed-point penalty identity and estimate gaps.

    ``penalty_deviation`` is ``|penalty - I/(2 rho) |lambda_bar|^2| / (1 + penalty)``
    at the last iterate; it vanishes at a fixed point.  The gap series compare
    the coordinator's ``(g(a_bar), h(s))`` with ``(g_hat(z_bar), h_hat(z_bar))``;
    no ordering between them is implied before convergence.
    """
    if not history:
        raise ValueError("empty ADMM history")
    primal = np.array([st.primal_residual for st in history])
    g = np.array([st.g for st in history])
    h = np.array([st.h for st in history])
    gh = np.array([st.g_hat for st in history])
    hh = np.array([st.h_hat for st in history])
    f = np.array([st.f for st in history])
    fh = np.array([st.f_hat for st in history])
    if len(primal) > 1:
        it = np.arange(len(primal), dtype=float)
        slope = float(np.polyfit(it, np.log10(np.maximum(primal, 1e-300)), 1)[0])
        monotone = float(np.mean(np.diff(primal) <= 0))
    else:
        slope, monotone = 0.0, 1.0
    last = history[-1]
    return ConvergenceReport(
        iterations=len(history),
        primal_log_slope=slope,
        primal_monotone_fraction=monotone,
        final_primal_residual=last.primal_residual,
        final_dual_residual=last.dual_residual,
        penalty_term=last.penalty,
        dual_energy=last.dual_energy,
        penalty_deviation=abs(last.penalty - last.dual_energy) / (1 + last.penalty),
        g_gap=np.abs(g - gh),
        h_gap=np.abs(h - hh),
        f_gap=np.abs(f - fh),
        g=g,
        h=h,
        g_hat=gh,
        h_hat=hh,
    )


TRACE_HEADER = ["iteration", "primal_residual", "dual_residual", "g", "h", "g_hat", "h_hat", "f_gap", "penalty"]


def write_trace(history: Sequence[AdmmState], path) -> None:
    """Per-iteration CSV trace (9 significant digits)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for st in history:
            vals = (st.primal_residual, st.dual_residual, st.g, st.h, st.g_hat, st.h_hat, abs(st.f - st.f_hat), st.penalty)
            writer.writerow([st.iteration, *(f"{v:.9g}" for v in vals)])
