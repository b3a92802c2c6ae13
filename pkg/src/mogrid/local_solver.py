"""Prosumer-side ADMM update: Euclidean projection onto the realizable demand set.

The set of demand profiles a household can produce is the image of its
feasible control polytope under ``u -> w + u_plus + gamma * u_minus``.  The
projection is computed in control space.  The demand does not pin down the
controls when charging and discharging run in the same step, so a second
pass picks the minimum-norm control that realizes the projected profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prosumer import Controls, ProsumerParams, TimeGrid, demand_output, simulate_soc
from .qp import QPResult, WorkingSet, solve_qp

TOL_KKT = 1e-8
_OVERLAP = 1e-12


@dataclass(frozen=True)
class FeasibleOutputProblem:
    """Project ``target`` onto the demand profiles realizable from ``x0``."""

    target: np.ndarray
    w: np.ndarray
    x0: float
    params: ProsumerParams
    grid: TimeGrid

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if target.shape != (self.grid.N,) or w.shape != (self.grid.N,):
            raise ValueError(f"target and w must have length N={self.grid.N}")
        if not 0.0 <= self.x0 <= self.params.capacity:
            raise ValueError(f"x0={self.x0} outside [0, {self.params.capacity}]")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "w", w)


@dataclass
class LocalSolution:
    z: np.ndarray
    u: Controls
    soc: np.ndarray
    kkt_residual: float
    iterations: int = 0
    working: WorkingSet | None = field(default=None, repr=False)
    converged: bool = True


class _ConstraintData:
    """Constraint matrices of one household over one horizon (built once)."""

    def __init__(self, w, x0, params: ProsumerParams, grid: TimeGrid):
        N = grid.N
        self.N = N
        self.w = np.asarray(w, dtype=float)
        self.params = params
        self.grid = grid
        self.x0 = float(x0)
        g = params.gamma
        eye = np.eye(N)
        self.B = np.hstack([g * eye, eye])
        self.H = self.B.T @ self.B
        self.lb = np.concatenate([np.full(N, params.u_min), np.zeros(N)])
        self.ub = np.concatenate([np.zeros(N), np.full(N, params.u_max)])
        joint = np.hstack([np.eye(N) / params.u_min, np.eye(N) / params.u_max])
        # energy reaching the battery: x(n+1) = a^(n+1) x0 + sum_j M[n, j] (u_minus + beta u_plus)(j)
        steps = np.arange(N)
        expo = steps[:, None] - steps[None, :]
        M = np.where(expo >= 0, grid.T * params.alpha ** np.maximum(expo, 0), 0.0)
        soc_rows = np.hstack([M, params.beta * M])
        free_decay = params.alpha ** (steps + 1) * self.x0
        self._soc_map = M
        self._soc_room = params.capacity - free_decay
        self._soc_floor = free_decay
        self.A = np.vstack([joint, soc_rows, -soc_rows])
        self.b = np.concatenate([np.ones(N), params.capacity - free_decay, free_decay])

    def solve(self, target, start=None, tol=TOL_KKT, max_iter=None):
        N = self.N
        r = np.asarray(target, dtype=float) - self.w
        if not self.params.has_storage:
            u = Controls.zeros(N)
            return LocalSolution(self.w.copy(), u, np.full(N + 1, self.x0), 0.0)
        c = -np.concatenate([self.params.gamma * r, r])
        if start is None:
            x_start, ws = np.zeros(2 * N), None
        else:
            x_start, ws = start
        max_iter = max_iter or max(10 * N * N, 50)
        res = solve_qp(
            self.H, c, self.lb, self.ub, self.A, self.b, x_start, ws, tol=tol, max_iter=max_iter
        )
        iterations = res.iterations
        if np.any((res.x[:N] < -_OVERLAP) & (res.x[N:] > _OVERLAP)):
            x, tie = self._least_cycling(res.x, tol, max_iter)
            iterations += tie.iterations
            res = type(res)(
                x, res.working, res.row_multipliers, res.bound_multipliers, iterations,
                max(res.kkt_residual, tie.kkt_residual), res.converged and tie.converged,
            )
        # sign bounds hold exactly; tidy roundoff on the other entries
        um = np.minimum(res.x[:N], 0.0)
        up = np.maximum(res.x[N:], 0.0)
        u = Controls(um, up)
        z = demand_output(self.w, u, self.params)
        soc = simulate_soc(self.x0, u, self.params, self.grid)
        return LocalSolution(
            z, u, soc, res.kkt_residual, iterations, res.working, res.converged
        )

    def _least_cycling(self, x, tol, max_iter):
        """Smallest controls with the same per-step demand as ``x``.

        With ``d = u_plus + gamma * u_minus`` pinned, ``u_plus = d - gamma * u_minus``
        and the problem is a strictly convex QP in ``u_minus`` alone.
        """
        N, p = self.N, self.params
        g = p.gamma
        d = x[N:] + g * x[:N]
        lb = np.maximum(p.u_min, (d - p.u_max) / g)
        ub = np.minimum(0.0, d / g)
        # joint limit u_minus / u_min + (d - gamma u_minus) / u_max <= 1 is a lower bound on u_minus
        lb = np.maximum(lb, (1.0 - d / p.u_max) / (1.0 / p.u_min - g / p.u_max))
        lb = np.minimum(lb, ub)
        H = np.eye(N) * (1.0 + g * g)
        c = -g * d
        loss = 1.0 - p.beta * g
        if loss <= 0.0:
            # lossless: the stored energy depends on d only, so the steps decouple
            um = np.clip(g * d / (1.0 + g * g), lb, ub)
            tie = QPResult(um, WorkingSet(np.zeros(N, dtype=int)), np.zeros(0), np.zeros(N), 0, 0.0, True)
            return np.concatenate([um, d - g * um]), tie
        # stored energy M ((1 - beta gamma) u_minus + beta d) stays in [0, C]
        M = self._soc_map
        A = np.vstack([loss * M, -loss * M])
        b = np.concatenate([self._soc_room - p.beta * M @ d, self._soc_floor + p.beta * M @ d])
        start = np.clip(x[:N], lb, ub)
        tie = solve_qp(H, c, lb, ub, A, b, start, None, tol=tol, max_iter=max_iter)
        return np.concatenate([tie.x, d - g * tie.x]), tie


def project_onto_Di(problem: FeasibleOutputProblem, tol: float = TOL_KKT) -> LocalSolution:
    """Closest realizable demand profile to ``problem.target``."""
    data = _ConstraintData(problem.w, problem.x0, problem.params, problem.grid)
    return data.solve(problem.target, tol=tol)


class ProsumerAgent:
    """One household in the ADMM loop.

    Holds its private battery data; the coordinator only sees demand profiles.
    Successive projections are warm started from the previous solution.
    """

    def __init__(self, w, x0: float, params: ProsumerParams, grid: TimeGrid, tol: float = TOL_KKT):
        FeasibleOutputProblem(w, w, x0, params, grid)  # validates shapes and x0
        self._data = _ConstraintData(w, x0, params, grid)
        self._tol = tol
        self._last: LocalSolution | None = None
        self.z = self._data.w.copy()

    def initial_output(self) -> np.ndarray:
        """Idle-battery demand, always realizable."""
        return self._data.w.copy()

    def set_output(self, z) -> None:
        """Adopt ``z`` as the current iterate (warm start from a previous run)."""
        self.z = np.asarray(z, dtype=float).copy()

    def respond(self, broadcast: np.ndarray) -> np.ndarray:
        """ADMM step 1: project ``z - broadcast`` and keep the result."""
        start = None
        if self._last is not None:
            x = np.concatenate([self._last.u.u_minus, self._last.u.u_plus])
            start = (x, self._last.working.copy() if self._last.working is not None else None)
        sol = self._data.solve(self.z - broadcast, start, tol=self._tol)
        self._last = sol
        self.z = sol.z
        return sol.z

    @property
    def solution(self) -> LocalSolution:
        if self._last is None:
            N = self._data.N
            return LocalSolution(
                self._data.w.copy(), Controls.zeros(N), np.full(N + 1, self._data.x0), 0.0
            )
        return self._last


@dataclass(frozen=True)
class DemandEnvelope:
    z_min: np.ndarray
    z_max: np.ndarray


def max_demand_envelope(problem: FeasibleOutputProblem) -> DemandEnvelope:
    """Per-step outer bounds on the realizable demand.

    Steps are treated independently: the state of charge at step ``n`` is only
    known to lie in the interval reachable with extreme rates, and the widest
    charge/discharge consistent with that interval is taken.
    """
    p, T, N = problem.params, problem.grid.T, problem.grid.N
    if not p.has_storage:
        return DemandEnvelope(problem.w.copy(), problem.w.copy())
    lo = hi = problem.x0
    up = np.empty(N)
    dn = np.empty(N)
    for n in range(N):
        up[n] = np.clip((p.capacity - p.alpha * lo) / (T * p.beta), 0.0, p.u_max)
        dn[n] = np.clip(-p.alpha * hi / T, p.u_min, 0.0)
        lo = max(p.alpha * lo + T * dn[n], 0.0)
        hi = min(p.alpha * hi + T * p.beta * up[n], p.capacity)
    return DemandEnvelope(problem.w + p.gamma * dn, problem.w + up)
