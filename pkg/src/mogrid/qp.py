"""Dense primal active-set method for small convex QPs.

Solves ``min 0.5 x'Hx + c'x  s.t.  lb <= x <= ub,  A_eq x = b_eq,  A x <= b``
from a feasible starting point.  ``H`` may be singular as long as the
objective is bounded on every face visited, which holds whenever ``c`` lies in
the range of ``H`` (least-squares objectives).  Active simple bounds are
handled by fixing variables, so the equality-constrained subproblems carry
only the free variables and the working rows.  A working set can be handed
back in to warm start a sequence of closely related problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ZERO_STEP = 1e-13
_BLOCK_TOL = 1e-11
_DEGENERATE_SWITCH = 25


@dataclass
class WorkingSet:
    """Active bounds (``side[j]`` is -1 lower, +1 upper, 0 free) and active inequality rows."""

    side: np.ndarray
    rows: list[int] = field(default_factory=list)

    def copy(self) -> "WorkingSet":
        return WorkingSet(self.side.copy(), list(self.rows))


@dataclass
class QPResult:
    x: np.ndarray
    working: WorkingSet
    row_multipliers: np.ndarray
    bound_multipliers: np.ndarray
    iterations: int
    kkt_residual: float
    converged: bool


def _independent(M: np.ndarray) -> bool:
    if M.shape[0] == 0:
        return True
    if M.shape[1] < M.shape[0]:
        return False
    s = np.linalg.svd(M, compute_uv=False)
    return s[-1] > 1e-10 * max(1.0, s[0])


def _validate_start(x, lb, ub, A, b, n_eq, working: WorkingSet | None, tol):
    """Keep the warm-start entries that are active at ``x`` and independent."""
    side = np.zeros(len(x), dtype=int)
    if working is not None:
        for j in np.flatnonzero(working.side):
            s = working.side[j]
            bound = lb[j] if s < 0 else ub[j]
            if np.isfinite(bound) and abs(x[j] - bound) <= tol:
                side[j] = s
                x[j] = bound
    rows = list(range(n_eq))
    free = side == 0
    if not _independent(A[np.ix_(rows, free)]):
        # equalities must stay; release bounds until they are independent again
        side[:] = 0
        free = side == 0
    if working is not None:
        for i in working.rows:
            if i < n_eq or abs(A[i] @ x - b[i]) > tol:
                continue
            if _independent(A[np.ix_([*rows, i], free)]):
                rows.append(i)
    return WorkingSet(side, rows)


def solve_qp(
    H: np.ndarray,
    c: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    working: WorkingSet | None = None,
    *,
    n_eq: int = 0,
    tol: float = 1e-8,
    max_iter: int = 1000,
) -> QPResult:
    """Primal active-set iterations from the feasible point ``x0``.

    The first ``n_eq`` rows of ``A`` are equalities and stay in the working
    set.  ``tol`` bounds the returned KKT residual (stationarity, primal and
    dual feasibility).  When ``max_iter`` is exhausted the current feasible
    iterate is returned with ``converged=False``.
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    ws = _validate_start(x, lb, ub, A, b, n_eq, working, 1e-12)
    side, rows = ws.side, ws.rows
    row_norm = np.linalg.norm(A, axis=1) if A.shape[0] else np.zeros(0)
    lam = np.zeros(len(rows))
    degenerate = 0
    it = 0
    converged = False
    need_solve = True
    while it < max_iter:
        it += 1
        g = H @ x + c
        free = np.flatnonzero(side == 0)
        if need_solve:
            p_free, lam = _eqp_step(H, g, A, rows, free)
        else:
            p_free = np.zeros(len(free))
        scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
        if np.max(np.abs(p_free), initial=0.0) <= _ZERO_STEP * scale:
            mu = _bound_multipliers(g, A, rows, lam, side)
            ineq = lam[n_eq:]
            worst_row = int(np.argmin(ineq)) if len(ineq) else -1
            min_row = ineq[worst_row] if len(ineq) else np.inf
            worst_bnd = int(np.argmin(mu))
            min_bnd = mu[worst_bnd]
            if min(min_row, min_bnd) >= -tol:
                converged = True
                break
            if degenerate > _DEGENERATE_SWITCH:
                # Bland-style choice of the lowest index breaks cycles
                neg_b = [j for j in np.flatnonzero(side) if mu[j] < -tol]
                neg_r = [r for r, l in zip(rows[n_eq:], ineq) if l < -tol]
                if neg_b:
                    side[min(neg_b)] = 0
                else:
                    rows.remove(min(neg_r))
            elif min_row < min_bnd:
                rows.pop(n_eq + worst_row)
            else:
                side[worst_bnd] = 0
            need_solve = True
            continue

        p = np.zeros(n)
        p[free] = p_free
        alpha, block = 1.0, None
        # components at roundoff level belong to bounds already implied by the working set
        tiny = _BLOCK_TOL * np.linalg.norm(p_free)
        pos = free[p_free > tiny]
        if len(pos):
            ratios = (ub[pos] - x[pos]) / p[pos]
            j = int(np.argmin(ratios))
            if ratios[j] < alpha:
                alpha, block = max(ratios[j], 0.0), ("ub", pos[j])
        neg = free[p_free < -tiny]
        if len(neg):
            ratios = (lb[neg] - x[neg]) / p[neg]
            j = int(np.argmin(ratios))
            if ratios[j] < alpha:
                alpha, block = max(ratios[j], 0.0), ("lb", neg[j])
        if A.shape[0] > n_eq:
            Ap = A @ p
            cand = np.flatnonzero(Ap > _BLOCK_TOL * row_norm * np.linalg.norm(p))
            cand = cand[(cand >= n_eq) & ~np.isin(cand, rows)]
            if len(cand):
                slack = np.maximum(b[cand] - A[cand] @ x, 0.0)
                ratios = slack / Ap[cand]
                j = int(np.argmin(ratios))
                if ratios[j] < alpha:
                    alpha, block = ratios[j], ("row", int(cand[j]))
        x += alpha * p
        np.clip(x, lb, ub, out=x)
        if block is None:
            need_solve = False
            degenerate = 0
            continue
        degenerate = degenerate + 1 if alpha == 0.0 else 0
        kind, j = block
        if kind == "ub":
            side[j], x[j] = 1, ub[j]
        elif kind == "lb":
            side[j], x[j] = -1, lb[j]
        else:
            rows.append(j)
        need_solve = True

    g = H @ x + c
    if need_solve:
        _, lam = _eqp_step(H, g, A, rows, np.flatnonzero(side == 0))
    mu = _bound_multipliers(g, A, rows, lam, side)
    kkt = _kkt_residual(x, g, lb, ub, A, b, n_eq, rows, lam, side, mu)
    return QPResult(x, WorkingSet(side, rows), lam, mu, it, kkt, converged and kkt <= tol)


def _eqp_step(H, g, A, rows, free):
    """Step to the minimizer on the current face; min-norm if that is not unique."""
    nf, nr = len(free), len(rows)
    K = np.zeros((nf + nr, nf + nr))
    K[:nf, :nf] = H[np.ix_(free, free)]
    if nr:
        AG = A[np.ix_(rows, free)]
        K[:nf, nf:] = AG.T
        K[nf:, :nf] = AG
    rhs = np.zeros(nf + nr)
    rhs[:nf] = -g[free]
    try:
        sol = np.linalg.solve(K, rhs)
        ok = np.max(np.abs(K @ sol - rhs), initial=0.0) <= 1e-11 * max(1.0, np.max(np.abs(rhs), initial=0.0))
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        sol = np.linalg.lstsq(K, rhs, rcond=1e-12)[0]
    return sol[:nf], sol[nf:]


def _bound_multipliers(g, A, rows, lam, side):
    """Multipliers of active bounds with the convention ``grad + sum mu a = 0``."""
    r = g.copy()
    if len(rows):
        r += A[rows].T @ lam
    mu = np.zeros(len(g))
    active = side != 0
    mu[active] = -side[active] * r[active]
    return mu


def _kkt_residual(x, g, lb, ub, A, b, n_eq, rows, lam, side, mu):
    stat = g.copy()
    if len(rows):
        stat += A[rows].T @ lam
    stat += side * mu
    primal = max(float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
    if A.shape[0]:
        res = A @ x - b
        primal = max(primal, float(np.max(np.abs(res[:n_eq]), initial=0.0)))
        primal = max(primal, float(np.max(res[n_eq:], initial=0.0)))
    dual = max(float(np.max(-lam[n_eq:], initial=0.0)), float(np.max(-mu, initial=0.0)))
    return max(float(np.max(np.abs(stat), initial=0.0)), primal, dual)
