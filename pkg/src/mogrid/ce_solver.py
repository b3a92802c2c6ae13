"""Coordinator-side ADMM update over the relaxed tube set.

Per time step the subproblem is

    min  kappa (a - zeta)^2 + (1 - kappa) (s_lo^2 + s_up^2) + p (a - q)^2
    s.t. lower - s_lo <= a <= upper + s_up,  s_lo, s_up >= 0

with ``p = rho * I / 2`` and ``q = z_bar + lambda_bar / rho``.  For a fixed
``a`` the best slack is the minimal one (for ``kappa < 1`` it is the unique
choice; for ``kappa = 1`` the slack is free and the minimal one is taken).
Substituting it leaves a strictly convex C^1 piecewise quadratic in ``a``
whose minimizer lies in exactly one of three regions: below, inside or above
the tube.  The region is decided by where the in-tube stationary point falls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import SlackVector, TubeSpec, minimal_slack


@dataclass(frozen=True)
class CeSubproblem:
    z_bar_new: np.ndarray
    lambda_bar: np.ndarray
    rho: float
    kappa: float
    n_prosumers: int
    zeta_bar: np.ndarray
    tube: TubeSpec

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.n_prosumers < 1:
            raise ValueError("need at least one prosumer")
        n = len(self.tube)
        for name in ("z_bar_new", "lambda_bar", "zeta_bar"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            object.__setattr__(self, name, arr)

    @property
    def penalty_weight(self) -> float:
        return 0.5 * self.rho * self.n_prosumers

    @property
    def anchor(self) -> np.ndarray:
        return self.z_bar_new + self.lambda_bar / self.rho


def solve_ce(sub: CeSubproblem) -> tuple[np.ndarray, SlackVector]:
    """Exact minimizer ``(a_bar, s)`` of the coordinator subproblem."""
    k, p = sub.kappa, sub.penalty_weight
    q, zeta = sub.anchor, sub.zeta_bar
    lo, hi = sub.tube.lower, sub.tube.upper
    inside = (k * zeta + p * q) / (k + p)
    # outside the tube the slack term adds curvature (1 - kappa) pulling toward the bound
    above = (k * zeta + (1.0 - k) * hi + p * q) / (1.0 + p)
    below = (k * zeta + (1.0 - k) * lo + p * q) / (1.0 + p)
    a = np.where(inside > hi, above, np.where(inside < lo, below, inside))
    if k < 1.0:
        # roundoff must not carry the point across the bound it was assigned to
        a = np.where(inside > hi, np.maximum(a, hi), np.where(inside < lo, np.minimum(a, lo), a))
    return a, minimal_slack(a, sub.tube)


def ce_objective(sub: CeSubproblem, a_bar, s: SlackVector) -> float:
    """Objective value of the coordinator subproblem at ``(a_bar, s)``."""
    a_bar = np.asarray(a_bar, dtype=float)
    d = a_bar - sub.zeta_bar
    r = sub.z_bar_new - a_bar + sub.lambda_bar / sub.rho
    lower, upper = s
    return float(
        sub.kappa * d @ d
        + (1.0 - sub.kappa) * (lower @ lower + upper @ upper)
        + sub.penalty_weight * r @ r
    )
