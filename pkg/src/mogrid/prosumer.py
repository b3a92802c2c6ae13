"""Prosumer battery model: dynamics, demand output and constraint checks.

Controls of one prosumer over a horizon are held in a :class:`Controls`
pair of arrays ``u_minus`` (discharge rate, <= 0) and ``u_plus`` (charge
rate, >= 0).  Rates are in kW, energies in kWh and the step length in hours.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TOL_FEAS = 1e-9


@dataclass(frozen=True)
class ProsumerParams:
    """Battery parameters of one household.

    Parameters
    ----------
    alpha : float
        Self-discharge efficiency in (0, 1].
    beta : float
        Charging efficiency in (0, 1].
    gamma : float
        Discharging efficiency in (0, 1].
    capacity : float
        Usable capacity in kWh.  ``0`` means the household has no storage.
    u_min : float
        Maximal discharge rate (negative, kW).
    u_max : float
        Maximal charge rate (positive, kW).
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    capacity: float = 2.0
    u_min: float = -0.5
    u_max: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {val}")
        if not self.u_min < 0.0 < self.u_max:
            raise ValueError(
                f"rate limits must satisfy u_min < 0 < u_max, got ({self.u_min}, {self.u_max})"
            )
        if self.capacity < 0.0:
            raise ValueError(f"capacity must be nonnegative, got {self.capacity}")

    @property
    def has_storage(self) -> bool:
        return self.capacity > 0.0


@dataclass(frozen=True)
class TimeGrid:
    """Step length ``T`` (hours), horizon length ``N`` and absolute start ``k0``."""

    T: float = 0.5
    N: int = 48
    k0: int = 0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"step length T must be positive, got {self.T}")
        # N == 1 is admitted for small solver instances; the MPC loop needs N >= 2.
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"horizon N must be a positive integer, got {self.N}")
        if self.k0 < 0:
            raise ValueError(f"start index k0 must be nonnegative, got {self.k0}")


class ControlStep(NamedTuple):
    u_minus: float
    u_plus: float


class Controls(NamedTuple):
    """Discharge and charge rate sequences of equal length."""

    u_minus: np.ndarray
    u_plus: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "Controls":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_steps(cls, steps) -> "Controls":
        arr = np.asarray([tuple(s) for s in steps], dtype=float).reshape(-1, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())

    def __len__(self):
        return len(self.u_minus)

    def step(self, n: int) -> ControlStep:
        return ControlStep(float(self.u_minus[n]), float(self.u_plus[n]))


def _as_controls(controls) -> Controls:
    if isinstance(controls, Controls):
        um, up = controls
    else:
        return Controls.from_steps(controls)
    um = np.asarray(um, dtype=float)
    up = np.asarray(up, dtype=float)
    if um.shape != up.shape or um.ndim != 1:
        raise ValueError("u_minus and u_plus must be 1-d arrays of equal length")
    return Controls(um, up)


def simulate_soc(x0: float, controls, params: ProsumerParams, grid: TimeGrid) -> np.ndarray:
    """State of charge along the horizon, ``N + 1`` values starting at ``x0``.

    No clamping is applied; use :func:`check_feasible` for the bounds.
    """
    u = _as_controls(controls)
    if len(u) != grid.N:
        raise ValueError(f"expected {grid.N} control steps, got {len(u)}")
    x = np.empty(grid.N + 1)
    x[0] = x0
    for n in range(grid.N):
        x[n + 1] = params.alpha * x[n] + grid.T * (params.beta * u.u_plus[n] + u.u_minus[n])
    return x


def demand_output(w, controls, params: ProsumerParams) -> np.ndarray:
    """Power demand at the meter, ``z = w + u_plus + gamma * u_minus``."""
    u = _as_controls(controls)
    w = np.asarray(w, dtype=float)
    if w.shape != u.u_minus.shape:
        raise ValueError(f"length mismatch: w has {w.shape}, controls have {u.u_minus.shape}")
    return w + u.u_plus + params.gamma * u.u_minus


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    constraint: str | None = None
    step: int | None = None
    violation: float = 0.0

    def __bool__(self):
        return self.feasible


def check_feasible(
    x0: float, controls, params: ProsumerParams, grid: TimeGrid, tol: float = TOL_FEAS
) -> FeasibilityReport:
    """Check the state, rate and joint charge/discharge bounds.

    Returns the first violated constraint in time order.  Constraint labels are
    ``"soc"`` for the capacity box, ``"discharge"`` and ``"charge"`` for the
    rate bounds, ``"joint"`` for the combined rate condition and
    ``"no_storage"`` for any nonzero control on a household without battery.
    """
    u = _as_controls(controls)
    if len(u) != grid.N:
        raise ValueError(f"expected {grid.N} control steps, got {len(u)}")
    if not -tol <= x0 <= params.capacity + tol:
        return FeasibilityReport(False, "soc", 0, max(-x0, x0 - params.capacity))
    x = simulate_soc(x0, u, params, grid)
    for n in range(grid.N):
        um, up = u.u_minus[n], u.u_plus[n]
        if not params.has_storage and (um != 0.0 or up != 0.0):
            return FeasibilityReport(False, "no_storage", n, max(abs(um), abs(up)))
        if um < params.u_min - tol or um > tol:
            return FeasibilityReport(False, "discharge", n, max(params.u_min - um, um))
        if up < -tol or up > params.u_max + tol:
            return FeasibilityReport(False, "charge", n, max(-up, up - params.u_max))
        ratio = um / params.u_min + up / params.u_max
        if ratio < -tol or ratio > 1.0 + tol:
            return FeasibilityReport(False, "joint", n, max(-ratio, ratio - 1.0))
        xn = x[n + 1]
        if xn < -tol or xn > params.capacity + tol:
            return FeasibilityReport(False, "soc", n + 1, max(-xn, xn - params.capacity))
    return FeasibilityReport(True)


def max_violation(x0: float, controls, params: ProsumerParams, grid: TimeGrid) -> float:
    """Largest amount by which any state, rate or joint bound is exceeded (0 if none)."""
    u = _as_controls(controls)
    if len(u) != grid.N:
        raise ValueError(f"expected {grid.N} control steps, got {len(u)}")
    x = simulate_soc(x0, u, params, grid)
    ratio = u.u_minus / params.u_min + u.u_plus / params.u_max
    parts = [
        -x, x - params.capacity,
        params.u_min - u.u_minus, u.u_minus,
        -u.u_plus, u.u_plus - params.u_max,
        -ratio, ratio - 1.0,
    ]
    if not params.has_storage:
        parts += [np.abs(u.u_minus), np.abs(u.u_plus)]
    return max(0.0, float(max(np.max(p) for p in parts)))
