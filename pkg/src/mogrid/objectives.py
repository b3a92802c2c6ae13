"""Peak-shaving and tube objectives, slack variables and the coupling set.

``g`` and ``h`` are plain squared norms (no ``1/N``).  ``eval_J1`` keeps its
``1/N`` so that ``N * eval_J1 == g_hat`` for the aggregate it induces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .prosumer import ProsumerParams


@dataclass(frozen=True)
class TubeSpec:
    """Per-step lower and upper bounds on the average demand (kW)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("tube bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            n = int(np.argmax(lo > hi))
            raise ValueError(f"tube lower bound exceeds upper bound at step {n}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self):
        return len(self.lower)

    @classmethod
    def constant(cls, lower: float, upper: float, n: int) -> "TubeSpec":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    @classmethod
    def from_segments(cls, segments: Sequence, n: int) -> "TubeSpec":
        """Expand piecewise-constant segments ``(start, lower, upper)``.

        Each segment holds from its start index to the next segment's start;
        the last one extends to ``n``.  The first segment must start at 0.
        """
        segs = sorted((int(s), float(lo), float(hi)) for s, lo, hi in segments)
        if not segs or segs[0][0] != 0:
            raise ValueError("tube segments must start at index 0")
        lo = np.empty(n)
        hi = np.empty(n)
        for (start, a, b), nxt in zip(segs, [*segs[1:], (n, 0, 0)]):
            lo[start : nxt[0]] = a
            hi[start : nxt[0]] = b
        return cls(lo, hi)

    def slice(self, start: int, length: int) -> "TubeSpec":
        if start < 0 or start + length > len(self):
            raise ValueError(f"tube of length {len(self)} does not cover [{start}, {start + length})")
        return TubeSpec(self.lower[start : start + length], self.upper[start : start + length])

    def widened(self, width: float) -> "TubeSpec":
        """Same midpoints, bounds ``width`` apart."""
        if width < 0:
            raise ValueError("tube width must be nonnegative")
        mid = 0.5 * (self.lower + self.upper)
        return TubeSpec(mid - 0.5 * width, mid + 0.5 * width)


class SlackVector(NamedTuple):
    """Tube relaxations below (``lower``) and above (``upper``) the tube."""

    lower: np.ndarray
    upper: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.lower, self.upper])

    @classmethod
    def zeros(cls, n: int) -> "SlackVector":
        return cls(np.zeros(n), np.zeros(n))


def _check_len(*arrays):
    n = len(arrays[0])
    for a in arrays[1:]:
        if len(a) != n:
            raise ValueError(f"dimension mismatch: {n} vs {len(a)}")


def minimal_slack(z_bar, tube: TubeSpec) -> SlackVector:
    """Smallest slack making ``(z_bar, s)`` admissible for the relaxed tube."""
    z_bar = np.asarray(z_bar, dtype=float)
    _check_len(z_bar, tube.lower)
    return SlackVector(np.maximum(tube.lower - z_bar, 0.0), np.maximum(z_bar - tube.upper, 0.0))


def aggregate_demand(z) -> np.ndarray:
    """Average over prosumers of per-prosumer demand profiles ``(I, N)``."""
    return np.atleast_2d(np.asarray(z, dtype=float)).mean(axis=0)


def _prosumer_demands(controls, w, params: Sequence[ProsumerParams]) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if len(controls) != w.shape[0] or len(params) != w.shape[0]:
        raise ValueError("need one control sequence and one parameter set per prosumer")
    out = np.empty_like(w)
    for i, (u, p) in enumerate(zip(controls, params)):
        um, up = (np.asarray(a, dtype=float) for a in u)
        if um.shape != w[i].shape or up.shape != w[i].shape:
            raise ValueError(f"control length mismatch for prosumer {i}")
        out[i] = w[i] + up + p.gamma * um
    return out


def eval_J1(controls, w, zeta_bar, params: Sequence[ProsumerParams]) -> float:
    """Mean squared deviation of the average demand from the reference."""
    z_bar = aggregate_demand(_prosumer_demands(controls, w, params))
    zeta_bar = np.asarray(zeta_bar, dtype=float)
    _check_len(z_bar, zeta_bar)
    return float(np.mean((z_bar - zeta_bar) ** 2))


def eval_J2(controls, w, tube: TubeSpec, params: Sequence[ProsumerParams]) -> float:
    """Summed squared violation of the tube by the average demand."""
    z_bar = aggregate_demand(_prosumer_demands(controls, w, params))
    return h_hat(z_bar, tube)


def g_of(z_bar, zeta_bar) -> float:
    z_bar = np.asarray(z_bar, dtype=float)
    zeta_bar = np.asarray(zeta_bar, dtype=float)
    _check_len(z_bar, zeta_bar)
    d = z_bar - zeta_bar
    return float(d @ d)


def h_of(s: SlackVector) -> float:
    lower, upper = (np.asarray(a, dtype=float) for a in s)
    _check_len(lower, upper)
    return float(lower @ lower + upper @ upper)


def g_hat(z_bar, zeta_bar) -> float:
    return g_of(z_bar, zeta_bar)


def h_hat(z_bar, tube: TubeSpec) -> float:
    return h_of(minimal_slack(z_bar, tube))


def f_hat(kappa: float, z_bar, zeta_bar, tube: TubeSpec) -> float:
    return scalarized(kappa, g_hat(z_bar, zeta_bar), h_hat(z_bar, tube))


def scalarized(kappa: float, g_val: float, h_val: float) -> float:
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    return kappa * g_val + (1.0 - kappa) * h_val


def in_coupling_set(z_bar, s: SlackVector, tube: TubeSpec, tol: float = 0.0) -> bool:
    """Whether ``s >= 0`` and ``lower - s_lower <= z_bar <= upper + s_upper``."""
    z_bar = np.asarray(z_bar, dtype=float)
    lower, upper = (np.asarray(a, dtype=float) for a in s)
    _check_len(z_bar, lower, upper, tube.lower)
    return bool(
        np.all(lower >= -tol)
        and np.all(upper >= -tol)
        and np.all(tube.lower - lower <= z_bar + tol)
        and np.all(z_bar <= tube.upper + upper + tol)
    )
