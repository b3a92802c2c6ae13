"""Snapshot of one receding-horizon optimization problem."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dataset import NetConsumptionSeries, reference_values
from .objectives import TubeSpec
from .prosumer import ProsumerParams, TimeGrid


@dataclass(frozen=True)
class HorizonProblem:
    """Forecasts, reference, tube and initial charge for steps ``k .. k+N-1``.

    ``w`` has shape ``(I, N)``; ``x0`` and ``params`` hold one entry per
    prosumer.
    """

    w: np.ndarray
    x0: np.ndarray
    params: tuple[ProsumerParams, ...]
    zeta_bar: np.ndarray
    tube: TubeSpec
    grid: TimeGrid

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        params = tuple(self.params)
        zeta = np.asarray(self.zeta_bar, dtype=float)
        n_pro, N = w.shape
        if N != self.grid.N:
            raise ValueError(f"forecast window has {N} steps, grid expects {self.grid.N}")
        if x0.shape != (n_pro,) or len(params) != n_pro:
            raise ValueError("need one initial charge and one parameter set per prosumer")
        if zeta.shape != (N,) or len(self.tube) != N:
            raise ValueError("reference and tube must cover the horizon")
        for i, (x, p) in enumerate(zip(x0, params)):
            if not 0.0 <= x <= p.capacity:
                raise ValueError(f"initial charge {x} of prosumer {i} outside [0, {p.capacity}]")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(zeta)):
            raise ValueError("forecast and reference must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "zeta_bar", zeta)

    @property
    def n_prosumers(self) -> int:
        return self.w.shape[0]

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def k(self) -> int:
        return self.grid.k0

    def with_tube(self, tube: TubeSpec) -> "HorizonProblem":
        return replace(self, tube=tube)

    def with_x0(self, x0) -> "HorizonProblem":
        return replace(self, x0=np.broadcast_to(np.asarray(x0, dtype=float), self.x0.shape).copy())

    @classmethod
    def from_series(
        cls,
        series: NetConsumptionSeries,
        params: ProsumerParams | Sequence[ProsumerParams],
        tube: TubeSpec,
        x0,
        k: int,
        N: int,
    ) -> "HorizonProblem":
        """Window of ``series`` at step ``k``; ``tube`` is indexed in absolute steps."""
        n_pro = series.n_prosumers
        if isinstance(params, ProsumerParams):
            params = (params,) * n_pro
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_pro,)).copy()
        return cls(
            w=series.window(k, N),
            x0=x0,
            params=tuple(params),
            zeta_bar=reference_values(series, k, N),
            tube=tube.slice(k, N),
            grid=TimeGrid(series.T, N, k),
        )
