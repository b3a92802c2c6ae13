"""Net consumption data: CSV ingestion, synthetic scenarios, reference values."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input data; ``row`` is the 1-based data row (header excluded)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"{message} at row {row}")


@dataclass(frozen=True)
class NetConsumptionSeries:
    """Net consumption ``w`` of shape ``(I, L)`` in kW with step length ``T`` hours."""

    w: np.ndarray
    T: float = 0.5
    prosumer_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if w.shape[1] < 1:
            raise ValueError("series must contain at least one step")
        if not np.all(np.isfinite(w)):
            raise ValueError("series contains non-finite values")
        if not self.T > 0:
            raise ValueError(f"step length must be positive, got {self.T}")
        object.__setattr__(self, "w", w)
        if not self.prosumer_ids:
            object.__setattr__(self, "prosumer_ids", tuple(str(i) for i in range(w.shape[0])))
        elif len(self.prosumer_ids) != w.shape[0]:
            raise ValueError("one prosumer id per series row required")

    @property
    def n_prosumers(self) -> int:
        return self.w.shape[0]

    def __len__(self) -> int:
        return self.w.shape[1]

    def window(self, start: int, length: int) -> np.ndarray:
        if start < 0 or start + length > len(self):
            raise ValueError(
                f"window [{start}, {start + length}) exceeds series of length {len(self)}"
            )
        return self.w[:, start : start + length]


def _parse_time(raw: str, row: int):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"unparsable timestamp {raw!r}", row) from None


def _parse_value(raw: str, row: int) -> float:
    if raw is None or raw.strip() == "":
        raise DataError("missing value", row)
    try:
        val = float(raw)
    except ValueError:
        raise DataError(f"unparsable value {raw!r}", row) from None
    if not np.isfinite(val):
        raise DataError(f"non-finite value {raw!r}", row)
    return val


def _step_hours(times: list, rows: list[int], step_hours: float | None) -> float:
    """Validate a uniform time axis and return its step length in hours."""
    if len(times) < 2:
        if step_hours is None and times and isinstance(times[0], datetime):
            raise DataError("cannot infer step length from a single timestamp")
        return 0.5 if step_hours is None else step_hours
    kinds = {isinstance(t, datetime) for t in times}
    if len(kinds) > 1:
        raise DataError("mixed integer and ISO-8601 timestamps")
    if isinstance(times[0], datetime):
        deltas = [(b - a).total_seconds() / 3600.0 for a, b in zip(times, times[1:])]
    else:
        deltas = [float(b - a) for a, b in zip(times, times[1:])]
    d0 = deltas[0]
    if d0 <= 0:
        raise DataError("non-increasing timestamps", rows[1])
    for j, d in enumerate(deltas[1:], start=2):
        if abs(d - d0) > 1e-9 * max(1.0, abs(d0)):
            raise DataError("non-uniform step", rows[j])
    if isinstance(times[0], datetime):
        return d0
    if d0 != 1:
        raise DataError("integer step index must increase by one", rows[1])
    return 0.5 if step_hours is None else step_hours


def load_csv(
    path,
    *,
    time_column: str = "timestamp",
    prosumer_column: str = "prosumer_id",
    value_column: str = "w",
    step_hours: float | None = None,
) -> NetConsumptionSeries:
    """Read net consumption from a wide or long CSV file.

    Wide layout: a time column plus one column per prosumer.  Long layout:
    exactly the columns ``time_column, prosumer_column, value_column``.
    Timestamps are ISO-8601 (the step length is inferred) or an integer step
    index (the step length is ``step_hours``, default 0.5 h).
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header or time_column not in header:
            raise DataError(f"header must contain a {time_column!r} column")
        records = list(reader)
    if not records:
        raise DataError("no data rows")
    for r, rec in enumerate(records, start=1):
        if None in rec or any(v is None for v in rec.values()):
            raise DataError("wrong number of fields", r)

    long_layout = set(header) == {time_column, prosumer_column, value_column}
    if long_layout:
        return _load_long(records, time_column, prosumer_column, value_column, step_hours)

    ids = [h for h in header if h != time_column]
    if not ids:
        raise DataError("no prosumer columns")
    times, rows = [], []
    w = np.empty((len(ids), len(records)))
    for r, rec in enumerate(records, start=1):
        times.append(_parse_time(rec[time_column], r))
        rows.append(r)
        for i, pid in enumerate(ids):
            w[i, r - 1] = _parse_value(rec[pid], r)
    T = _step_hours(times, rows, step_hours)
    return NetConsumptionSeries(w, T, tuple(ids))


def _load_long(records, time_column, prosumer_column, value_column, step_hours):
    table: dict[str, dict] = {}
    first_row: dict = {}
    for r, rec in enumerate(records, start=1):
        t = _parse_time(rec[time_column], r)
        pid = rec[prosumer_column].strip()
        if not pid:
            raise DataError("missing prosumer id", r)
        val = _parse_value(rec[value_column], r)
        per = table.setdefault(pid, {})
        if t in per:
            raise DataError(f"duplicate entry for prosumer {pid!r}", r)
        per[t] = val
        first_row.setdefault(t, r)
    times = sorted(first_row)
    rows = [first_row[t] for t in times]
    T = _step_hours(times, rows, step_hours)
    ids = list(table)
    w = np.empty((len(ids), len(times)))
    for i, pid in enumerate(ids):
        for j, t in enumerate(times):
            if t not in table[pid]:
                raise DataError(f"missing value for prosumer {pid!r}", first_row[t])
            w[i, j] = table[pid][t]
    return NetConsumptionSeries(w, T, tuple(ids))


def write_csv(series: NetConsumptionSeries, path, *, layout: str = "wide") -> None:
    """Write ``series`` with an integer step index column."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if layout == "wide":
            writer.writerow(["timestamp", *series.prosumer_ids])
            for n in range(len(series)):
                writer.writerow([n, *(f"{v:.9g}" for v in series.w[:, n])])
        elif layout == "long":
            writer.writerow(["timestamp", "prosumer_id", "w"])
            for n in range(len(series)):
                for pid, v in zip(series.prosumer_ids, series.w[:, n]):
                    writer.writerow([n, pid, f"{v:.9g}"])
        else:
            raise ValueError(f"unknown layout {layout!r}")


@dataclass(frozen=True)
class SynthProfile:
    """Shape of the synthetic daily net-consumption profile (kW)."""

    base_load: float = 0.5
    load_swing: float = 0.25
    solar_amplitude: float = 1.0
    noise_level: float = 0.05
    household_spread: float = 0.2


def synth_scenario(
    seed: int,
    n_prosumers: int,
    length: int,
    profile: SynthProfile | None = None,
    *,
    T: float = 0.5,
) -> NetConsumptionSeries:
    """Deterministic synthetic net consumption.

    Each household follows ``scale_i * (base + swing * evening_peak(t)) -
    solar_i * midday_bump(t) + noise``, where the bump is a half-sine between
    06:00 and 18:00 and the noise is uniform in ``[-noise_level, noise_level]``.
    Negative values mark generation surplus.
    """
    if n_prosumers < 1 or length < 1:
        raise ValueError("need at least one prosumer and one step")
    p = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    hours = (np.arange(length) * T) % 24.0
    # evening peak around 19:00, morning shoulder around 07:00
    peak = 0.5 * (1 + np.cos(2 * np.pi * (hours - 19.0) / 24.0)) + 0.3 * np.exp(
        -0.5 * ((hours - 7.0) / 1.5) ** 2
    )
    bump = np.where((hours > 6.0) & (hours < 18.0), np.sin(np.pi * (hours - 6.0) / 12.0), 0.0)
    scale = 1.0 + p.household_spread * rng.uniform(-1, 1, size=(n_prosumers, 1))
    solar = 1.0 + p.household_spread * rng.uniform(-1, 1, size=(n_prosumers, 1))
    noise = p.noise_level * rng.uniform(-1, 1, size=(n_prosumers, length))
    w = scale * (p.base_load + p.load_swing * peak) - p.solar_amplitude * solar * bump + noise
    return NetConsumptionSeries(w, T)


def perturb_forecast(window: np.ndarray, seed: int, level: float = 0.0) -> np.ndarray:
    """Additive uniform forecast error of amplitude ``level`` (identity at 0)."""
    window = np.asarray(window, dtype=float)
    if level == 0.0:
        return window.copy()
    rng = np.random.default_rng(seed)
    return window + level * rng.uniform(-1, 1, size=window.shape)


def reference_values(history, k: int, N: int) -> np.ndarray:
    """Trailing-average reference for steps ``k .. k+N-1``.

    ``zeta(n)`` averages the aggregate net consumption over the last
    ``min(N, n + 1)`` steps ending at ``n``, so the window is truncated at the
    start of the record.
    """
    w = history.w if isinstance(history, NetConsumptionSeries) else np.atleast_2d(history)
    n_prosumers, length = w.shape
    if k < 0 or N < 1:
        raise ValueError("need k >= 0 and N >= 1")
    if k + N > length:
        raise ValueError(
            f"reference for steps {k}..{k + N - 1} needs {k + N} samples, history has {length}"
        )
    aggregate = w.sum(axis=0)
    zeta = np.empty(N)
    for j, n in enumerate(range(k, k + N)):
        width = min(N, n + 1)
        zeta[j] = aggregate[n + 1 - width : n + 1].sum() / (n_prosumers * width)
    return zeta
