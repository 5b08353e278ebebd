"""Fixed-length cycle series: loading, seasonal filtering, spacing and trend.

A dataset is an ``N x T`` matrix, one row per cycle, rows ordered by the
integer cycle index ``M``.  On disk it is a CSV with a header naming the
index column (``M``), an optional ``timestamp`` column and the value columns
``t1..tT``.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, NumericalError

WINTER_MONTHS = frozenset({9, 10, 11, 12, 1, 2, 3})


@dataclass(frozen=True)
class CycleSeries:
    values: np.ndarray
    cycle_index: int
    timestamp: str | None = None


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Cycles stacked row-wise, sorted by strictly increasing ``index``.

    ``delta`` records the cumulative spacing applied by :func:`subsample`.
    """

    values: np.ndarray
    index: np.ndarray
    timestamps: tuple | None = None
    delta: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        index = np.asarray(self.index, dtype=np.int64)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (N x T), got shape {values.shape}")
        if index.shape != (values.shape[0],):
            raise DataError("index length does not match the number of series")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain non-finite entries")
        if index.size > 1 and np.any(np.diff(index) <= 0):
            raise DataError("cycle indices must be strictly increasing")
        if self.timestamps is not None and len(self.timestamps) != len(index):
            raise DataError("timestamps length does not match the number of series")
        if self.delta < 1:
            raise DataError("delta must be >= 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "index", index)
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", tuple(self.timestamps))

    @classmethod
    def from_series(cls, series: Iterable[CycleSeries], delta: int = 1):
        series = sorted(series, key=lambda s: s.cycle_index)
        if not series:
            raise DataError("empty dataset")
        idx = [s.cycle_index for s in series]
        if len(set(idx)) != len(idx):
            raise DataError("duplicate cycle_index")
        stamps = [s.timestamp for s in series]
        return cls(
            values=np.vstack([np.asarray(s.values, dtype=float) for s in series]),
            index=np.array(idx),
            timestamps=None if all(t is None for t in stamps) else tuple(stamps),
            delta=delta,
        )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.n

    @property
    def series(self) -> list[CycleSeries]:
        stamps = self.timestamps or (None,) * self.n
        return [
            CycleSeries(self.values[i].copy(), int(self.index[i]), stamps[i])
            for i in range(self.n)
        ]

    def take(self, positions, delta: int | None = None) -> "FunctionalDataset":
        positions = np.asarray(positions, dtype=np.int64)
        stamps = None
        if self.timestamps is not None:
            stamps = tuple(self.timestamps[i] for i in positions)
        return FunctionalDataset(
            self.values[positions],
            self.index[positions],
            stamps,
            self.delta if delta is None else delta,
        )

    def with_values(self, values) -> "FunctionalDataset":
        return FunctionalDataset(values, self.index, self.timestamps, self.delta)


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_dataset`.

    Value columns are those named ``value_prefix`` followed by an integer;
    they are ordered by that integer.
    """

    index_column: str = "M"
    timestamp_column: str = "timestamp"
    value_prefix: str = "t"
    n_steps: int | None = None


@dataclass(frozen=True)
class TrendModel:
    slope: np.ndarray
    intercept: np.ndarray

    def __post_init__(self):
        slope = np.asarray(self.slope, dtype=float)
        intercept = np.asarray(self.intercept, dtype=float)
        if slope.ndim != 1 or slope.shape != intercept.shape:
            raise DataError("slope and intercept must be vectors of equal length")
        if not (np.all(np.isfinite(slope)) and np.all(np.isfinite(intercept))):
            raise NumericalError("trend coefficients are not finite")
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "intercept", intercept)

    @property
    def T(self) -> int:
        return self.slope.size

    def to_dict(self) -> dict:
        return {"slope": self.slope.tolist(), "intercept": self.intercept.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrendModel":
        return cls(np.array(d["slope"], dtype=float), np.array(d["intercept"], dtype=float))


def load_dataset(path, schema: CsvSchema | None = None) -> FunctionalDataset:
    """Read a cycle CSV; rows come back sorted by cycle index.

    Every row with a non-finite or non-numeric cell is reported in a single
    :class:`DataError` so that a bad file can be fixed in one pass.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if schema.index_column not in header:
            raise DataError(f"{path}: missing index column {schema.index_column!r}")
        pattern = re.compile(rf"^{re.escape(schema.value_prefix)}(\d+)$")
        value_cols = sorted(
            ((int(m.group(1)), j) for j, h in enumerate(header) if (m := pattern.match(h))),
        )
        if not value_cols:
            raise DataError(f"{path}: no value columns named {schema.value_prefix}1..")
        if schema.n_steps is not None and len(value_cols) != schema.n_steps:
            raise DataError(
                f"{path}: expected {schema.n_steps} value columns, found {len(value_cols)}"
            )
        i_idx = header.index(schema.index_column)
        i_ts = header.index(schema.timestamp_column) if schema.timestamp_column in header else None

        problems = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                problems.append(f"row {lineno}: expected {len(header)} columns, got {len(row)}")
                continue
            try:
                m = int(row[i_idx])
            except ValueError:
                problems.append(f"row {lineno}: non-integer cycle index {row[i_idx]!r}")
                continue
            try:
                vals = [float(row[j]) for _, j in value_cols]
            except ValueError as exc:
                problems.append(f"row {lineno} (M={m}): non-numeric cell ({exc})")
                continue
            if not all(math.isfinite(v) for v in vals):
                problems.append(f"row {lineno} (M={m}): non-finite value")
                continue
            stamp = row[i_ts].strip() if i_ts is not None else None
            rows.append((m, vals, stamp or None))

    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    if not rows:
        raise DataError(f"{path}: no data rows")
    seen = set()
    for m, _, _ in rows:
        if m in seen:
            raise DataError(f"{path}: duplicate cycle index {m}")
        seen.add(m)
    rows.sort(key=lambda r: r[0])
    stamps = tuple(r[2] for r in rows)
    return FunctionalDataset(
        values=np.array([r[1] for r in rows], dtype=float),
        index=np.array([r[0] for r in rows]),
        timestamps=None if all(s is None for s in stamps) else stamps,
    )


def dataset_csv(ds: FunctionalDataset, schema: CsvSchema | None = None) -> str:
    """CSV text in the layout read by :func:`load_dataset`."""
    schema = schema or CsvSchema()
    header = [schema.index_column]
    if ds.timestamps is not None:
        header.append(schema.timestamp_column)
    header += [f"{schema.value_prefix}{t + 1}" for t in range(ds.T)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(ds.n):
        row = [int(ds.index[i])]
        if ds.timestamps is not None:
            row.append(ds.timestamps[i] or "")
        row += [repr(float(v)) for v in ds.values[i]]
        w.writerow(row)
    return buf.getvalue()


def write_dataset(ds: FunctionalDataset, path, schema: CsvSchema | None = None) -> None:
    Path(path).write_text(dataset_csv(ds, schema))


def _month(stamp: str) -> int:
    return datetime.fromisoformat(stamp.replace("Z", "+00:00")).month


def filter_season(ds: FunctionalDataset, months: Iterable[int] = WINTER_MONTHS) -> FunctionalDataset:
    """Keep the cycles whose timestamp falls in one of ``months`` (1-12)."""
    months = set(months)
    if ds.timestamps is None or any(s is None for s in ds.timestamps):
        raise DataError("seasonal filtering requires a timestamp on every series")
    if not months <= set(range(1, 13)):
        raise DataError(f"months must lie in 1..12, got {sorted(months)}")
    keep = [i for i, s in enumerate(ds.timestamps) if _month(s) in months]
    if not keep:
        raise DataError("seasonal filter removed every series")
    return ds.take(keep)


def subsample(ds: FunctionalDataset, delta: int) -> FunctionalDataset:
    """Keep positions 0, delta, 2*delta, ... of the ordered list."""
    if int(delta) != delta or delta < 1:
        raise DataError(f"delta must be an integer >= 1, got {delta}")
    delta = int(delta)
    return ds.take(np.arange(0, ds.n, delta), delta=ds.delta * delta)


def fit_trend(ds: FunctionalDataset) -> TrendModel:
    """Per time step OLS of the values on the cycle index ``M``."""
    if ds.n < 2:
        raise DataError("trend fitting needs at least two series")
    m = ds.index.astype(float)
    mc = m - m.mean()
    sxx = mc @ mc
    if sxx == 0.0:
        raise NumericalError("all cycle indices equal: singular trend design")
    y = ds.values
    slope = mc @ (y - y.mean(axis=0)) / sxx
    intercept = y.mean(axis=0) - slope * m.mean()
    return TrendModel(slope, intercept)


def _check_T(trend: TrendModel, T: int):
    if trend.T != T:
        raise DataError(f"trend has {trend.T} time steps, data has {T}")


def detrend(ds: FunctionalDataset, trend: TrendModel) -> FunctionalDataset:
    """Return ``X - slope * M``; the intercept stays in the detrended series."""
    _check_T(trend, ds.T)
    return ds.with_values(ds.values - np.outer(ds.index.astype(float), trend.slope))


def retrend(sim, trend: TrendModel, M):
    """Add ``slope * M`` back.

    ``sim`` is a dataset (``M`` defaults to its own index) or an array of
    shape ``(T,)`` / ``(n, T)`` with ``M`` a scalar or a length-``n`` vector.
    """
    if isinstance(sim, FunctionalDataset):
        _check_T(trend, sim.T)
        M = sim.index if M is None else M
        M = np.broadcast_to(np.asarray(M, dtype=float), (sim.n,))
        return sim.with_values(sim.values + np.outer(M, trend.slope))
    arr = np.asarray(sim, dtype=float)
    _check_T(trend, arr.shape[-1])
    M = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        return arr + float(M) * trend.slope
    M = np.broadcast_to(M, (arr.shape[0],))
    return arr + M[:, None] * trend.slope[None, :]


def month_of(stamps: Sequence[str]) -> np.ndarray:
    return np.array([_month(s) for s in stamps])


def year_of(stamps: Sequence[str]) -> np.ndarray:
    return np.array([datetime.fromisoformat(s.replace("Z", "+00:00")).year for s in stamps])
