"""Hourly predictor table construction.

Hour indices are integer hours since the Unix epoch. The value of a column at
hour ``t`` summarises readings with timestamps in ``(3600(t-1), 3600t]``.
Missing cells are NaN until imputed.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ingest import SensorReading

SECONDS_PER_HOUR = 3600


@dataclass
class FeatureTable:
    """Named feature columns aligned to consecutive epoch hours."""

    hours: np.ndarray
    names: list[str]
    values: np.ndarray
    standardization: dict[str, tuple[float, float]] | None = field(default=None)

    def __post_init__(self):
        self.hours = np.asarray(self.hours, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.hours), len(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate column names")
        if len(self.hours) > 1 and np.any(np.diff(self.hours) != 1):
            raise ValueError("hours must be strictly increasing in steps of one")

    def __len__(self):
        return len(self.hours)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.names.index(n) for n in names]
        return FeatureTable(self.hours, list(names), self.values[:, idx])

    def rows(self, start: int, stop: int) -> "FeatureTable":
        return FeatureTable(self.hours[start:stop], list(self.names), self.values[start:stop])

    def with_columns(self, names: Sequence[str], block: np.ndarray) -> "FeatureTable":
        block = np.asarray(block, dtype=float).reshape(len(self.hours), len(names))
        return FeatureTable(self.hours, self.names + list(names), np.hstack([self.values, block]))

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch_hour", *self.names])
        for h, row in zip(self.hours, self.values):
            writer.writerow([int(h), *("" if math.isnan(v) else repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, fh: IO[str]) -> "FeatureTable":
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "epoch_hour":
            raise ValueError("first column must be epoch_hour")
        hours, rows = [], []
        for row in reader:
            hours.append(int(row[0]))
            rows.append([float(v) if v else math.nan for v in row[1:]])
        values = np.array(rows, dtype=float).reshape(len(hours), len(header) - 1)
        return cls(np.array(hours), header[1:], values)


def resample_hourly(
    readings: Iterable[SensorReading],
    channels: set[str] | None = None,
    stations: set[str] | None = None,
    hours: Sequence[int] | None = None,
) -> FeatureTable:
    """Average readings into hourly ``station.channel`` columns.

    ``None`` for ``channels`` or ``stations`` keeps everything. Hours without a
    present reading for a column stay NaN; the hour range spans the matched
    readings unless ``hours`` is given.
    """
    if channels is not None and not channels or stations is not None and not stations:
        raise ValueError("channel and station filters must be nonempty")
    sums: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(lambda: [0.0, 0]))
    seen_hours = []
    for r in readings:
        if channels is not None and r.channel not in channels:
            continue
        if stations is not None and r.station_id not in stations:
            continue
        hour = -(-r.timestamp // SECONDS_PER_HOUR)  # ceil: (t-3600, t] belongs to t
        seen_hours.append(hour)
        cell = sums[f"{r.station_id}.{r.channel}"][hour]
        if r.value is not None:
            cell[0] += r.value
            cell[1] += 1
    if not seen_hours:
        raise ValueError("no readings match the station/channel filter")
    if hours is None:
        hours = np.arange(min(seen_hours), max(seen_hours) + 1)
    hours = np.asarray(hours, dtype=np.int64)
    names = sorted(sums)
    values = np.full((len(hours), len(names)), np.nan)
    pos = {int(h): i for i, h in enumerate(hours)}
    for j, name in enumerate(names):
        for hour, (total, count) in sums[name].items():
            i = pos.get(hour)
            if i is not None and count:
                values[i, j] = total / count
    return FeatureTable(hours, names, values)


@dataclass(frozen=True)
class WindComponents:
    x: float
    y: float


def decompose_wind(direction_deg: float) -> WindComponents:
    if not 0 <= direction_deg < 360:
        raise ValueError(f"wind direction {direction_deg} outside [0, 360)")
    rad = math.radians(direction_deg)
    return WindComponents(math.cos(rad), math.sin(rad))


def decompose_wind_columns(table: FeatureTable, suffix: str = "wind_dir") -> FeatureTable:
    """Replace every ``*.wind_dir`` column by ``*.wind_dir_cos`` and ``*.wind_dir_sin``."""
    names, cols = [], []
    for j, name in enumerate(table.names):
        col = table.values[:, j]
        if name.split(".")[-1] != suffix:
            names.append(name)
            cols.append(col)
            continue
        present = ~np.isnan(col)
        if np.any((col[present] < 0) | (col[present] >= 360)):
            raise ValueError(f"{name} has angles outside [0, 360)")
        rad = np.radians(col)
        names += [f"{name}_cos", f"{name}_sin"]
        cols += [np.cos(rad), np.sin(rad)]
    return FeatureTable(table.hours, names, np.column_stack(cols) if cols else table.values[:, :0])


def add_lags(table: FeatureTable, lag_hours: int) -> FeatureTable:
    """Append ``name.lag{k}`` for k = 1..lag_hours after all original columns."""
    if lag_hours < 1:
        raise ValueError("lag_hours must be at least 1")
    n = len(table)
    blocks, names = [], []
    for k in range(1, lag_hours + 1):
        shifted = np.full_like(table.values, np.nan)
        if k < n:
            shifted[k:] = table.values[:-k]
        blocks.append(shifted)
        names += [f"{c}.lag{k}" for c in table.names]
    return table.with_columns(names, np.hstack(blocks))


def local_datetime(epoch_hour: int, utc_offset_hours: int) -> datetime:
    return datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(hours=int(epoch_hour) + utc_offset_hours)


def add_calendar(table: FeatureTable, utc_offset_hours: int = -5) -> FeatureTable:
    """Append ``day_of_week`` (0=Monday), ``hour_of_day`` and ``day_of_month``."""
    if len(table) == 0:
        raise ValueError("table is empty")
    local = table.hours + utc_offset_hours
    days = np.floor_divide(local, 24)
    dow = (days + 3) % 7  # 1970-01-01 was a Thursday
    hod = local - days * 24
    dom = np.array([local_datetime(h, utc_offset_hours).day for h in table.hours])
    return table.with_columns(["day_of_week", "hour_of_day", "day_of_month"], np.column_stack([dow, hod, dom]))


def cyclical_time(hour: int, month: int) -> tuple[float, float, float, float]:
    """Cosine/sine encodings of hour of day (period 24) and month (period 12)."""
    if not 0 <= hour <= 23:
        raise ValueError(f"hour {hour} outside 0..23")
    if not 1 <= month <= 12:
        raise ValueError(f"month {month} outside 1..12")
    h = math.pi * hour / 12
    m = math.pi * month / 6
    return math.cos(h), math.sin(h), math.cos(m), math.sin(m)


class ImputeStandardizer(TransformerMixin, BaseEstimator):
    """Mean-impute missing cells, then scale columns to zero mean and unit variance.

    Statistics come from ``fit`` data only, so a fitted instance can be applied
    to later folds without leakage. Variance uses the population (1/n)
    convention; constant columns keep scale 1.

    Attributes
    ----------
    impute_ : ndarray of shape (n_features,)
        Per-column mean over observed training values.
    mean_, scale_ : ndarray of shape (n_features,)
        Location and scale applied after imputation.
    """

    def fit(self, X, y=None, feature_names=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need a 2-D array with at least two rows")
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        observed = ~np.isnan(X)
        empty = np.flatnonzero(~observed.any(axis=0))
        if empty.size:
            raise ValueError(f"column {names[empty[0]]!r} is entirely missing in training data")
        counts = observed.sum(axis=0)
        self.impute_ = np.where(observed, X, 0.0).sum(axis=0) / counts
        filled = np.where(observed, X, self.impute_)
        self.mean_ = filled.mean(axis=0)
        std = filled.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.feature_names_in_ = np.array(names, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape}")
        filled = np.where(np.isnan(X), self.impute_, X)
        return (filled - self.mean_) / self.scale_

    def stats(self) -> dict[str, dict[str, float]]:
        check_is_fitted(self, "mean_")
        return {
            str(n): {"mean": float(m), "std": float(s), "impute": float(i)}
            for n, m, s, i in zip(self.feature_names_in_, self.mean_, self.scale_, self.impute_)
        }

    def to_json(self) -> str:
        return json.dumps(self.stats(), sort_keys=True)


def fit_impute_standardize(train: FeatureTable) -> tuple[FeatureTable, ImputeStandardizer]:
    scaler = ImputeStandardizer().fit(train.values, feature_names=train.names)
    out = FeatureTable(train.hours, list(train.names), scaler.transform(train.values))
    out.standardization = {n: (float(m), float(s)) for n, m, s in zip(train.names, scaler.mean_, scaler.scale_)}
    return out, scaler


def apply_stats(test: FeatureTable, scaler: ImputeStandardizer) -> FeatureTable:
    fitted = list(scaler.feature_names_in_)
    unknown = [n for n in test.names if n not in fitted]
    if unknown:
        raise ValueError(f"column {unknown[0]!r} has no fitted statistics")
    if len(test.names) != len(fitted):
        raise ValueError("test columns do not match fitted columns")
    aligned = test.select(fitted)
    return FeatureTable(test.hours, fitted, scaler.transform(aligned.values))


def interaction_names(base_columns: Sequence[str]) -> list[str]:
    names = list(base_columns)
    for i, a in enumerate(base_columns):
        for b in base_columns[i:]:
            names.append(f"{a}*{b}")
    return names


class PairwiseInteractions(TransformerMixin, BaseEstimator):
    """Append every unordered pairwise product (squares included) of the input columns."""

    def fit(self, X, y=None):
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        i, j = np.triu_indices(X.shape[1])
        return np.hstack([X, X[:, i] * X[:, j]])


def build_interactions(table: FeatureTable, base_columns: Sequence[str]) -> FeatureTable:
    if len(set(base_columns)) != len(base_columns):
        raise ValueError("duplicate base column names")
    base = table.select(base_columns)
    values = PairwiseInteractions().fit_transform(base.values)
    return FeatureTable(table.hours, interaction_names(base_columns), values)


def lagged_roster(columns: Sequence[str], max_lag: int) -> list[str]:
    """``columns`` followed by their lag-1..max_lag names, grouped by column."""
    roster = []
    for c in columns:
        roster.append(c)
        roster += [f"{c}.lag{k}" for k in range(1, max_lag + 1)]
    return roster


def build_predictors(
    readings: Iterable[SensorReading],
    lag_hours: int = 2,
    utc_offset_hours: int = -5,
    channels: set[str] | None = None,
    stations: set[str] | None = None,
    hours: Sequence[int] | None = None,
) -> FeatureTable:
    """Predictor table built from raw sensor readings in one pass."""
    table = decompose_wind_columns(resample_hourly(readings, channels, stations, hours))
    if lag_hours:
        table = add_lags(table, lag_hours)
    return add_calendar(table, utc_offset_hours)
