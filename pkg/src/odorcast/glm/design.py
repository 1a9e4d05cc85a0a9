"""Response/predictor tables for the push-notification engagement studies."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date
from typing import IO, Iterable, Sequence

import numpy as np

from ..events import binarize, confidence_scores, local_date, merge_events
from ..features import SECONDS_PER_HOUR, cyclical_time, local_datetime
from ..ingest import ParseError, SmellReport, _parse_timestamp, _rows
from .model import DesignMatrix

log = logging.getLogger(__name__)

NOTIFICATION_TYPES = ("P1", "P2", "P3", "P4", "P5", "P6")
METRICS = ("M1", "M2", "M3", "M4", "M5", "M6")
NOTIFICATION_HEADER = ("timestamp", "type")
INTERACTION_HEADER = ("timestamp", "kind", "user_id")
INTERACTION_KINDS = ("report", "event", "pageview")
AQI_HEADER = ("date", "O3", "PM", "CO", "SO2")
STUDIES = ("before_after", "tp_fn")
TREATMENT = "treatment"
SECONDS_PER_DAY = 86400
_EPOCH = date(1970, 1, 1)


@dataclass(frozen=True)
class Notification:
    timestamp: int
    type: str

    def __post_init__(self):
        if self.type not in NOTIFICATION_TYPES:
            raise ValueError(f"unknown notification type {self.type!r}")


@dataclass(frozen=True)
class Interaction:
    """One logged app interaction. ``kind`` is ``report``, ``event`` or ``pageview``."""

    timestamp: int
    kind: str
    user_id: str

    def __post_init__(self):
        if self.kind not in INTERACTION_KINDS:
            raise ValueError(f"unknown interaction kind {self.kind!r}")


def parse_notifications(source) -> list[Notification]:
    out = []
    for line, row in _rows(source, NOTIFICATION_HEADER):
        try:
            out.append(Notification(_parse_timestamp(row[0], line), row[1].strip()))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(line, str(exc)) from None
    if not out:
        raise ValueError("empty notification log")
    return out


def parse_interactions(source) -> list[Interaction]:
    out = []
    for line, row in _rows(source, INTERACTION_HEADER):
        try:
            out.append(Interaction(_parse_timestamp(row[0], line), row[1].strip(), row[2].strip()))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(line, str(exc)) from None
    return out


def parse_daily_aqi(source) -> dict[date, tuple[float, float, float, float]]:
    """Daily AQI rows keyed by local date; PM is expected pre-aggregated."""
    table = {}
    for line, row in _rows(source, AQI_HEADER):
        try:
            day = date.fromisoformat(row[0].strip())
            values = tuple(float(v) for v in row[1:])
        except ValueError:
            raise ParseError(line, f"bad AQI row {row!r}") from None
        if not all(np.isfinite(values)):
            raise ParseError(line, "AQI values must be finite")
        if day in table:
            raise ParseError(line, f"duplicate date {day}")
        table[day] = values
    return table


def write_notifications(notifications: Iterable[Notification], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(NOTIFICATION_HEADER)
    writer.writerows([n.timestamp, n.type] for n in notifications)


def write_interactions(interactions: Iterable[Interaction], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(INTERACTION_HEADER)
    writer.writerows([i.timestamp, i.kind, i.user_id] for i in interactions)


def write_daily_aqi(aqi: dict[date, tuple[float, float, float, float]], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(AQI_HEADER)
    for day in sorted(aqi):
        writer.writerow([day.isoformat(), *(repr(float(v)) for v in aqi[day])])


def local_midnight(day: date, utc_offset_hours: int) -> int:
    """Epoch seconds at the start of a local calendar day."""
    return (day - _EPOCH).days * SECONDS_PER_DAY - utc_offset_hours * SECONDS_PER_HOUR


class MetricSource:
    """Engagement metrics over half-open windows ``[start, end)`` of epoch seconds.

    M1 counts smell reports and M3 their distinct zipcodes. M2 counts distinct
    users among ``report`` interactions, M4 counts ``event`` interactions, M5
    their distinct users and M6 counts ``pageview`` interactions.
    """

    def __init__(self, reports: Sequence[SmellReport], interactions: Sequence[Interaction] = ()):
        order = sorted(reports, key=lambda r: r.timestamp)
        self._report_ts = np.array([r.timestamp for r in order], dtype=np.int64)
        self._report_zip = [r.zipcode for r in order]
        self._kinds = {}
        for kind in INTERACTION_KINDS:
            rows = sorted((i for i in interactions if i.kind == kind), key=lambda i: i.timestamp)
            self._kinds[kind] = (np.array([i.timestamp for i in rows], dtype=np.int64), [i.user_id for i in rows])
        self.has_interactions = len(interactions) > 0

    def _slice(self, ts: np.ndarray, start: int, end: int) -> slice:
        return slice(int(np.searchsorted(ts, start, "left")), int(np.searchsorted(ts, end, "left")))

    def value(self, metric: str, start: int, end: int) -> int:
        if metric == "M1":
            s = self._slice(self._report_ts, start, end)
            return s.stop - s.start
        if metric == "M3":
            return len(set(self._report_zip[self._slice(self._report_ts, start, end)]))
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        if not self.has_interactions:
            raise ValueError(f"metric {metric} needs an interaction log")
        kind = {"M2": "report", "M4": "event", "M5": "event", "M6": "pageview"}[metric]
        ts, users = self._kinds[kind]
        s = self._slice(ts, start, end)
        if metric in ("M2", "M5"):
            return len(set(users[s]))
        return s.stop - s.start


def classify_tp_fn(
    reports: Sequence[SmellReport],
    notifications: Sequence[Notification],
    zipcodes: set[str] | None = None,
    horizon: int = 8,
    rating_threshold: int = 2,
    score_threshold: float = 40,
) -> tuple[list[int], list[int]]:
    """Timestamps of true positives and false negatives of the predictive (P1) notifications.

    A P1 notification at ``t`` is a true positive when qualifying ratings in
    ``[t, t + horizon)`` sum above the threshold. A false negative is a merged
    hourly smell event with no P1 notification inside its hours; it is dated
    at the event's first hour.
    """
    p1 = sorted(n.timestamp for n in notifications if n.type == "P1")
    qualifying = sorted(
        (r.timestamp, r.rating)
        for r in reports
        if r.rating > rating_threshold and (zipcodes is None or r.zipcode in zipcodes)
    )
    ts = np.array([q[0] for q in qualifying], dtype=np.int64)
    cum = np.concatenate([[0.0], np.cumsum([q[1] for q in qualifying])])
    tp = []
    for t in p1:
        lo = np.searchsorted(ts, t, "left")
        hi = np.searchsorted(ts, t + horizon * SECONDS_PER_HOUR, "left")
        if cum[hi] - cum[lo] > score_threshold:
            tp.append(t)
    labels = binarize(confidence_scores(reports, zipcodes, horizon, rating_threshold), score_threshold)
    p1_arr = np.array(p1, dtype=np.int64)
    fn = []
    for iv in merge_events(labels.classes, labels.hours):
        a, b = iv.start * SECONDS_PER_HOUR, (iv.end + 1) * SECONDS_PER_HOUR
        if not np.any((p1_arr >= a) & (p1_arr < b)):
            fn.append(a)
    return tp, fn


def build_design(
    reports: Sequence[SmellReport],
    interactions: Sequence[Interaction],
    notifications: Sequence[Notification],
    aqi: dict[date, tuple[float, float, float, float]],
    metric: str,
    study: str = "before_after",
    treatment_type: str = "P1",
    window_hours: int = 2,
    bin_offset_hours: int = 0,
    utc_offset_hours: int = -5,
    launch_date: date | None = None,
    zipcodes: set[str] | None = None,
    horizon: int = 8,
    rating_threshold: int = 2,
    score_threshold: float = 40,
    metrics: MetricSource | None = None,
) -> DesignMatrix:
    """Response and predictors for one metric and one sub-study.

    ``before_after`` yields a pre-window row (treatment 0) and a post-window
    row (treatment 1) around each notification of ``treatment_type``.
    ``tp_fn`` yields one row per true positive (treatment 1) or false
    negative (treatment 0), measured ``bin_offset_hours`` after the event
    time. Confounders: flags for other notification types inside the window,
    weekday flag, cyclical hour and month of the window start, elapsed days
    since launch, the metric's daily total, and the day's AQI columns.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}")
    if not notifications:
        raise ValueError("empty notification log")
    if treatment_type not in NOTIFICATION_TYPES:
        raise ValueError(f"unknown notification type {treatment_type!r}")
    if window_hours < 1 or bin_offset_hours < 0:
        raise ValueError("window_hours must be positive and bin_offset_hours non-negative")
    if study == "tp_fn":
        treatment_type = "P1"
    metrics = metrics or MetricSource(reports, interactions)
    width = window_hours * SECONDS_PER_HOUR

    # (window start, anchor time, treatment, group id)
    rows: list[tuple[int, int, int, int]] = []
    if study == "before_after":
        times = sorted(n.timestamp for n in notifications if n.type == treatment_type)
        if not times:
            raise ValueError(f"no {treatment_type} notifications in the log")
        for g, t in enumerate(times):
            rows.append((t - width, t, 0, g))
            rows.append((t, t, 1, g))
    else:
        tp, fn = classify_tp_fn(reports, notifications, zipcodes, horizon, rating_threshold, score_threshold)
        if not tp or not fn:
            raise ValueError(f"tp_fn study needs both groups, got {len(tp)} TP and {len(fn)} FN")
        offset = bin_offset_hours * SECONDS_PER_HOUR
        events = sorted([(t, 1) for t in tp] + [(t, 0) for t in fn])
        for g, (t, treated) in enumerate(events):
            rows.append((t + offset, t, treated, g))

    others = [p for p in NOTIFICATION_TYPES if p != treatment_type]
    note_ts = {p: np.array(sorted(n.timestamp for n in notifications if n.type == p), dtype=np.int64) for p in others}
    if launch_date is None:
        launch_date = local_date(min(n.timestamp for n in notifications), utc_offset_hours)
    launch = local_midnight(launch_date, utc_offset_hours)
    names = [TREATMENT] + others + ["WD", "XH", "YH", "XM", "YM", "E", "M", "O3", "PM", "CO", "SO2"]
    X = np.empty((len(rows), len(names)))
    y = np.empty(len(rows))
    daily_cache: dict[date, int] = {}
    for i, (start, anchor, treated, _) in enumerate(rows):
        end = start + width
        y[i] = metrics.value(metric, start, end)
        flags = [float(np.any((note_ts[p] >= start) & (note_ts[p] < end))) for p in others]
        day = local_date(anchor, utc_offset_hours)
        if day not in aqi:
            raise ValueError(f"daily AQI missing for {day.isoformat()}")
        if day not in daily_cache:
            midnight = local_midnight(day, utc_offset_hours)
            daily_cache[day] = metrics.value(metric, midnight, midnight + SECONDS_PER_DAY)
        start_local = local_datetime(start // SECONDS_PER_HOUR, utc_offset_hours)
        xh, yh, xm, ym = cyclical_time(start_local.hour, start_local.month)
        X[i] = [
            treated,
            *flags,
            float(day.weekday() < 5),
            xh,
            yh,
            xm,
            ym,
            (anchor - launch) / SECONDS_PER_DAY,
            daily_cache[day],
            *aqi[day],
        ]
    meta = {
        "study": study,
        "metric": metric,
        "treatment_type": treatment_type,
        "bin_offset_hours": bin_offset_hours if study == "tp_fn" else 0,
        "groups": [r[3] for r in rows],
        "window_starts": [r[0] for r in rows],
    }
    return DesignMatrix(y, X, names, TREATMENT, meta)


def paired_responses(design: DesignMatrix) -> list[tuple[float, float]]:
    """(pre, post) response pairs of a before/after design, in group order."""
    groups = design.meta.get("groups")
    if design.meta.get("study") != "before_after" or groups is None:
        raise ValueError("paired responses need a before_after design")
    t = design.column(TREATMENT)
    pairs: dict[int, list[float]] = {}
    for g, treated, y in zip(groups, t, design.y):
        pairs.setdefault(g, [0.0, 0.0])[int(treated)] = float(y)
    return [tuple(pairs[g]) for g in sorted(pairs)]


def grouped_responses(design: DesignMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Responses of the untreated and treated rows."""
    t = design.column(TREATMENT).astype(bool)
    return design.y[~t], design.y[t]


def iter_metrics(names: Iterable[str] | None = None) -> list[str]:
    chosen = list(names) if names is not None else list(METRICS)
    bad = [m for m in chosen if m not in METRICS]
    if bad:
        raise ValueError(f"unknown metric {bad[0]!r}")
    return chosen
