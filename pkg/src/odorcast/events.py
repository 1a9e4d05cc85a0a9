"""Smell-event labels from future-window confidence scores, plus merged event intervals."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from typing import IO, Iterable, Sequence

import numpy as np

from .features import SECONDS_PER_HOUR
from .ingest import SmellReport

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()


@dataclass
class EventLabels:
    hours: np.ndarray
    scores: np.ndarray
    classes: np.ndarray | None = None
    horizon_hours: int = 8
    rating_threshold: int = 2
    score_threshold: float | None = None

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch_hour", "score", "class"])
        classes = self.classes if self.classes is not None else [""] * len(self.hours)
        for h, s, c in zip(self.hours, self.scores, classes):
            writer.writerow([int(h), repr(float(s)), c if c == "" else int(c)])


@dataclass(frozen=True)
class EventInterval:
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("interval start after end")

    def overlaps(self, other: "EventInterval") -> bool:
        return self.start <= other.end and other.start <= self.end


def _filter(reports: Iterable[SmellReport], zipcodes, rating_threshold):
    return [r for r in reports if r.rating > rating_threshold and (zipcodes is None or r.zipcode in zipcodes)]


def confidence_scores(
    reports: Sequence[SmellReport],
    zipcodes: set[str] | None = None,
    horizon: int = 8,
    rating_threshold: int = 2,
    hours: Sequence[int] | None = None,
) -> EventLabels:
    """Sum qualifying ratings over the future window ``[t, t + horizon)`` hours.

    A report qualifies when its rating is strictly above ``rating_threshold``
    and its zipcode is in ``zipcodes`` (``None`` accepts all). Scores are
    evaluated at each epoch hour in ``hours``, defaulting to the span of the
    filtered reports.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1 hour")
    kept = [r for r in reports if zipcodes is None or r.zipcode in zipcodes]
    if not kept:
        raise ValueError("no reports left after zipcode filtering")
    qualifying = _filter(kept, None, rating_threshold)
    if hours is None:
        stamps = [r.timestamp for r in kept]
        hours = np.arange(min(stamps) // SECONDS_PER_HOUR - horizon + 1, max(stamps) // SECONDS_PER_HOUR + 1)
    hours = np.asarray(hours, dtype=np.int64)
    stamps = np.array([r.timestamp for r in qualifying], dtype=np.int64)
    ratings = np.array([r.rating for r in qualifying], dtype=float)
    order = np.argsort(stamps, kind="stable")
    stamps, ratings = stamps[order], ratings[order]
    cum = np.concatenate([[0.0], np.cumsum(ratings)])
    lo = np.searchsorted(stamps, hours * SECONDS_PER_HOUR, side="left")
    hi = np.searchsorted(stamps, (hours + horizon) * SECONDS_PER_HOUR, side="left")
    return EventLabels(hours, cum[hi] - cum[lo], None, horizon, rating_threshold)


def binarize(labels: EventLabels, score_threshold: float = 40) -> EventLabels:
    """Positive class iff the score is strictly greater than the threshold."""
    classes = (np.asarray(labels.scores) > score_threshold).astype(np.int64)
    return EventLabels(labels.hours, labels.scores, classes, labels.horizon_hours, labels.rating_threshold, score_threshold)


def merge_events(classes: Sequence[int], hours: Sequence[int] | None = None) -> list[EventInterval]:
    """Collapse maximal runs of positive entries into inclusive intervals.

    Without ``hours`` the intervals are in index units. With ``hours``, a gap
    between neighbouring hours ends a run even when both sides are positive,
    so filtered (non-contiguous) vectors never merge across the gap.
    """
    c = np.asarray(classes).astype(bool)
    h = np.arange(len(c)) if hours is None else np.asarray(hours, dtype=np.int64)
    if len(h) != len(c):
        raise ValueError("classes and hours differ in length")
    intervals = []
    start = None
    for i in range(len(c)):
        if start is not None and (not c[i] or h[i] - h[i - 1] != 1):
            intervals.append(EventInterval(int(h[start]), int(h[i - 1])))
            start = None
        if c[i] and start is None:
            start = i
    if start is not None:
        intervals.append(EventInterval(int(h[start]), int(h[-1])))
    return intervals


def expand_events(intervals: Iterable[EventInterval], hours: Sequence[int]) -> np.ndarray:
    hours = np.asarray(hours, dtype=np.int64)
    out = np.zeros(len(hours), dtype=np.int64)
    for iv in intervals:
        out[(hours >= iv.start) & (hours <= iv.end)] = 1
    return out


def write_intervals(intervals: Iterable[EventInterval], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["start_hour", "end_hour"])
    for iv in intervals:
        writer.writerow([iv.start, iv.end])


def detect_posthoc_event(
    reports: Iterable[SmellReport],
    window_end: int,
    min_reports: int,
    rating_threshold: int = 2,
    zipcodes: set[str] | None = None,
) -> bool:
    """True when enough qualifying reports arrived in ``(window_end - 1h, window_end]``."""
    if min_reports < 1:
        raise ValueError("min_reports must be at least 1")
    count = sum(
        1
        for r in _filter(reports, zipcodes, rating_threshold)
        if window_end - SECONDS_PER_HOUR < r.timestamp <= window_end
    )
    return count >= min_reports


def local_date(timestamp: int, utc_offset_hours: int = -5) -> date:
    days = (timestamp + utc_offset_hours * SECONDS_PER_HOUR) // 86400
    return date.fromordinal(_EPOCH_ORDINAL + days)


def daily_summary(reports: Iterable[SmellReport], day: date, utc_offset_hours: int = -5) -> int:
    """Number of reports (any rating) submitted on the given local calendar day."""
    return sum(1 for r in reports if local_date(r.timestamp, utc_offset_hours) == day)
