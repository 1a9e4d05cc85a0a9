"""Readers and writers for the raw smell-report and sensor CSV files."""

from __future__ import annotations

import csv
import io
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

REPORT_HEADER = ("timestamp", "zipcode", "rating", "description", "symptom", "comment")
READING_HEADER = ("timestamp", "station_id", "channel", "value")

_ZIP_RE = re.compile(r"[0-9]{5}")


class ParseError(ValueError):
    """A malformed CSV row. ``line`` is the 1-based physical line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SmellReport:
    timestamp: int
    zipcode: str
    rating: int
    description: str = ""
    symptom: str = ""
    comment: str = ""

    def __post_init__(self):
        if self.rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"rating must be in 1..5, got {self.rating}")
        if not self.timestamp > 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if not _ZIP_RE.fullmatch(self.zipcode):
            raise ValueError(f"zipcode must be five digits, got {self.zipcode!r}")


@dataclass(frozen=True)
class SensorReading:
    timestamp: int
    station_id: str
    channel: str
    value: float | None  # None marks a missing value

    @property
    def missing(self) -> bool:
        return self.value is None

    def __post_init__(self):
        if not self.timestamp > 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if self.value is not None:
            if not math.isfinite(self.value):
                raise ValueError("value must be finite or missing")
            if self.channel == "wind_dir" and not 0 <= self.value < 360:
                raise ValueError(f"wind_dir must lie in [0, 360), got {self.value}")


@dataclass(frozen=True)
class DatasetSummary:
    report_count: int
    reading_count: int
    time_range: tuple[int, int]
    missing_ratio_per_channel: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "report_count": self.report_count,
            "reading_count": self.reading_count,
            "time_range": list(self.time_range),
            "missing_ratio_per_channel": dict(sorted(self.missing_ratio_per_channel.items())),
        }


def _text_stream(source) -> IO[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase) or hasattr(source, "encoding"):
        return source
    if hasattr(source, "read"):
        return io.TextIOWrapper(source, encoding="utf-8", newline="")
    with open(source, encoding="utf-8", newline="") as fh:
        return io.StringIO(fh.read(), newline="")


def _parse_timestamp(text: str, line: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"non-numeric timestamp {text!r}") from None
    if not math.isfinite(value) or value <= 0 or value != int(value):
        raise ParseError(line, f"timestamp must be a positive integer, got {text!r}")
    return int(value)


def _rows(source, header: Sequence[str]):
    reader = csv.reader(_text_stream(source))
    try:
        first = next(reader)
    except StopIteration:
        raise ParseError(1, "missing header row") from None
    if first and first[0].startswith("﻿"):
        first[0] = first[0][1:]
    if tuple(h.strip() for h in first) != tuple(header):
        raise ParseError(1, f"expected header {','.join(header)}")
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(reader.line_num, f"expected {len(header)} columns, got {len(row)}")
        yield reader.line_num, row


def parse_smell_reports(source) -> list[SmellReport]:
    """Parse a smell-report CSV (bytes, path, or file object) into records.

    Rows keep file order. Any malformed row raises :class:`ParseError`
    carrying the offending line number.
    """
    reports = []
    for line, row in _rows(source, REPORT_HEADER):
        ts = _parse_timestamp(row[0], line)
        try:
            rating = int(row[2])
        except ValueError:
            raise ParseError(line, f"non-integer rating {row[2]!r}") from None
        if not 1 <= rating <= 5:
            raise ParseError(line, f"rating {rating} outside 1..5")
        if not _ZIP_RE.fullmatch(row[1]):
            raise ParseError(line, f"zipcode {row[1]!r} is not five digits")
        reports.append(SmellReport(ts, row[1], rating, row[3], row[4], row[5]))
    return reports


def parse_sensor_readings(source) -> list[SensorReading]:
    """Parse a long-format sensor CSV. An empty value field means missing."""
    readings = []
    for line, row in _rows(source, READING_HEADER):
        ts = _parse_timestamp(row[0], line)
        station, channel, raw = row[1], row[2], row[3].strip()
        value = None
        if raw:
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(line, f"non-numeric value {raw!r}") from None
            # float() accepts "nan"/"inf"; only the empty field may mean missing
            if not math.isfinite(value):
                raise ParseError(line, f"non-numeric value {raw!r}")
            if channel == "wind_dir" and not 0 <= value < 360:
                raise ParseError(line, f"wind_dir {value} outside [0, 360)")
        readings.append(SensorReading(ts, station, channel, value))
    return readings


def _format_number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_smell_reports(reports: Iterable[SmellReport], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in reports:
        row = [r.timestamp, r.zipcode, r.rating, r.description, r.symptom, r.comment]
        if any("\x00" in str(v) for v in row[3:]):
            raise ValueError(f"report at {r.timestamp} has a NUL character, which CSV cannot carry")
        writer.writerow(row)


def write_sensor_readings(readings: Iterable[SensorReading], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(READING_HEADER)
    for r in readings:
        writer.writerow([r.timestamp, r.station_id, r.channel, _format_number(r.value)])


def summarize(reports: Sequence[SmellReport], readings: Sequence[SensorReading]) -> DatasetSummary:
    if not reports and not readings:
        raise ValueError("empty dataset")
    stamps = [r.timestamp for r in reports] + [r.timestamp for r in readings]
    missing = defaultdict(int)
    total = defaultdict(int)
    for r in readings:
        total[r.channel] += 1
        missing[r.channel] += r.value is None
    ratios = {ch: missing[ch] / total[ch] for ch in total}
    return DatasetSummary(len(reports), len(readings), (min(stamps), max(stamps)), ratios)
