"""Seeded synthetic inputs with known planted structure, for tests and demonstrations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .events import local_date
from .features import SECONDS_PER_HOUR
from .glm.design import Interaction, Notification, write_daily_aqi, write_interactions, write_notifications
from .glm.model import DesignMatrix
from .ingest import SensorReading, SmellReport, write_sensor_readings, write_smell_reports

STATIONS = ("Lawrenceville", "Liberty", "Parkway")
CHANNELS = ("H2S", "SO2", "wind_dir")
PLANTED_BASE = ("Liberty.H2S", "Lawrenceville.wind_dir_sin")
PLANTED_INTERACTION = "Liberty.H2S*Lawrenceville.wind_dir_sin"
ZIPCODES = ("15201", "15206", "15213", "15217", "15224")
START_HOUR = 420_000  # 2017-11-30, UTC hour index


@dataclass
class SyntheticCity:
    reports: list[SmellReport]
    readings: list[SensorReading]
    episode_starts: list[int]
    hours: np.ndarray


def synthetic_city(weeks: int = 10, seed: int = 0, utc_offset_hours: int = -5, missing_rate: float = 0.01) -> SyntheticCity:
    """Three stations where odor events follow one rule: high Liberty H2S while
    Lawrenceville wind blows from the east (large wind-direction sine).

    Each day may hold an H2S episode starting in the early local morning;
    half of them coincide with easterly wind and trigger bursts of 4-5 rated
    reports a few hours in. Decoy periods have either the H2S episode or the
    easterly wind, never both, and produce no reports.
    """
    rng = np.random.default_rng(seed)
    n = weeks * 168
    hours = np.arange(START_HOUR, START_HOUR + n)
    local = (hours + utc_offset_hours) % 24
    h2s = {s: rng.gamma(2.0, 0.25, n) for s in STATIONS}
    so2 = {s: rng.gamma(2.0, 1.0, n) for s in STATIONS}
    wind = {s: (rng.normal(250, 40, n)) % 360 for s in STATIONS}
    active = np.zeros(n, dtype=bool)
    starts = []
    for day0 in np.flatnonzero(local == 2):
        kind = rng.choice(["event", "h2s_only", "wind_only", "none"], p=[0.3, 0.25, 0.25, 0.2])
        s = day0 + int(rng.integers(0, 3))
        length = int(rng.integers(12, 15))
        span = slice(s, min(s + length, n))
        if kind in ("event", "h2s_only"):
            h2s["Liberty"][span] += rng.uniform(4, 8)
        if kind in ("event", "wind_only"):
            wind["Lawrenceville"][span] = rng.normal(90, 10, span.stop - span.start) % 360
        else:
            wind["Lawrenceville"][span] = rng.normal(270, 10, span.stop - span.start) % 360
        if kind == "event" and s + length <= n:
            active[span] = True
            starts.append(int(hours[s]))

    readings = []
    for i, h in enumerate(hours):
        ts = int(h) * SECONDS_PER_HOUR - int(rng.integers(60, 3000))
        for s in STATIONS:
            for ch, series in (("H2S", h2s), ("SO2", so2), ("wind_dir", wind)):
                value = None if rng.random() < missing_rate else round(float(series[s][i]), 4)
                if ch == "wind_dir" and value is not None:
                    value = value % 360
                readings.append(SensorReading(ts, s, ch, value))

    reports = []
    run = 0
    for i, h in enumerate(hours):
        run = run + 1 if active[i] else 0
        base = int(h) * SECONDS_PER_HOUR
        if run > 5:
            for _ in range(int(rng.integers(3, 5))):
                reports.append(
                    SmellReport(base + int(rng.integers(0, 3600)), str(rng.choice(ZIPCODES)), int(rng.choice([4, 5])))
                )
        if rng.random() < 0.15:
            rating = int(rng.choice([1, 2, 3, 4, 5], p=[0.3, 0.3, 0.2, 0.1, 0.1]))
            reports.append(SmellReport(base + int(rng.integers(0, 3600)), str(rng.choice(ZIPCODES)), rating))
    reports.sort(key=lambda r: r.timestamp)
    return SyntheticCity(reports, readings, starts, hours)


def synthetic_engagement_design(
    n: int = 2000,
    beta: float = 1.16,
    alpha: float = 0.4,
    seed: int = 0,
    n_noise: int = 3,
) -> DesignMatrix:
    """Count response with a binary treatment multiplying the mean by ``exp(beta)``.

    Confounders: weekday flag, cyclical hour, elapsed days (scaled), an AQI
    column that also raises the treatment probability, and ``n_noise`` pure
    noise columns.
    """
    rng = np.random.default_rng(seed)
    wd = (rng.random(n) < 5 / 7).astype(float)
    hour = rng.integers(0, 24, n)
    xh, yh = np.cos(np.pi * hour / 12), np.sin(np.pi * hour / 12)
    e = rng.uniform(0, 3, n)
    aqi = rng.normal(0, 1, n)
    p = 1 / (1 + np.exp(-(0.6 * aqi - 0.2)))
    t = (rng.random(n) < p).astype(float)
    noise = rng.normal(size=(n, n_noise))
    eta = 0.8 + beta * t + 0.3 * wd + 0.25 * xh - 0.2 * yh + 0.15 * e + 0.3 * aqi
    mu = np.exp(eta)
    if alpha > 0:
        y = rng.negative_binomial(1 / alpha, 1 / (1 + alpha * mu))
    else:
        y = rng.poisson(mu)
    X = np.column_stack([t, wd, xh, yh, e, aqi, noise])
    names = ["treatment", "WD", "XH", "YH", "E", "O3"] + [f"noise{k}" for k in range(n_noise)]
    return DesignMatrix(y, X, names, "treatment", {"study": "tp_fn"})


@dataclass
class SyntheticLogs:
    reports: list[SmellReport]
    interactions: list[Interaction]
    notifications: list[Notification]
    aqi: dict[date, tuple[float, float, float, float]]


def synthetic_engagement_logs(
    days: int = 240,
    effect: float = 3.19,
    seed: int = 0,
    utc_offset_hours: int = -5,
) -> SyntheticLogs:
    """App logs where each notification multiplies activity in the following two hours by ``effect``.

    Reports, GA events and pageviews arrive as Poisson processes with a
    daytime profile. P1 notifications accompany half of the synthetic smell
    events (reports rated 5 over several morning hours); the other types are
    scattered at random.
    """
    rng = np.random.default_rng(seed)
    t0 = START_HOUR * SECONDS_PER_HOUR
    n_hours = days * 24
    hours = START_HOUR + np.arange(n_hours)
    local = (hours + utc_offset_hours) % 24
    profile = np.where((local >= 7) & (local <= 22), 1.0, 0.25)

    notifications = []
    reports = []
    for d in range(days):
        day_start = t0 + d * 86400
        for ptype, prob in (("P2", 0.15), ("P3", 0.3), ("P4", 0.3), ("P5", 0.4), ("P6", 0.5)):
            if rng.random() < prob:
                notifications.append(Notification(day_start + int(rng.integers(0, 86400)), ptype))
        if rng.random() < 0.4:
            # smell event: ~5 hours of rated-5 reports starting in the local morning
            local_start = int(rng.integers(6, 12))
            first = day_start + ((local_start - utc_offset_hours) % 24) * SECONDS_PER_HOUR
            for k in range(5):
                for _ in range(4):
                    ts = first + k * SECONDS_PER_HOUR + int(rng.integers(0, 3600))
                    reports.append(SmellReport(ts, str(rng.choice(ZIPCODES)), 5))
            if rng.random() < 0.5:
                lead = int(rng.integers(1, 4)) * SECONDS_PER_HOUR
                notifications.append(Notification(first - lead + int(rng.integers(0, 1800)), "P1"))
    boost = np.ones(n_hours)
    for note in notifications:
        k = (note.timestamp - t0) // SECONDS_PER_HOUR
        boost[k : k + 2] *= effect
    interactions = []
    for i in range(n_hours):
        base = t0 + i * SECONDS_PER_HOUR
        for kind, rate in (("report", 0.6), ("event", 4.0), ("pageview", 2.0)):
            for _ in range(rng.poisson(rate * profile[i] * boost[i])):
                ts = base + int(rng.integers(0, 3600))
                interactions.append(Interaction(ts, kind, f"u{int(rng.integers(0, 60))}"))
                if kind == "report":
                    reports.append(SmellReport(ts, str(rng.choice(ZIPCODES)), int(rng.integers(1, 4))))
    first_day = local_date(t0 - 86400, utc_offset_hours)
    aqi = {
        first_day + timedelta(days=k): tuple(round(float(v), 1) for v in rng.uniform([20, 20, 5, 5], [80, 90, 30, 40]))
        for k in range(days + 3)
    }
    notifications.sort(key=lambda n: (n.timestamp, n.type))
    reports.sort(key=lambda r: r.timestamp)
    interactions.sort(key=lambda i: (i.timestamp, i.kind, i.user_id))
    return SyntheticLogs(reports, interactions, notifications, aqi)


def write_workspace(directory, weeks: int = 10, days: int = 240, seed: int = 0) -> Path:
    """Write a synthetic city and its app logs as CSV files plus a ``config.json``.

    The config points at the files by relative path, names the planted base
    columns for interpretation and uses a short training window sized for the
    synthetic span. Returns the config path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    city = synthetic_city(weeks=weeks, seed=seed)
    logs = synthetic_engagement_logs(days=days, seed=seed)
    files = {
        "reports.csv": (write_smell_reports, city.reports),
        "sensors.csv": (write_sensor_readings, city.readings),
        "notify_reports.csv": (write_smell_reports, logs.reports),
        "notifications.csv": (write_notifications, logs.notifications),
        "interactions.csv": (write_interactions, logs.interactions),
        "aqi.csv": (write_daily_aqi, logs.aqi),
    }
    for name, (writer, data) in files.items():
        with open(directory / name, "w", encoding="utf-8", newline="") as fh:
            writer(data, fh)
    config = {
        "paths": {"reports": "reports.csv", "sensors": "sensors.csv", "output_dir": "out"},
        "master_seed": seed,
        "tree_params": {"classification": {"n_estimators": 50}, "regression": {"n_estimators": 50}},
        "cv": {"train_folds": 4, "approaches": ["classification"], "algorithms": ["et"]},
        "interpret": {
            "base_columns": list(PLANTED_BASE) + ["Lawrenceville.wind_dir_cos", "Parkway.H2S", "Liberty.SO2"],
            "eps": 0.7,
            "min_pts": 5,
            "proximity_trees": 100,
            "rfe_step": 5,
            "rfe_target": 5,
            "rfe_trees": 50,
            "min_samples_split": 10,
        },
    }
    notify = dict(config, paths={
        "reports": "notify_reports.csv",
        "notifications": "notifications.csv",
        "interactions": "interactions.csv",
        "aqi": "aqi.csv",
        "output_dir": "out_notify",
    })
    path = directory / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    (directory / "notify_config.json").write_text(json.dumps(notify, indent=2) + "\n", encoding="utf-8")
    return path
