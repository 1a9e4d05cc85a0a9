"""Event-overlap scoring and rolling weekly cross-validation of smell-event forecasts."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np

from .events import EventLabels, binarize, confidence_scores, merge_events
from .features import FeatureTable, ImputeStandardizer, build_predictors
from .trees import ForestClassifier, ForestRegressor

log = logging.getLogger(__name__)

METRICS = ("precision", "recall", "f_score")
DEFAULT_TREE_COUNTS = {"classification": 1000, "regression": 200}


class LeakageError(AssertionError):
    """A training fold reached into its own test period."""


@dataclass(frozen=True)
class EventPrf:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_score: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "EventPrf":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(tp, fp, fn, p, r, f)


def event_prf(predicted: Sequence[int], truth: Sequence[int], hours: Sequence[int] | None = None) -> EventPrf:
    """Precision, recall and F-score counted over merged events.

    A predicted event is a true positive if it shares at least one hour with
    any ground-truth event, otherwise a false positive. A ground-truth event
    that no predicted event touches is a false negative.
    """
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(truth)} truth")
    pred_iv = merge_events(predicted, hours)
    true_iv = merge_events(truth, hours)
    hit_pred = [False] * len(pred_iv)
    hit_true = [False] * len(true_iv)
    i = j = 0
    while i < len(pred_iv) and j < len(true_iv):
        a, b = pred_iv[i], true_iv[j]
        if a.overlaps(b):
            hit_pred[i] = hit_true[j] = True
        if a.end < b.end:
            i += 1
        else:
            j += 1
    tp = sum(hit_pred)
    return EventPrf.from_counts(tp, len(pred_iv) - tp, len(true_iv) - sum(hit_true))


def local_hour(hours: Sequence[int], utc_offset_hours: int) -> np.ndarray:
    return (np.asarray(hours, dtype=np.int64) + utc_offset_hours) % 24


def daytime_filter(
    hours: Sequence[int],
    utc_offset_hours: int = -5,
    mode: str = "event",
    issuance_end_inclusive: bool = True,
) -> np.ndarray:
    """Indices of hours kept for scoring.

    ``mode="event"`` keeps local hours 5 to 18 (5 am up to 7 pm). ``mode="issuance"``
    keeps forecasts issued from 5 am to 11 am, whose 8-hour horizons end
    inside the daytime window.
    """
    lh = local_hour(hours, utc_offset_hours)
    if mode == "event":
        keep = (lh >= 5) & (lh < 19)
    elif mode == "issuance":
        keep = (lh >= 5) & ((lh <= 11) if issuance_end_inclusive else (lh < 11))
    elif mode == "all":
        keep = np.ones(len(lh), dtype=bool)
    else:
        raise ValueError(f"unknown daytime mode {mode!r}")
    return np.flatnonzero(keep)


def fold_bounds(n_hours: int, fold_hours: int) -> list[tuple[int, int]]:
    """Row ranges ``[start, stop)`` of consecutive folds; a trailing partial fold is kept."""
    return [(s, min(s + fold_hours, n_hours)) for s in range(0, n_hours, fold_hours)]


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, dtype=np.uint64)[0])


@dataclass
class CvReport:
    approach: str
    algorithm: str
    folds: list[dict] = field(default_factory=list)
    runs: list[dict] = field(default_factory=list)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def summary_rows(self) -> list[list]:
        return [[self.approach, self.algorithm, m, self.summary[m]["mean"], self.summary[m]["std"]] for m in METRICS]


SUMMARY_HEADER = ["approach", "algorithm", "metric", "mean", "std"]


def write_summary_csv(reports: Sequence[CvReport], fh: IO[str]) -> None:
    """One row per approach, algorithm and metric with the mean and std over repeats."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for rep in reports:
        for row in rep.summary_rows():
            writer.writerow(row[:3] + [repr(float(v)) for v in row[3:]])


def make_model(approach: str, algorithm: str, params: dict | None, seed: int, n_jobs: int = 1):
    params = dict(params or {})
    params.setdefault("n_estimators", DEFAULT_TREE_COUNTS[approach])
    if approach == "classification":
        return ForestClassifier(algorithm=algorithm, random_state=seed, n_jobs=n_jobs, **params)
    if approach == "regression":
        return ForestRegressor(algorithm=algorithm, random_state=seed, n_jobs=n_jobs, **params)
    raise ValueError(f"unknown approach {approach!r}")


def timeseries_cv(
    X: FeatureTable,
    labels: EventLabels,
    approach: str = "classification",
    algorithm: str = "et",
    tree_params: dict | None = None,
    fold_hours: int = 168,
    train_folds: int = 48,
    repeats: int = 1,
    master_seed: int = 0,
    utc_offset_hours: int = -5,
    eval_mode: str = "issuance",
    score_threshold: float = 40,
    n_jobs: int = 1,
) -> CvReport:
    """Rolling-origin evaluation: train on the previous ``train_folds`` folds, test on the next.

    Imputation and standardisation statistics are refitted on each training
    span. Each repeat reseeds every fold's forest. Run-level precision,
    recall and F-score pool TP/FP/FN over all test folds of the run; the
    summary reports their mean and population standard deviation over runs.
    """
    if not np.array_equal(X.hours, labels.hours):
        raise ValueError("feature and label hours are not aligned")
    classes = labels.classes if labels.classes is not None else binarize(labels, score_threshold).classes
    bounds = fold_bounds(len(X), fold_hours)
    if len(bounds) < train_folds + 1:
        raise ValueError(
            f"insufficient data: need more than {train_folds * fold_hours} hours "
            f"({train_folds + 1} folds of {fold_hours}), have {len(X)}"
        )
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    report = CvReport(
        approach,
        algorithm,
        config={
            "fold_hours": fold_hours,
            "train_folds": train_folds,
            "repeats": repeats,
            "master_seed": master_seed,
            "eval_mode": eval_mode,
            "score_threshold": score_threshold,
            "tree_params": dict(tree_params or {}),
        },
    )
    hours = X.hours
    target = classes if approach == "classification" else np.asarray(labels.scores, dtype=float)
    for r in range(repeats):
        pooled = np.zeros(3, dtype=np.int64)
        for k in range(train_folds, len(bounds)):
            tr0, tr1 = bounds[k - train_folds][0], bounds[k - 1][1]
            te0, te1 = bounds[k]
            if not hours[tr1 - 1] < hours[te0]:
                raise LeakageError(f"fold {k}: training hour {hours[tr1 - 1]} not before test hour {hours[te0]}")
            scaler = ImputeStandardizer().fit(X.values[tr0:tr1], feature_names=X.names)
            seed = derive_seed(master_seed, r, k)
            model = make_model(approach, algorithm, tree_params, seed, n_jobs)
            model.fit(scaler.transform(X.values[tr0:tr1]), target[tr0:tr1])
            pred = model.predict(scaler.transform(X.values[te0:te1]))
            if approach == "regression":
                pred = (pred > score_threshold).astype(np.int64)
            keep = daytime_filter(hours[te0:te1], utc_offset_hours, eval_mode)
            prf = event_prf(pred[keep], classes[te0:te1][keep], hours[te0:te1][keep])
            pooled += (prf.tp, prf.fp, prf.fn)
            report.folds.append(
                {
                    "repeat": r,
                    "fold": k,
                    "seed": seed,
                    "train_hours": [int(hours[tr0]), int(hours[tr1 - 1])],
                    "test_hours": [int(hours[te0]), int(hours[te1 - 1])],
                    "stats_fingerprint": float(np.sum(scaler.mean_) + np.sum(scaler.scale_)),
                    **asdict(prf),
                }
            )
            log.debug("repeat %d fold %d: %s", r, k, prf)
        run = EventPrf.from_counts(*map(int, pooled))
        report.runs.append({"repeat": r, **asdict(run)})
    for m in METRICS:
        vals = np.array([run[m] for run in report.runs])
        report.summary[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return report


def build_dataset(
    reports,
    readings,
    zipcodes: set[str] | None = None,
    lag_hours: int = 2,
    utc_offset_hours: int = -5,
    horizon: int = 8,
    rating_threshold: int = 2,
    score_threshold: float = 40,
    channels: set[str] | None = None,
    stations: set[str] | None = None,
) -> tuple[FeatureTable, EventLabels]:
    """Predictor table and aligned event labels over the sensor hour range."""
    X = build_predictors(readings, lag_hours, utc_offset_hours, channels, stations)
    labels = binarize(confidence_scores(reports, zipcodes, horizon, rating_threshold, X.hours), score_threshold)
    return X, labels


def run_prediction_pipeline(
    reports,
    readings,
    approach: str = "classification",
    algorithm: str = "et",
    *,
    zipcodes: set[str] | None = None,
    lag_hours: int = 2,
    utc_offset_hours: int = -5,
    horizon: int = 8,
    rating_threshold: int = 2,
    score_threshold: float = 40,
    tree_params: dict | None = None,
    fold_hours: int = 168,
    train_folds: int = 48,
    repeats: int = 1,
    master_seed: int = 0,
    eval_mode: str = "issuance",
    n_jobs: int = 1,
) -> CvReport:
    """Ingested records to a cross-validated report for one approach/algorithm pair.

    Regression trains on raw confidence scores and thresholds predictions
    with the same strict rule as the labels before scoring.
    """
    X, labels = build_dataset(
        reports, readings, zipcodes, lag_hours, utc_offset_hours, horizon, rating_threshold, score_threshold
    )
    return timeseries_cv(
        X,
        labels,
        approach,
        algorithm,
        tree_params,
        fold_hours,
        train_folds,
        repeats,
        master_seed,
        utc_offset_hours,
        eval_mode,
        score_threshold,
        n_jobs,
    )
