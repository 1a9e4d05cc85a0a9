"""Command-line entry point: ``odorcast {predict,interpret,notify-study,stats,summarize}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig
from .evaluate import LeakageError, build_dataset, timeseries_cv, write_summary_csv
from .glm.design import (
    build_design,
    iter_metrics,
    MetricSource,
    parse_daily_aqi,
    parse_interactions,
    parse_notifications,
)
from .glm.model import GlmDivergenceError
from .glm.study import analyze_design
from .ingest import ParseError, parse_sensor_readings, parse_smell_reports, summarize
from .interpret import interpret_events, sweep_dbscan
from .stats import cliffs_delta, mann_whitney_u, spearman_rho, wilcoxon_signed_rank

log = logging.getLogger("odorcast")

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_INPUT = 2


class InputError(ValueError):
    pass


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read(cfg: PipelineConfig, key: str, parser):
    path = cfg.path(key)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    try:
        return parser(path)
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_predictors(cfg: PipelineConfig):
    reports = _read(cfg, "reports", parse_smell_reports)
    readings = _read(cfg, "sensors", parse_sensor_readings)
    return build_dataset(
        reports,
        readings,
        set(cfg.zipcodes) if cfg.zipcodes else None,
        cfg.lag_hours,
        cfg.utc_offset_hours,
        cfg.horizon_hours,
        cfg.rating_threshold,
        cfg.score_threshold,
        set(cfg.channels) if cfg.channels else None,
        set(cfg.stations) if cfg.stations else None,
    )


def cmd_predict(cfg: PipelineConfig) -> int:
    X, labels = _load_predictors(cfg)
    out = cfg.output_dir()
    reports = []
    for approach in cfg.cv.approaches:
        for algorithm in cfg.cv.algorithms:
            rep = timeseries_cv(
                X,
                labels,
                approach,
                algorithm,
                cfg.tree_params.get(approach),
                cfg.cv.fold_hours,
                cfg.cv.train_folds,
                cfg.cv.repeats,
                cfg.master_seed,
                cfg.utc_offset_hours,
                cfg.cv.eval_mode,
                cfg.score_threshold,
                cfg.n_jobs,
            )
            _write(out / f"cv_{approach}_{algorithm}.json", rep.to_json() + "\n")
            reports.append(rep)
            log.info(
                "%s/%s: precision %.3f recall %.3f F %.3f",
                approach,
                algorithm,
                rep.summary["precision"]["mean"],
                rep.summary["recall"]["mean"],
                rep.summary["f_score"]["mean"],
            )
    buf = io.StringIO()
    write_summary_csv(reports, buf)
    _write(out / "cv_summary.csv", buf.getvalue())
    return EXIT_OK


def cmd_interpret(cfg: PipelineConfig) -> int:
    X, labels = _load_predictors(cfg)
    p = cfg.interpret
    if not p.base_columns:
        raise ConfigError("interpret.base_columns is empty")
    missing = [c for c in p.base_columns if c not in X.names]
    if missing:
        raise ConfigError(f"unknown base column {missing[0]!r}")
    out = cfg.output_dir()
    if p.eps_grid and p.min_pts_grid:
        from .features import build_interactions, fit_impute_standardize
        from .trees import UnsupervisedForestProximity

        Z, _ = fit_impute_standardize(build_interactions(X, p.base_columns))
        pos = np.flatnonzero(labels.classes == 1)
        D = UnsupervisedForestProximity(
            n_estimators=p.proximity_trees, random_state=cfg.master_seed, n_jobs=cfg.n_jobs
        ).fit_transform(Z.values[pos])
        _write(out / "eps_sweep.json", _dump_json(sweep_dbscan(D, p.eps_grid, p.min_pts_grid)))
    res = interpret_events(
        X,
        labels.classes,
        p.base_columns,
        p.eps,
        p.min_pts,
        proximity_trees=p.proximity_trees,
        rfe_target=p.rfe_target,
        rfe_step=p.rfe_step,
        rfe_trees=p.rfe_trees,
        min_samples_split=p.min_samples_split,
        test_fraction=p.test_fraction,
        master_seed=cfg.master_seed,
        n_jobs=cfg.n_jobs,
    )
    _write(out / "interpretation.json", _dump_json(res.to_dict()))
    _write(out / "tree.txt", res.tree_text + "\n")
    rows = [[split, repr(m.precision), repr(m.recall), repr(m.f_score)] for split, m in (("train", res.train), ("test", res.test))]
    _write(out / "interpret_metrics.csv", _csv_text(["split", "precision", "recall", "f_score"], rows))
    log.info("root split on %s; cluster covers %.1f%% of positives", res.root_feature, 100 * res.coverage_fraction)
    return EXIT_OK


def _mark(block: dict) -> str:
    s = block["summary"]
    if not s["significant"]:
        return ""
    if not s["consistent"]:
        return "..."
    return {"strong": "strong", "weak": "weak"}.get(s["strength"], "sig")


def cmd_notify_study(cfg: PipelineConfig) -> int:
    notifications = _read(cfg, "notifications", parse_notifications)
    reports = _read(cfg, "reports", parse_smell_reports)
    aqi = _read(cfg, "aqi", parse_daily_aqi)
    ipath = cfg.path("interactions", required=False)
    interactions = _read(cfg, "interactions", parse_interactions) if ipath is not None else []
    n = cfg.notify
    metrics = iter_metrics(n.metrics)
    if not interactions:
        skipped = [m for m in metrics if m not in ("M1", "M3")]
        if skipped:
            log.warning("no interaction log; skipping metrics %s", ", ".join(skipped))
        metrics = [m for m in metrics if m in ("M1", "M3")]
    source = MetricSource(reports, interactions)
    launch = date.fromisoformat(n.launch_date) if n.launch_date else None
    out = cfg.output_dir()
    common = dict(
        window_hours=n.window_hours,
        utc_offset_hours=cfg.utc_offset_hours,
        launch_date=launch,
        zipcodes=set(cfg.zipcodes) if cfg.zipcodes else None,
        horizon=cfg.horizon_hours,
        rating_threshold=cfg.rating_threshold,
        score_threshold=cfg.score_threshold,
        metrics=source,
    )
    blocks = []
    present = {note.type for note in notifications}
    jobs = []
    if "before_after" in n.studies:
        jobs += [("before_after", t, 0) for t in n.types if t in present]
    if "tp_fn" in n.studies:
        jobs += [("tp_fn", "P1", b) for b in n.bin_offsets]
    for study, ptype, offset in jobs:
        for metric in metrics:
            design = build_design(
                reports, interactions, notifications, aqi, metric, study, ptype, bin_offset_hours=offset, **common
            )
            block, av = analyze_design(design, cfg.glm.lambdas, cfg.glm.alphas, cfg.glm.mix, cfg.n_jobs)
            blocks.append(block)
            stem = f"{study}_{ptype}_{metric}" + (f"_bin{offset}" if study == "tp_fn" else "")
            _write(
                out / "added_variable" / f"{stem}.csv",
                _csv_text(["x_residual", "y_residual"], [[repr(float(a)), repr(float(b))] for a, b in av]),
            )
            log.info("%s %s %s: rank p=%.3g", study, ptype, metric, block["rank_test"]["p_value"])
    _write(out / "notify_study.json", _dump_json(blocks))
    rows = [
        [b["study"], b["treatment_type"], b["bin_offset_hours"], b["metric"], repr(b["rank_test"]["p_value"]), _mark(b)]
        for b in blocks
    ]
    _write(out / "notify_summary.csv", _csv_text(["study", "type", "bin_offset_hours", "metric", "rank_p", "mark"], rows))
    series = [
        [
            b["bin_offset_hours"],
            b["metric"],
            "" if b["full"]["coef"] is None else repr(b["full"]["coef"]),
            "" if b["coef_multiplier"] is None else repr(b["coef_multiplier"]),
            "" if b["full"]["p_value"] is None else repr(b["full"]["p_value"]),
            "" if b["full"]["pseudo_r2"] is None else repr(b["full"]["pseudo_r2"]),
        ]
        for b in blocks
        if b["study"] == "tp_fn"
    ]
    if series:
        _write(
            out / "tp_fn_series.csv",
            _csv_text(["bin_offset_hours", "metric", "coef", "multiplier", "p_value", "pseudo_r2"], series),
        )
    return EXIT_OK


def _read_columns(path: Path, columns: Sequence[str]) -> list[np.ndarray]:
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path}: missing column {missing[0]!r}")
        data = {c: [] for c in columns}
        for line, row in enumerate(reader, start=2):
            for c in columns:
                cell = (row[c] or "").strip()
                if cell == "":
                    data[c].append(np.nan)
                    continue
                try:
                    data[c].append(float(cell))
                except ValueError:
                    raise InputError(f"{path}: line {line}: non-numeric {c} value {cell!r}") from None
    return [np.array(data[c]) for c in columns]


def run_stats(test: str, a: np.ndarray, b: np.ndarray) -> dict:
    if test == "wilcoxon":
        keep = ~(np.isnan(a) | np.isnan(b))
        a, b = a[keep], b[keep]
        if np.ptp(a) == 0 and np.ptp(b) == 0:
            raise InputError("both columns are constant")
        res = wilcoxon_signed_rank(list(zip(a, b)))
        out = res.to_dict()
    else:
        a, b = a[~np.isnan(a)], b[~np.isnan(b)]
        if np.ptp(np.r_[a, b]) == 0:
            raise InputError("both columns are constant")
        res = mann_whitney_u(a, b)
        out = res.to_dict()
        out["cliffs_delta"] = cliffs_delta(a, b)
    pooled = np.r_[a, b]
    out["spearman_rho_group"] = spearman_rho(np.r_[np.zeros(len(a)), np.ones(len(b))], pooled)
    out["median_a"], out["median_b"] = float(np.median(a)), float(np.median(b))
    return out


def _stats_table(res: dict) -> str:
    keys = ["method", "statistic", "z", "p_value", "effect_size", "n", "n1", "n2", "median_a", "median_b", "exact"]
    lines = []
    for k in keys + (["cliffs_delta"] if "cliffs_delta" in res else []):
        v = res.get(k)
        if v is None:
            continue
        lines.append(f"{k:<14} {v:.6g}" if isinstance(v, float) else f"{k:<14} {v}")
    return "\n".join(lines) + "\n"


def cmd_stats(cfg: PipelineConfig) -> int:
    if len(cfg.stats.columns) != 2:
        raise ConfigError("stats needs exactly two columns")
    a, b = _read_columns(cfg.path("stats_input"), cfg.stats.columns)
    res = run_stats(cfg.stats.test, a, b)
    res["columns"] = list(cfg.stats.columns)
    out = cfg.output_dir()
    _write(out / "stats.json", _dump_json(res))
    table = _stats_table(res)
    _write(out / "stats.txt", table)
    log.info("\n%s", table.rstrip())
    return EXIT_OK


def cmd_summarize(cfg: PipelineConfig) -> int:
    reports = _read(cfg, "reports", parse_smell_reports)
    readings = _read(cfg, "sensors", parse_sensor_readings)
    summary = summarize(reports, readings)
    _write(cfg.output_dir() / "summary.json", _dump_json(summary.to_dict()))
    log.info("%d reports, %d readings", summary.report_count, summary.reading_count)
    return EXIT_OK


COMMANDS = {
    "predict": cmd_predict,
    "interpret": cmd_interpret,
    "notify-study": cmd_notify_study,
    "stats": cmd_stats,
    "summarize": cmd_summarize,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON pipeline configuration")
    common.add_argument("--out", type=str, help="output directory (overrides paths.output_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
    common.add_argument("--jobs", type=int, help="worker threads (overrides n_jobs)")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    parser = argparse.ArgumentParser(prog="odorcast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("predict", "interpret", "notify-study", "summarize"):
        sub.add_parser(name, parents=[common])
    st = sub.add_parser("stats", parents=[common])
    st.add_argument("--input", type=str, help="CSV with the two sample columns")
    st.add_argument("--columns", nargs=2, metavar=("A", "B"))
    st.add_argument("--test", choices=["wilcoxon", "mann_whitney"])
    return parser


def _configure(args) -> PipelineConfig:
    if args.config is not None:
        cfg = PipelineConfig.load(args.config)
    elif args.command == "stats":
        cfg = PipelineConfig.from_dict({}, Path.cwd())
    else:
        raise ConfigError("--config is required")
    if args.out is not None:
        cfg.paths.output_dir = str(Path(args.out).resolve())
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.jobs is not None:
        cfg.n_jobs = args.jobs
    if args.command == "stats":
        if args.input is not None:
            cfg.paths.stats_input = str(Path(args.input).resolve())
        if args.columns:
            cfg.stats.columns = list(args.columns)
        if args.test:
            cfg.stats.test = args.test
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = _configure(args)
        return COMMANDS[args.command](cfg)
    except (LeakageError, AssertionError, GlmDivergenceError) as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, InputError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}".replace("\n", " "), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
