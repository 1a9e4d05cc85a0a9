"""JSON pipeline configuration with explicit seeds and path resolution."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any

from .glm.model import DEFAULT_ALPHAS, DEFAULT_LAMBDAS


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    reports: str | None = None
    sensors: str | None = None
    notifications: str | None = None
    interactions: str | None = None
    aqi: str | None = None
    stats_input: str | None = None
    output_dir: str = "out"


@dataclass
class CvParams:
    fold_hours: int = 168
    train_folds: int = 48
    repeats: int = 1
    eval_mode: str = "issuance"
    approaches: list[str] = field(default_factory=lambda: ["classification", "regression"])
    algorithms: list[str] = field(default_factory=lambda: ["rf", "et"])


@dataclass
class InterpretParams:
    base_columns: list[str] = field(default_factory=list)
    eps: float = 0.5
    min_pts: int = 5
    proximity_trees: int = 100
    rfe_step: int = 50
    rfe_target: int = 30
    rfe_trees: int = 100
    min_samples_split: int = 2
    test_fraction: float = 0.25
    eps_grid: list[float] = field(default_factory=list)
    min_pts_grid: list[int] = field(default_factory=list)


@dataclass
class GlmParams:
    lambdas: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    alphas: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    mix: float = 0.5


@dataclass
class NotifyParams:
    studies: list[str] = field(default_factory=lambda: ["before_after", "tp_fn"])
    metrics: list[str] = field(default_factory=lambda: ["M1", "M2", "M3", "M4", "M5", "M6"])
    types: list[str] = field(default_factory=lambda: ["P1", "P2", "P3", "P4", "P5", "P6"])
    bin_offsets: list[int] = field(default_factory=lambda: [0, 2, 4, 6])
    window_hours: int = 2
    launch_date: str | None = None


@dataclass
class StatsParams:
    test: str = "wilcoxon"
    columns: list[str] = field(default_factory=list)


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    utc_offset_hours: int = -5
    zipcodes: list[str] | None = None
    stations: list[str] | None = None
    channels: list[str] | None = None
    lag_hours: int = 2
    horizon_hours: int = 8
    rating_threshold: int = 2
    score_threshold: float = 40
    master_seed: int = 0
    n_jobs: int = 1
    tree_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    cv: CvParams = field(default_factory=CvParams)
    interpret: InterpretParams = field(default_factory=InterpretParams)
    glm: GlmParams = field(default_factory=GlmParams)
    notify: NotifyParams = field(default_factory=NotifyParams)
    stats: StatsParams = field(default_factory=StatsParams)
    base_dir: str = field(default=".", repr=False)

    _SECTIONS = {
        "paths": Paths,
        "cv": CvParams,
        "interpret": InterpretParams,
        "glm": GlmParams,
        "notify": NotifyParams,
        "stats": StatsParams,
    }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        kwargs = {}
        for key, value in data.items():
            section = cls._SECTIONS.get(key)
            if section is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                names = {f.name for f in fields(section)}
                bad = sorted(set(value) - names)
                if bad:
                    raise ConfigError(f"unknown key {key}.{bad[0]}")
                kwargs[key] = section(**value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a non-negative integer")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be at least 1")
        if self.lag_hours < 0 or self.horizon_hours < 1:
            raise ConfigError("lag_hours must be >= 0 and horizon_hours >= 1")
        for a in self.cv.approaches:
            if a not in ("classification", "regression"):
                raise ConfigError(f"unknown approach {a!r}")
        for a in self.cv.algorithms:
            if a not in ("rf", "et"):
                raise ConfigError(f"unknown algorithm {a!r}")
        if self.stats.test not in ("wilcoxon", "mann_whitney"):
            raise ConfigError(f"unknown stats test {self.stats.test!r}")
        if self.notify.launch_date is not None:
            try:
                date.fromisoformat(self.notify.launch_date)
            except ValueError:
                raise ConfigError(f"bad launch_date {self.notify.launch_date!r}") from None

    def path(self, key: str, required: bool = True) -> Path | None:
        """Resolve a configured path relative to the config file's directory."""
        value = getattr(self.paths, key)
        if value is None:
            if required:
                raise ConfigError(f"paths.{key} is not set")
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def output_dir(self) -> Path:
        return self.path("output_dir")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d
