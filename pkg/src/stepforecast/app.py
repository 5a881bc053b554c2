"""Adaptive daily step goals and single-user next-day prediction."""

from __future__ import annotations

import math
import platform
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._util import canonical_json, sha256_text
from .dataset import FeatureConfig, Scaler, WindowConfig, _as_series, window_features
from .models import model_from_document
from .pipeline import (PipelineConfig, consecutive_runs, deduplicate, impute_zeros, remove_outlier_days,
                       resample)


class InsufficientHistoryError(ValueError):
    def __init__(self, required: int, available: int):
        super().__init__(f"insufficient history: need {required} consecutive clean days "
                         f"ending at the latest day, have {available}")
        self.required = required
        self.available = available


@dataclass(frozen=True)
class GoalConfig:
    uplift: float = 0.10
    floor: int | None = None
    ceiling: int | None = None

    def __post_init__(self):
        if self.uplift < 0:
            raise ValueError("uplift must be >= 0")
        if self.floor is not None and self.ceiling is not None and self.floor > self.ceiling:
            raise ValueError("floor must not exceed ceiling")


def adaptive_goal(predicted_steps: float, config: GoalConfig = GoalConfig()) -> int:
    """Next-day goal: the prediction raised by ``uplift``, rounded half-up, then clamped."""
    if not predicted_steps >= 0:
        raise ValueError("predicted_steps must be a non-negative number")
    goal = math.floor(predicted_steps * (1.0 + config.uplift) + 0.5)
    if config.floor is not None:
        goal = max(goal, config.floor)
    if config.ceiling is not None:
        goal = min(goal, config.ceiling)
    return int(goal)


def preprocessing_document(pipeline_config: PipelineConfig, outlier_bounds, window_config: WindowConfig,
                           feature_config: FeatureConfig, scaler: Scaler) -> dict:
    """Everything :func:`predict_next_day` needs to replay training-time preprocessing."""
    return {
        "pipeline_config": pipeline_config.to_dict(),
        "outlier_bounds": list(outlier_bounds) if outlier_bounds is not None else None,
        "window_config": window_config.to_dict(),
        "feature_config": feature_config.to_dict(),
        "scaler": scaler.to_dict(),
    }


def latest_window(records, preprocessing: dict):
    """Clean one user's records and return ``(series, start index)`` of the latest window.

    Replays deduplication, resampling, the stored training outlier bounds and
    imputation. The study-period and user filters are skipped: new data may
    fall outside the training period, and only the input days are needed.
    """
    pconf = PipelineConfig.from_dict(preprocessing["pipeline_config"])
    wconf = WindowConfig.from_dict(preprocessing["window_config"])
    pconf = replace(pconf, granularity="hourly")
    W = wconf.window_days
    grids = resample(deduplicate(records), pconf)
    if len(grids) > 1:
        raise ValueError("history contains more than one user; pass user_id")
    bounds = preprocessing.get("outlier_bounds")
    if grids and pconf.outlier_removal_enabled and bounds is not None:
        grids = remove_outlier_days(grids, bounds=tuple(bounds))
    if not grids:
        raise InsufficientHistoryError(W, 0)
    grid = grids[0]
    if pconf.imputation_enabled:
        grid = impute_zeros(grid, pconf.active_hours)
    series = _as_series(grid, wconf.granularity)
    a, b = consecutive_runs(series.dates)[-1]
    if b - a < W:
        raise InsufficientHistoryError(W, b - a)
    return series, b - W


def predict_next_day(model_document: dict, records, user_id: str | None = None, model=None) -> float:
    """Predicted step total for the day after the user's latest clean day.

    Negative model outputs are clamped to zero.
    """
    prep = model_document.get("preprocessing")
    if not prep:
        raise ValueError("model document carries no preprocessing section")
    records = [r for r in records if user_id is None or r.user_id == user_id]
    if user_id is None and len({r.user_id for r in records}) > 1:
        raise ValueError("history contains more than one user; pass user_id")
    series, start = latest_window(records, prep)
    wconf = WindowConfig.from_dict(prep["window_config"])
    fconf = FeatureConfig.from_dict(prep["feature_config"])
    x = window_features(series, start, wconf, fconf).reshape(1, -1)
    scaler = Scaler.from_dict(prep["scaler"])
    model = model or model_from_document(model_document)
    pred = float(scaler.inverse_target(model.predict(scaler.transform_features(x)))[0])
    return max(pred, 0.0)


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    cwd: str
    tool: str = "stepforecast"
    tool_version: str = __version__
    python: str = field(default_factory=lambda: platform.python_version())
    numpy: str = field(default_factory=lambda: np.__version__)
    configs: dict = field(default_factory=dict)
    config_hashes: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)       # path -> sha256
    outputs: dict = field(default_factory=dict)      # file name -> sha256
    seeds: dict = field(default_factory=dict)
    started_at: str = field(default_factory=lambda: _now())
    finished_at: str | None = None

    def add_config(self, name: str, config: dict) -> None:
        self.configs[name] = config
        self.config_hashes[name] = sha256_text(canonical_json(config))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
