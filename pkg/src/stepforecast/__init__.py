"""Step-count forecasting from self-tracked wearable data.

Cleaning of raw step records, windowed datasets, six regressors written on
numpy, expanding-window model selection and adaptive daily goals.
"""

__version__ = "0.1.0"

from .app import GoalConfig, adaptive_goal, predict_next_day
from .dataset import (FeatureConfig, Scaler, WindowConfig, WindowedDataset, apply_scaler, build_windows,
                      chronological_split, cyclic_pair, featurize, fit_scaler, invert_target)
from .eval import SweepSpec, benchmark, config_sweep, grid_search, mae, mdae, ts_cv_folds
from .ingest import RawRecord, StudyPeriod, SynthConfig, generate_synthetic_corpus, parse_records
from .models import make_model, model_from_document, model_to_document
from .pipeline import DailySeries, HourlyGrid, PipelineConfig, run_pipeline

__all__ = [
    "DailySeries",
    "FeatureConfig",
    "GoalConfig",
    "HourlyGrid",
    "PipelineConfig",
    "RawRecord",
    "Scaler",
    "StudyPeriod",
    "SweepSpec",
    "SynthConfig",
    "WindowConfig",
    "WindowedDataset",
    "adaptive_goal",
    "apply_scaler",
    "benchmark",
    "build_windows",
    "chronological_split",
    "config_sweep",
    "cyclic_pair",
    "featurize",
    "fit_scaler",
    "generate_synthetic_corpus",
    "grid_search",
    "invert_target",
    "mae",
    "make_model",
    "mdae",
    "model_from_document",
    "model_to_document",
    "parse_records",
    "predict_next_day",
    "run_pipeline",
    "ts_cv_folds",
]
