"""Sliding windows over cleaned days, date features, chronological split and scaling.

    python demos/03_windows_and_features.py
"""
from stepforecast.dataset import (FeatureConfig, WindowConfig, apply_scaler, build_windows, chronological_split,
                                  cyclic_pair, fit_scaler)
from stepforecast.ingest import SynthConfig, generate_synthetic_corpus
from stepforecast.pipeline import PipelineConfig, run_pipeline

records = generate_synthetic_corpus(SynthConfig(n_users=10, n_days=40, seed=2))
grids = run_pipeline(records, PipelineConfig(window_days=3)).grids

# %% Three days of hourly steps predict the fourth day's total.
steps_only = build_windows(grids, WindowConfig(3, "hourly"), FeatureConfig())
print("steps only:", steps_only.X.shape, steps_only.feature_names[:3], "...")

# %% Every slot can carry its own date features; hour and weekday become sin/cos pairs.
rich = build_windows(grids, WindowConfig(3, "hourly"), FeatureConfig.preset("all"))
print("with all date features:", rich.X.shape)
print("per-slot features:", rich.feature_names[:rich.X.shape[1] // 72])
print("cyclic_pair(6, 24) =", cyclic_pair(6, 24))

# %% Daily windows step forward one day at a time.
daily = build_windows(grids, WindowConfig(3, "daily"), FeatureConfig.preset("cyclic"))
print("daily:", daily.X.shape)

# %% Split in time order, then z-score with training statistics only.
train, val, test = chronological_split(steps_only)
print("split sizes:", len(train), len(val), len(test))
print("last train date", max(train.target_dates), "first test date", min(test.target_dates))
scaler = fit_scaler(train)
scaled = apply_scaler(scaler, train)
print(f"scaled train target mean {scaled.y.mean():+.2e}, std {scaled.y.std():.3f}")
