"""Deduplicate, resample to hourly grids, drop outlier days, keep users with enough history.

    python demos/02_cleaning_pipeline.py
"""
from dataclasses import replace

import numpy as np

from stepforecast.ingest import SynthConfig, generate_synthetic_corpus
from stepforecast.pipeline import PipelineConfig, run_pipeline

records = generate_synthetic_corpus(SynthConfig(n_users=20, n_days=45, seed=11, duplicate_rate=0.05,
                                                outlier_day_rate=0.04, nowear_day_rate=0.05,
                                                coarse_record_rate=0.05))

# %% Default run: coarse records are dropped, bounds at the 5th/95th percentile.
base = PipelineConfig(window_days=3)
result = run_pipeline(records, base)
for k, v in result.stats.to_dict().items():
    print(f"{k:>28}: {v}")

# %% One user's grid: 24 hourly slots per retained day.
grid = result.grids[0]
print(grid.user_id, len(grid.dates), "days; first day total", int(grid.values[0].sum()))
print("hour of day with most steps:", int(np.argmax(grid.values.sum(axis=0))))

# %% Coarse records can instead be split evenly across the hours they cover.
# Day totals change, so the outlier bounds move too.
split = run_pipeline(records, replace(base, coarse_record_policy="split"))
print("records split:", split.stats.coarse_records_split, " bounds:", split.outlier_bounds)

# %% Imputing no-wear hours inside 08:00-22:00 with the day's median non-zero hour.
imputed = run_pipeline(records, replace(base, imputation_enabled=True))
print("slots imputed:", imputed.stats.slots_imputed)

# %% Daily granularity collapses each day to one total.
daily = run_pipeline(records, replace(base, granularity="daily"))
print("daily series of first user:", daily.grids[0].day_totals[:7].tolist())
