"""Cleaning stages for self-tracked step records.

Stages run in a fixed order::

    deduplicate -> filter_study_period -> resample -> remove_outlier_days
        -> filter_users -> impute_zeros

Every stage other than :func:`remove_outlier_days` works one user at a time.
Outlier thresholds are quantiles of the day totals of *all* users.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from datetime import date, timedelta
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .ingest import RawRecord, StudyPeriod

GRID_FORMAT = "stepforecast.grids"
GRID_FORMAT_VERSION = 1
ONE_HOUR = timedelta(hours=1)


@dataclass(frozen=True)
class PipelineConfig:
    study_period: StudyPeriod | None = None
    granularity: str = "hourly"
    outlier_q: float = 0.05
    outlier_removal_enabled: bool = True
    coarse_record_policy: str = "drop"
    imputation_enabled: bool = False
    active_hours: tuple[int, int] = (8, 22)
    window_days: int = 3

    def __post_init__(self):
        if self.granularity not in ("hourly", "daily"):
            raise ValueError(f"granularity must be hourly or daily, got {self.granularity!r}")
        if not 0.0 < self.outlier_q < 0.5:
            raise ValueError("outlier_q must lie in (0, 0.5)")
        if self.coarse_record_policy not in ("drop", "split"):
            raise ValueError("coarse_record_policy must be drop or split")
        start, end = self.active_hours
        if not 0 <= start < end <= 24:
            raise ValueError("active_hours must satisfy 0 <= start < end <= 24")
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        object.__setattr__(self, "active_hours", (int(start), int(end)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["study_period"] = self.study_period.to_dict() if self.study_period else None
        d["active_hours"] = list(self.active_hours)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if d.get("study_period") is not None:
            d["study_period"] = StudyPeriod.from_dict(d["study_period"])
        if "active_hours" in d:
            d["active_hours"] = tuple(d["active_hours"])
        return cls(**d)


@dataclass
class HourlyGrid:
    """One user's per-hour step counts; absent slots hold 0 with mask False."""

    user_id: str
    dates: list[date]
    values: np.ndarray          # (n_days, 24) int64
    mask: np.ndarray            # (n_days, 24) bool

    granularity = "hourly"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64).reshape(-1, 24)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1, 24)

    def __len__(self):
        return len(self.dates)

    def totals(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def select(self, keep) -> "HourlyGrid":
        keep = np.asarray(keep, dtype=bool)
        return HourlyGrid(self.user_id, [d for d, k in zip(self.dates, keep) if k],
                          self.values[keep], self.mask[keep])

    def to_daily(self) -> "DailySeries":
        return DailySeries(self.user_id, list(self.dates), self.totals())

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "dates": [d.isoformat() for d in self.dates],
                "values": self.values.tolist(), "mask": self.mask.astype(int).tolist()}

    def __eq__(self, other):
        return (isinstance(other, HourlyGrid) and self.user_id == other.user_id
                and self.dates == other.dates and np.array_equal(self.values, other.values)
                and np.array_equal(self.mask, other.mask))


@dataclass
class DailySeries:
    user_id: str
    dates: list[date]
    day_totals: np.ndarray      # (n_days,) int64

    granularity = "daily"

    def __post_init__(self):
        self.day_totals = np.asarray(self.day_totals, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.dates)

    def totals(self) -> np.ndarray:
        return self.day_totals

    def select(self, keep) -> "DailySeries":
        keep = np.asarray(keep, dtype=bool)
        return DailySeries(self.user_id, [d for d, k in zip(self.dates, keep) if k], self.day_totals[keep])

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "dates": [d.isoformat() for d in self.dates],
                "totals": self.day_totals.tolist()}

    def __eq__(self, other):
        return (isinstance(other, DailySeries) and self.user_id == other.user_id
                and self.dates == other.dates and np.array_equal(self.day_totals, other.day_totals))


@dataclass
class PipelineStats:
    records_in: int = 0
    records_after_dedup: int = 0
    records_after_period: int = 0
    coarse_records_dropped: int = 0
    coarse_records_split: int = 0
    users_resampled: int = 0
    user_days_resampled: int = 0
    outlier_bounds: tuple[float, float] | None = None
    outlier_days_dropped: int = 0
    users_before_filter: int = 0
    users_after_filter: int = 0
    days_dropped_by_user_filter: int = 0
    slots_imputed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.outlier_bounds is not None:
            d["outlier_bounds"] = list(self.outlier_bounds)
        return d


@dataclass
class PipelineResult:
    grids: list
    stats: PipelineStats
    config: PipelineConfig
    outlier_bounds: tuple[float, float] | None = None


# ---------------------------------------------------------------------------
# stages

def deduplicate(records: Sequence[RawRecord]) -> list[RawRecord]:
    """Keep one record per (user, start, end); the largest step count wins.

    The survivor takes the position of the first occurrence of its key.
    """
    slot: dict[tuple, int] = {}
    out: list[RawRecord] = []
    for rec in records:
        key = (rec.user_id, rec.start_time, rec.end_time)
        i = slot.get(key)
        if i is None:
            slot[key] = len(out)
            out.append(rec)
        elif rec.steps > out[i].steps:
            out[i] = rec
    return out


def filter_study_period(records: Iterable[RawRecord], period: StudyPeriod | None) -> list[RawRecord]:
    if period is None:
        return list(records)
    return [r for r in records if period.start_date <= r.start_time.date() <= period.end_date]


def resample(records: Iterable[RawRecord], config: PipelineConfig) -> list:
    """Bucket records into hourly grids (or daily series), ordered by user id.

    Records lasting at most one hour land whole in the bucket of their start
    hour. Longer records are dropped, or with ``coarse_record_policy="split"``
    spread evenly over the active hours of their start date; those fractional
    shares are summed exactly and rounded half-up once per bucket.
    """
    return _resample_into(records, config, PipelineStats())


def _resample_into(records, config: PipelineConfig, stats: PipelineStats) -> list:
    start_h, end_h = config.active_hours
    n_active = end_h - start_h
    ints: dict[str, dict[date, np.ndarray]] = defaultdict(dict)
    masks: dict[str, dict[date, np.ndarray]] = defaultdict(dict)
    fracs: dict[tuple, Fraction] = defaultdict(Fraction)

    def day_arrays(user, day):
        row = ints[user].get(day)
        if row is None:
            row = ints[user][day] = np.zeros(24, dtype=np.int64)
            masks[user][day] = np.zeros(24, dtype=bool)
        return row, masks[user][day]

    for rec in records:
        if rec.end_time - rec.start_time <= ONE_HOUR:
            day = rec.start_time.date()
            row, m = day_arrays(rec.user_id, day)
            row[rec.start_time.hour] += rec.steps
            m[rec.start_time.hour] = True
        elif config.coarse_record_policy == "split":
            day = rec.start_time.date()
            _, m = day_arrays(rec.user_id, day)
            share = Fraction(rec.steps, n_active)
            for h in range(start_h, end_h):
                fracs[(rec.user_id, day, h)] += share
                m[h] = True
            stats.coarse_records_split += 1
        else:
            stats.coarse_records_dropped += 1

    for (user, day, h), value in sorted(fracs.items()):
        ints[user][day][h] += math.floor(value + Fraction(1, 2))

    grids = []
    for user in sorted(ints):
        days = sorted(ints[user])
        grid = HourlyGrid(user, days,
                          np.array([ints[user][d] for d in days]).reshape(-1, 24),
                          np.array([masks[user][d] for d in days]).reshape(-1, 24))
        grids.append(grid.to_daily() if config.granularity == "daily" else grid)
        stats.user_days_resampled += len(days)
    stats.users_resampled = len(grids)
    return grids


def outlier_bounds(grids: Sequence, q: float = 0.05) -> tuple[float, float] | None:
    """Linear-interpolation q and 1-q quantiles of all user-day totals."""
    totals = [g.totals() for g in grids if len(g)]
    if not totals:
        return None
    allt = np.concatenate(totals).astype(float)
    lo, hi = np.quantile(allt, [q, 1.0 - q], method="linear")
    return float(lo), float(hi)


def remove_outlier_days(grids: Sequence, q: float = 0.05,
                        bounds: tuple[float, float] | None = None) -> list:
    """Drop user-days whose total lies outside ``[Q(q), Q(1-q)]``.

    ``bounds`` overrides the thresholds, which is how the training-time cut
    is replayed on new data. Users left without days are removed.
    """
    if bounds is None:
        bounds = outlier_bounds(grids, q)
        if bounds is None:
            return list(grids)
    lo, hi = bounds
    out = []
    for g in grids:
        t = g.totals()
        kept = g.select((t >= lo) & (t <= hi))
        if len(kept):
            out.append(kept)
    return out


def consecutive_runs(dates: Sequence[date]) -> list[tuple[int, int]]:
    """Half-open index ranges of maximal runs of consecutive calendar days."""
    runs = []
    start = 0
    for i in range(1, len(dates) + 1):
        if i == len(dates) or (dates[i] - dates[i - 1]).days != 1:
            runs.append((start, i))
            start = i
    return runs if dates else []


def filter_users(grids: Sequence, window_days: int) -> list:
    """Keep only days inside runs of at least ``window_days + 1`` consecutive days.

    A window needs ``window_days`` input days plus the day it predicts; users
    with no such run are removed.
    """
    need = window_days + 1
    out = []
    for g in grids:
        keep = np.zeros(len(g), dtype=bool)
        for a, b in consecutive_runs(g.dates):
            if b - a >= need:
                keep[a:b] = True
        if keep.any():
            out.append(g.select(keep))
    return out


def median_nonzero(values: np.ndarray) -> int | None:
    nz = values[values != 0]
    if nz.size == 0:
        return None
    return int(math.floor(np.median(nz) + 0.5))


def impute_zeros(grid: HourlyGrid, active_hours=(8, 22),
                 strategy: str | Callable[[np.ndarray], int | None] = "median") -> HourlyGrid:
    """Fill zero buckets inside active hours; night buckets are left alone.

    The default fill is the user's median non-zero count for that hour of
    day (rounded half-up). Hours with no non-zero history stay at zero.
    """
    if strategy == "median":
        strategy = median_nonzero
    start_h, end_h = active_hours
    values = grid.values.copy()
    for h in range(start_h, end_h):
        col = grid.values[:, h]
        zeros = col == 0
        if not zeros.any():
            continue
        fill = strategy(col)
        if fill is not None:
            values[zeros, h] = fill
    return HourlyGrid(grid.user_id, list(grid.dates), values, grid.mask.copy())


def run_pipeline(records: Sequence[RawRecord], config: PipelineConfig | None = None) -> PipelineResult:
    config = config or PipelineConfig()
    stats = PipelineStats(records_in=len(records))

    recs = deduplicate(records)
    stats.records_after_dedup = len(recs)
    recs = filter_study_period(recs, config.study_period)
    stats.records_after_period = len(recs)

    grids = _resample_into(recs, config, stats)

    bounds = None
    if config.outlier_removal_enabled:
        bounds = outlier_bounds(grids, config.outlier_q)
        if bounds is not None:
            before = sum(len(g) for g in grids)
            grids = remove_outlier_days(grids, config.outlier_q, bounds)
            stats.outlier_days_dropped = before - sum(len(g) for g in grids)
    stats.outlier_bounds = bounds

    stats.users_before_filter = len(grids)
    before = sum(len(g) for g in grids)
    grids = filter_users(grids, config.window_days)
    stats.users_after_filter = len(grids)
    stats.days_dropped_by_user_filter = before - sum(len(g) for g in grids)

    if config.imputation_enabled and config.granularity == "hourly":
        imputed = []
        for g in grids:
            new = impute_zeros(g, config.active_hours)
            stats.slots_imputed += int((new.values != g.values).sum())
            imputed.append(new)
        grids = imputed

    return PipelineResult(grids, stats, config, bounds)


# ---------------------------------------------------------------------------
# serialization

def grids_to_ndjson(grids: Sequence, config: PipelineConfig | None = None,
                    bounds: tuple[float, float] | None = None) -> str:
    """Header line (format, version, config, outlier bounds) then one user per line."""
    granularity = grids[0].granularity if grids else (config.granularity if config else "hourly")
    header = {"format": GRID_FORMAT, "version": GRID_FORMAT_VERSION, "granularity": granularity,
              "pipeline_config": config.to_dict() if config else None,
              "outlier_bounds": list(bounds) if bounds is not None else None}
    lines = [json.dumps(header, separators=(",", ":"))]
    lines += [json.dumps(g.to_dict(), separators=(",", ":")) for g in grids]
    return "\n".join(lines) + "\n"


def grids_from_ndjson(text: str):
    """Inverse of :func:`grids_to_ndjson`; returns ``(grids, header)``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty grid file")
    header = json.loads(lines[0])
    if header.get("format") != GRID_FORMAT:
        raise ValueError("not a grid file")
    if header.get("version") != GRID_FORMAT_VERSION:
        raise ValueError(f"unsupported grid file version {header.get('version')}")
    grids = []
    for ln in lines[1:]:
        d = json.loads(ln)
        dates = [date.fromisoformat(s) for s in d["dates"]]
        if header["granularity"] == "hourly":
            grids.append(HourlyGrid(d["user_id"], dates, np.array(d["values"], dtype=np.int64).reshape(-1, 24),
                                    np.array(d["mask"], dtype=bool).reshape(-1, 24)))
        else:
            grids.append(DailySeries(d["user_id"], dates, d["totals"]))
    return grids, header
