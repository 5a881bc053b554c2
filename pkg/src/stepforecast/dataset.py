"""Windowed supervised datasets built from cleaned grids.

Each example holds the ``W`` days before a target day, oldest first, and the
step total of the target day. Hourly windows carry ``24 * W`` slots, daily
windows ``W``. Optional date features are appended per slot, so a flat feature
vector is laid out slot by slot as ``[steps, <date features...>]`` and can be
reshaped to ``(slots, channels)`` for sequence models.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from .pipeline import HourlyGrid, consecutive_runs

DATASET_MAGIC = b"SFDSBIN\x00"
DATASET_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    include_steps: bool = True
    include_date_features: bool = False
    include_cyclic: bool = False
    include_calendar_flags: bool = False
    holiday_dates: frozenset = frozenset()

    def __post_init__(self):
        if not self.include_steps:
            raise ValueError("include_steps must be True")
        object.__setattr__(self, "holiday_dates", frozenset(self.holiday_dates))

    @classmethod
    def preset(cls, name: str, holiday_dates=()) -> "FeatureConfig":
        """Named feature sets: ``steps``, ``date``, ``cyclic`` and ``all``."""
        presets = {
            "steps": {},
            "date": {"include_date_features": True, "include_calendar_flags": True},
            "cyclic": {"include_cyclic": True},
            "all": {"include_date_features": True, "include_calendar_flags": True, "include_cyclic": True},
        }
        if name not in presets:
            raise ValueError(f"unknown feature preset {name!r}; choose from {sorted(presets)}")
        return cls(holiday_dates=frozenset(holiday_dates), **presets[name])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holiday_dates"] = sorted(h.isoformat() for h in self.holiday_dates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        d["holiday_dates"] = frozenset(date.fromisoformat(s) for s in d.get("holiday_dates", []))
        return cls(**d)


@dataclass(frozen=True)
class WindowConfig:
    window_days: int = 3
    granularity: str = "hourly"
    stride_days: int | None = None

    def __post_init__(self):
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        if self.granularity not in ("hourly", "daily"):
            raise ValueError("granularity must be hourly or daily")
        if self.stride_days is None:
            # tumbling for hourly windows, sliding for daily ones
            stride = self.window_days if self.granularity == "hourly" else 1
            object.__setattr__(self, "stride_days", stride)
        if self.stride_days < 1:
            raise ValueError("stride_days must be >= 1")

    @property
    def slots_per_day(self) -> int:
        return 24 if self.granularity == "hourly" else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WindowConfig":
        return cls(**d)


@dataclass(frozen=True)
class Example:
    user_id: str
    target_date: date
    features: np.ndarray
    target: float


@dataclass
class WindowedDataset:
    X: np.ndarray                 # (n, n_features) float64
    y: np.ndarray                 # (n,) float64
    user_ids: list[str]
    target_dates: list[date]
    feature_names: list[str]
    n_channels: int = 1
    window_config: WindowConfig = field(default_factory=WindowConfig)
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        X = np.asarray(self.X, dtype=np.float64)
        if X.size != len(self.y) * len(self.feature_names):
            raise ValueError("feature_names length does not match feature vector length")
        self.X = X.reshape(len(self.y), len(self.feature_names))

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> Example:
        return Example(self.user_ids[i], self.target_dates[i], self.X[i], float(self.y[i]))

    @property
    def examples(self) -> list[Example]:
        return [self[i] for i in range(len(self))]

    def subset(self, index) -> "WindowedDataset":
        """Rows selected by a slice or integer index array, keeping metadata."""
        if isinstance(index, slice):
            ids, dates = self.user_ids[index], self.target_dates[index]
        else:
            index = np.asarray(index, dtype=np.int64)
            ids = [self.user_ids[i] for i in index]
            dates = [self.target_dates[i] for i in index]
        return replace(self, X=self.X[index], y=self.y[index], user_ids=ids, target_dates=dates)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update("\n".join(self.feature_names).encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# features

def cyclic_pair(value: float, period: float) -> tuple[float, float]:
    """Map a periodic quantity onto the unit circle: ``(sin, cos)`` of ``2*pi*value/period``."""
    if not period > 0:
        raise ValueError("period must be positive")
    angle = 2.0 * math.pi * value / period
    return math.sin(angle), math.cos(angle)


def date_feature_names(feature_config: FeatureConfig, hourly: bool) -> list[str]:
    names = []
    if feature_config.include_date_features:
        names += (["hour"] if hourly else []) + ["day_of_week", "week", "month"]
    if feature_config.include_calendar_flags:
        names += ["is_weekend", "is_holiday"]
    if feature_config.include_cyclic:
        names += (["hour_sin", "hour_cos"] if hourly else []) + ["dow_sin", "dow_cos", "month_sin", "month_cos"]
    return names


def featurize(day: date, hour: int | None, feature_config: FeatureConfig) -> dict[str, float]:
    """Date-derived features of one slot (``hour=None`` for a whole day).

    Day of week counts from Monday = 0; week is the ISO-8601 week number.
    Returns an empty mapping for a steps-only configuration.
    """
    out: dict[str, float] = {}
    dow = day.weekday()
    if feature_config.include_date_features:
        if hour is not None:
            out["hour"] = float(hour)
        out["day_of_week"] = float(dow)
        out["week"] = float(day.isocalendar()[1])
        out["month"] = float(day.month)
    if feature_config.include_calendar_flags:
        out["is_weekend"] = 1.0 if dow >= 5 else 0.0
        out["is_holiday"] = 1.0 if day in feature_config.holiday_dates else 0.0
    if feature_config.include_cyclic:
        if hour is not None:
            out["hour_sin"], out["hour_cos"] = cyclic_pair(hour, 24)
        out["dow_sin"], out["dow_cos"] = cyclic_pair(dow, 7)
        out["month_sin"], out["month_cos"] = cyclic_pair(day.month, 12)
    return out


def _day_block(day: date, steps: np.ndarray, feature_config: FeatureConfig, hourly: bool) -> np.ndarray:
    """(slots, channels) block for one day: step column then date features."""
    if hourly:
        rows = [[float(steps[h]), *featurize(day, h, feature_config).values()] for h in range(24)]
    else:
        rows = [[float(steps[0]), *featurize(day, None, feature_config).values()]]
    return np.array(rows, dtype=np.float64)


def feature_names_for(window_config: WindowConfig, feature_config: FeatureConfig) -> list[str]:
    hourly = window_config.granularity == "hourly"
    per_slot = ["steps"] + date_feature_names(feature_config, hourly)
    names = []
    for d in range(window_config.window_days):
        for h in range(window_config.slots_per_day):
            slot = f"d{d}_h{h:02d}" if hourly else f"d{d}"
            names += [f"{slot}_{n}" for n in per_slot]
    return names


def _as_series(grid, granularity: str):
    if granularity == "daily":
        return grid.to_daily() if isinstance(grid, HourlyGrid) else grid
    if not isinstance(grid, HourlyGrid):
        raise ValueError("hourly windows need hourly grids")
    return grid


def window_features(grid, start: int, window_config: WindowConfig, feature_config: FeatureConfig) -> np.ndarray:
    """Flat feature vector for the window covering ``grid.dates[start:start+W]``."""
    hourly = window_config.granularity == "hourly"
    blocks = []
    for i in range(start, start + window_config.window_days):
        steps = grid.values[i] if hourly else grid.day_totals[i:i + 1]
        blocks.append(_day_block(grid.dates[i], steps, feature_config, hourly))
    return np.concatenate(blocks).reshape(-1)


def build_windows(grids: Sequence, window_config: WindowConfig | None = None,
                  feature_config: FeatureConfig | None = None) -> WindowedDataset:
    """Slice every user's consecutive-day runs into (window, next-day total) examples.

    Windows advance by ``stride_days`` within a run and never straddle a gap.
    Examples are ordered by target date, ties by user id.
    """
    window_config = window_config or WindowConfig()
    feature_config = feature_config or FeatureConfig()
    W = window_config.window_days
    names = feature_names_for(window_config, feature_config)
    n_channels = len(names) // (W * window_config.slots_per_day)

    rows, targets, users, dates = [], [], [], []
    for grid in grids:
        series = _as_series(grid, window_config.granularity)
        totals = series.totals()
        for a, b in consecutive_runs(series.dates):
            for s in range(a, b - W, window_config.stride_days):
                rows.append(window_features(series, s, window_config, feature_config))
                targets.append(float(totals[s + W]))
                users.append(series.user_id)
                dates.append(series.dates[s + W])

    order = sorted(range(len(rows)), key=lambda i: (dates[i], users[i]))
    X = np.array([rows[i] for i in order]).reshape(len(order), len(names))
    return WindowedDataset(X, np.array([targets[i] for i in order], dtype=np.float64),
                           [users[i] for i in order], [dates[i] for i in order],
                           names, n_channels, window_config, feature_config)


# ---------------------------------------------------------------------------
# splitting and scaling

def chronological_split(dataset: WindowedDataset, ratios=(0.70, 0.15, 0.15)):
    """Contiguous train/validation/test slices in dataset (chronological) order.

    Train and validation sizes are ``floor(ratio * n)``; the test slice takes
    the remainder.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    n = len(dataset)
    # the tiny epsilon keeps 0.7 * 10 from flooring to 6
    n_train = min(n, math.floor(ratios[0] * n + 1e-9))
    n_val = min(n - n_train, math.floor(ratios[1] * n + 1e-9))
    return (dataset.subset(slice(0, n_train)),
            dataset.subset(slice(n_train, n_train + n_val)),
            dataset.subset(slice(n_train + n_val, n)))


@dataclass
class Scaler:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    def transform_features(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_std

    def transform_target(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def inverse_target(self, y_scaled) -> np.ndarray:
        return np.asarray(y_scaled, dtype=np.float64) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {"feature_mean": self.feature_mean.tolist(), "feature_std": self.feature_std.tolist(),
                "target_mean": self.target_mean, "target_std": self.target_std}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["feature_mean"], dtype=np.float64), np.array(d["feature_std"], dtype=np.float64),
                   float(d["target_mean"]), float(d["target_std"]))


def _guarded_std(values: np.ndarray, axis=None):
    std = values.std(axis=axis)
    return np.where(std > 0, std, 1.0)


def fit_scaler(train: WindowedDataset) -> Scaler:
    """Per-column z-score statistics (population std) from the training split."""
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    return Scaler(train.X.mean(axis=0), _guarded_std(train.X, axis=0),
                  float(train.y.mean()), float(_guarded_std(train.y)))


def apply_scaler(scaler: Scaler, dataset: WindowedDataset) -> WindowedDataset:
    return replace(dataset, X=scaler.transform_features(dataset.X), y=scaler.transform_target(dataset.y))


def invert_target(scaler: Scaler, predictions) -> np.ndarray:
    return scaler.inverse_target(predictions)


# ---------------------------------------------------------------------------
# serialization
#
# dataset.bin layout (little endian):
#   8 bytes magic | uint32 version | uint64 header length | JSON header |
#   per split in header order: float64 X (n*d) then float64 y (n)

def save_datasets(path, splits: dict[str, WindowedDataset], scaler: Scaler | None = None,
                  meta: dict | None = None) -> dict:
    """Write named splits to a binary file; returns the JSON sidecar document."""
    first = next(iter(splits.values()))
    header = {
        "feature_names": first.feature_names,
        "n_channels": first.n_channels,
        "window_config": first.window_config.to_dict(),
        "feature_config": first.feature_config.to_dict(),
        "splits": [{"name": name, "n": len(ds), "user_ids": ds.user_ids,
                    "target_dates": [d.isoformat() for d in ds.target_dates]}
                   for name, ds in splits.items()],
    }
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IQ", DATASET_VERSION, len(raw)))
        fh.write(raw)
        for ds in splits.values():
            fh.write(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ds.y, dtype="<f8").tobytes())
    sidecar = {
        "format": "stepforecast.dataset", "version": DATASET_VERSION,
        "feature_names": first.feature_names, "n_channels": first.n_channels,
        "window_config": first.window_config.to_dict(), "feature_config": first.feature_config.to_dict(),
        "split_sizes": {name: len(ds) for name, ds in splits.items()},
        "scaler": scaler.to_dict() if scaler is not None else None,
    }
    if meta:
        sidecar.update(meta)
    return sidecar


def load_datasets(path) -> dict[str, WindowedDataset]:
    data = Path(path).read_bytes()
    if data[:8] != DATASET_MAGIC:
        raise ValueError("not a dataset file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    offset = 8 + struct.calcsize("<IQ")
    header = json.loads(data[offset:offset + hlen].decode("utf-8"))
    offset += hlen
    names = header["feature_names"]
    d = len(names)
    wc = WindowConfig.from_dict(header["window_config"])
    fc = FeatureConfig.from_dict(header["feature_config"])
    out = {}
    for split in header["splits"]:
        n = split["n"]
        X = np.frombuffer(data, dtype="<f8", count=n * d, offset=offset).reshape(n, d).astype(np.float64)
        offset += 8 * n * d
        y = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        out[split["name"]] = WindowedDataset(X, y, list(split["user_ids"]),
                                             [date.fromisoformat(s) for s in split["target_dates"]],
                                             list(names), header["n_channels"], wc, fc)
    return out
