"""Error metrics, expanding-window CV grid search, benchmarks and config sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import (FeatureConfig, WindowConfig, apply_scaler, build_windows, chronological_split,
                      fit_scaler)
from .models import DISPLAY_NAMES, make_model
from .pipeline import PipelineConfig, run_pipeline

logger = logging.getLogger(__name__)


def _check_pair(y, y_pred):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if len(y) == 0 or len(y) != len(y_pred):
        raise ValueError("y and y_pred must be non-empty and of equal length")
    return y, y_pred


def mae(y, y_pred) -> float:
    y, y_pred = _check_pair(y, y_pred)
    return float(np.mean(np.abs(y - y_pred)))


def mdae(y, y_pred) -> float:
    """Median absolute error; even counts average the two middle values."""
    y, y_pred = _check_pair(y, y_pred)
    return float(np.median(np.abs(y - y_pred)))


# ---------------------------------------------------------------------------
# cross-validation and grid search

@dataclass(frozen=True)
class CvFolds:
    k: int
    folds: tuple[tuple[range, range], ...]

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def ts_cv_folds(n: int, k: int = 5) -> CvFolds:
    """Expanding-window folds over ``n`` chronologically ordered rows.

    With block size ``b = n // (k + 1)``, fold ``i`` (1-based) trains on
    ``[0, i*b)`` and validates on ``[i*b, (i+1)*b)``. Rows past ``(k+1)*b``
    are never used.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} rows for {k} folds, got {n}")
    b = n // (k + 1)
    return CvFolds(k, tuple((range(0, i * b), range(i * b, (i + 1) * b)) for i in range(1, k + 1)))


def expand_grid(grid) -> list[dict]:
    """A dict of lists becomes its Cartesian product (key order kept); a list passes through."""
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    return [dict(p) for p in grid]


@dataclass
class GridSearchResult:
    family: str
    best_params: dict
    best_score: float
    results: list[dict]     # one per grid point: params, mean_val_mae, fold_maes, error

    def to_dict(self) -> dict:
        return asdict(self)


def grid_search(family: str, grid, X, y, k: int = 5, base_params: dict | None = None) -> GridSearchResult:
    """Pick the grid point with the lowest mean validation MAE over expanding-window folds.

    Ties go to the earlier grid point. A point whose fit raises is recorded
    with its error and skipped; if every point fails a RuntimeError is raised.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    points = expand_grid(grid)
    if not points:
        raise ValueError("empty grid")
    folds = ts_cv_folds(len(y), k)
    results = []
    best = None
    for point in points:
        params = {**(base_params or {}), **point}
        try:
            fold_maes = []
            for tr, va in folds:
                model = make_model(family, **params).fit(X[tr.start:tr.stop], y[tr.start:tr.stop])
                fold_maes.append(mae(y[va.start:va.stop], model.predict(X[va.start:va.stop])))
            score = float(np.mean(fold_maes))
            if not math.isfinite(score):
                raise ValueError("non-finite validation error")
            results.append({"params": point, "mean_val_mae": score, "fold_maes": fold_maes, "error": None})
            if best is None or score < best[1]:
                best = (params, score)
        except Exception as exc:  # a failing grid point must not sink the search
            logger.warning("grid point %s failed: %s", point, exc)
            results.append({"params": point, "mean_val_mae": None, "fold_maes": [], "error": str(exc)})
    if best is None:
        raise RuntimeError(f"every grid point failed for {family}")
    return GridSearchResult(family, best[0], best[1], results)


# ---------------------------------------------------------------------------
# benchmark reports

@dataclass
class ModelScores:
    name: str
    family: str
    train_mae: float
    train_mdae: float
    test_mae: float
    test_mdae: float


@dataclass
class EvalReport:
    rows: list[ModelScores]
    dataset_fingerprint: str = ""
    configs: dict = field(default_factory=dict)

    def row(self, name: str) -> ModelScores:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "dataset_fingerprint": self.dataset_fingerprint,
                "configs": self.configs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([ModelScores(**r) for r in d["rows"]], d.get("dataset_fingerprint", ""), d.get("configs", {}))

    def render_table(self) -> str:
        """Plain-text table with one Train and one Test line per model."""
        width = max([len("Model")] + [len(r.name) for r in self.rows])
        lines = [f"{'Model':<{width}}  {'Dataset':<7}  {'MAE':>12}  {'MdAE':>12}",
                 "-" * (width + 39)]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {'Train':<7}  {r.train_mae:>12.3f}  {r.train_mdae:>12.3f}")
            lines.append(f"{'':<{width}}  {'Test':<7}  {r.test_mae:>12.3f}  {r.test_mdae:>12.3f}")
        return "\n".join(lines) + "\n"


def predict_steps(model, scaler, X_raw) -> np.ndarray:
    """Raw-unit predictions: scale features, predict, undo target scaling."""
    return scaler.inverse_target(model.predict(scaler.transform_features(X_raw)))


def benchmark(models, train, test, scaler, include_baseline: bool = True, configs: dict | None = None) -> EvalReport:
    """Train/test MAE and MdAE, in steps, for fitted models.

    ``train`` and ``test`` are *unscaled* datasets; models are assumed to have
    been fitted on ``apply_scaler(scaler, train)``. ``models`` maps display
    names to fitted models, or is a list whose names come from the family.
    A mean-of-train baseline row is appended unless disabled.
    """
    if not isinstance(models, dict):
        models = {DISPLAY_NAMES.get(m.family, m.family): m for m in models}
    models = dict(models)
    if include_baseline and "Mean baseline" not in models:
        models["Mean baseline"] = make_model("mean").fit(None, scaler.transform_target(train.y))
    rows = []
    for name, model in models.items():
        p_train = predict_steps(model, scaler, train.X)
        p_test = predict_steps(model, scaler, test.X)
        rows.append(ModelScores(name, model.family, mae(train.y, p_train), mdae(train.y, p_train),
                                mae(test.y, p_test), mdae(test.y, p_test)))
    return EvalReport(rows, train.fingerprint() + ":" + test.fingerprint(), configs or {})


# ---------------------------------------------------------------------------
# configuration sweeps

@dataclass
class SweepSpec:
    granularities: Sequence[str] = ("hourly", "daily")
    window_days: Sequence[int] = (1, 2, 3, 4, 5, 6)
    feature_sets: Sequence[str] = ("steps",)
    outlier_removal: Sequence[bool] = (True,)

    def cells(self):
        return list(itertools.product(self.granularities, self.window_days, self.feature_sets, self.outlier_removal))

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(**{k: tuple(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}


@dataclass
class SweepCell:
    granularity: str
    window_days: int
    features: str
    outlier_removal: bool
    n_examples: int = 0
    n_train: int = 0
    n_test: int = 0
    test_mae: float | None = None
    test_mdae: float | None = None
    status: str = "ok"


@dataclass
class SweepReport:
    cells: list[SweepCell]
    probe: str = "ridge"

    @property
    def populated(self) -> list[SweepCell]:
        return [c for c in self.cells if c.status == "ok"]

    def cell(self, granularity, window_days, features="steps", outlier_removal=True) -> SweepCell:
        for c in self.cells:
            if (c.granularity, c.window_days, c.features, c.outlier_removal) == \
                    (granularity, window_days, features, outlier_removal):
                return c
        raise KeyError((granularity, window_days, features, outlier_removal))

    def to_dict(self) -> dict:
        return {"probe": self.probe, "cells": [asdict(c) for c in self.cells]}

    def to_csv(self) -> str:
        out = io.StringIO()
        names = [f.name for f in SweepCell.__dataclass_fields__.values()]
        writer = csv.DictWriter(out, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for c in self.cells:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(c).items()})
        return out.getvalue()

    def to_matrix_csv(self) -> str:
        """Test MAE with one row per (granularity, features, outliers) and one column per window size."""
        windows = sorted({c.window_days for c in self.cells})
        keys = list(dict.fromkeys((c.granularity, c.features, c.outlier_removal) for c in self.cells))
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["granularity", "features", "outlier_removal"] + [f"W{w}" for w in windows])
        for key in keys:
            row = list(key)
            for w in windows:
                c = self.cell(key[0], w, key[1], key[2])
                row.append("" if c.test_mae is None else repr(c.test_mae))
            writer.writerow(row)
        return out.getvalue()


def config_sweep(records, spec: SweepSpec, base_config: PipelineConfig | None = None,
                 probe: str = "ridge", probe_params: dict | None = None,
                 ratios=(0.70, 0.15, 0.15)) -> SweepReport:
    """Run pipeline -> windows -> probe model for every cell of ``spec``.

    Cells whose cleaning or splitting leaves no training or test rows are
    reported with status ``"empty"`` instead of failing the sweep.
    """
    base_config = base_config or PipelineConfig()
    cells = []
    for granularity, W, features, outliers in spec.cells():
        cell = SweepCell(granularity, W, features, outliers)
        pconf = replace(base_config, granularity=granularity, window_days=W, outlier_removal_enabled=outliers)
        grids = run_pipeline(records, pconf).grids
        data = build_windows(grids, WindowConfig(W, granularity), FeatureConfig.preset(features))
        train, val, test = chronological_split(data, ratios)
        cell.n_examples, cell.n_train, cell.n_test = len(data), len(train), len(test)
        if len(train) == 0 or len(test) == 0:
            cell.status = "empty"
        else:
            scaler = fit_scaler(train)
            tr, va = apply_scaler(scaler, train), apply_scaler(scaler, val)
            model = make_model(probe, **(probe_params or {})).fit(tr.X, tr.y, va.X, va.y)
            pred = predict_steps(model, scaler, test.X)
            cell.test_mae, cell.test_mdae = mae(test.y, pred), mdae(test.y, pred)
        logger.info("sweep cell %s W=%d %s outliers=%s: %s", granularity, W, features, outliers, cell.status)
        cells.append(cell)
    return SweepReport(cells, probe)
