import math
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepforecast.dataset import (FeatureConfig, WindowConfig, apply_scaler, build_windows, chronological_split,
                                  cyclic_pair, featurize, fit_scaler, invert_target, load_datasets,
                                  save_datasets)
from stepforecast.pipeline import DailySeries, HourlyGrid, PipelineConfig, run_pipeline

D0 = date(2015, 3, 2)      # a Monday


def hourly_grid(user, n_days, start=D0, seed=0, skip=()):
    rng = np.random.default_rng(seed)
    dates = [start + timedelta(days=i) for i in range(n_days) if i not in skip]
    values = rng.integers(0, 800, size=(len(dates), 24))
    return HourlyGrid(user, dates, values, values > 0)


def daily_series(user, totals, start=D0):
    return DailySeries(user, [start + timedelta(days=i) for i in range(len(totals))], totals)


def toy_dataset(n, d=3, seed=0):
    rng = np.random.default_rng(seed)
    grids = [daily_series(f"u{i}", rng.integers(0, 10000, size=n + d)) for i in range(1)]
    return build_windows(grids, WindowConfig(d, "daily"), FeatureConfig())


# -- cyclic / featurize -----------------------------------------------------------

def test_cyclic_pair_examples():
    assert cyclic_pair(0, 24) == (0.0, 1.0)
    s, c = cyclic_pair(6, 24)
    assert s == pytest.approx(1.0, abs=1e-12) and c == pytest.approx(0.0, abs=1e-12)
    s, c = cyclic_pair(24, 24)
    assert abs(s) < 1e-12 and abs(c - 1) < 1e-12
    for bad in (0, -3):
        with pytest.raises(ValueError):
            cyclic_pair(1, bad)


def test_featurize_calendar():
    fc = FeatureConfig.preset("all", holiday_dates=[date(2015, 3, 17)])
    sat = featurize(date(2015, 3, 14), 9, fc)
    assert sat["is_weekend"] == 1 and sat["day_of_week"] == 5 and sat["hour"] == 9
    assert sat["week"] == 11 and sat["month"] == 3 and sat["is_holiday"] == 0
    assert featurize(date(2015, 3, 17), None, fc)["is_holiday"] == 1
    assert "hour" not in featurize(date(2015, 3, 17), None, fc)
    assert featurize(date(2015, 3, 14), 9, FeatureConfig()) == {}


def test_include_steps_required():
    with pytest.raises(ValueError):
        FeatureConfig(include_steps=False)


# -- build_windows ----------------------------------------------------------------

def test_four_days_one_example():
    g = hourly_grid("u1", 4)
    ds = build_windows([g], WindowConfig(3, "hourly"), FeatureConfig())
    assert ds.X.shape == (1, 72)
    assert ds.y[0] == g.values[3].sum() and ds.target_dates == [g.dates[3]]
    assert np.array_equal(ds.X[0], g.values[:3].reshape(-1))


def test_tumbling_targets():
    g = hourly_grid("u1", 7)
    ds = build_windows([g], WindowConfig(3, "hourly", stride_days=3), FeatureConfig())
    assert ds.target_dates == [g.dates[3], g.dates[6]]


def test_daily_sliding():
    ds = build_windows([daily_series("u1", [1, 2, 3, 4, 5])], WindowConfig(3, "daily"), FeatureConfig())
    assert ds.X.tolist() == [[1, 2, 3], [2, 3, 4]] and ds.y.tolist() == [4, 5]


def test_default_strides():
    assert WindowConfig(4, "hourly").stride_days == 4
    assert WindowConfig(4, "daily").stride_days == 1


def test_windows_do_not_cross_gaps():
    g = hourly_grid("u1", 9, skip=(4,))
    ds = build_windows([g], WindowConfig(2, "daily"), FeatureConfig())
    for d, x in zip(ds.target_dates, ds.X):
        assert (d - timedelta(days=1)) in g.dates and (d - timedelta(days=2)) in g.dates
    assert len(ds) == 2 + 2


def test_short_user_yields_nothing():
    ds = build_windows([hourly_grid("u1", 3)], WindowConfig(3, "hourly"), FeatureConfig())
    assert len(ds) == 0 and ds.X.shape == (0, 72)


def test_feature_lengths_and_channels():
    g = hourly_grid("u1", 8)
    # channels per slot: steps + date features (daily slots have no hour features)
    counts = {"steps": (1, 1), "date": (7, 6), "cyclic": (7, 5), "all": (13, 10)}
    for preset, (hourly_c, daily_c) in counts.items():
        fc = FeatureConfig.preset(preset)
        ds = build_windows([g], WindowConfig(2, "hourly"), fc)
        assert ds.X.shape[1] == len(ds.feature_names) == 48 * hourly_c
        assert ds.n_channels == hourly_c and ds.feature_names[0] == "d0_h00_steps"
        dd = build_windows([g], WindowConfig(2, "daily"), fc)
        assert dd.X.shape[1] == 2 * daily_c and dd.n_channels == daily_c


def test_slotwise_layout():
    g = hourly_grid("u1", 3)
    ds = build_windows([g], WindowConfig(2, "hourly"), FeatureConfig.preset("date"))
    X = ds.X[0].reshape(48, ds.n_channels)
    assert np.array_equal(X[:, 0], g.values[:2].reshape(-1))
    assert X[:, 1].tolist() == list(range(24)) * 2           # hour column
    assert X[24, 2] == g.dates[1].weekday()


def test_ordering_by_date_then_user():
    grids = [hourly_grid("b", 5, seed=1), hourly_grid("a", 5, seed=2, start=D0 + timedelta(days=1))]
    ds = build_windows(grids, WindowConfig(1, "daily"), FeatureConfig())
    keys = list(zip(ds.target_dates, ds.user_ids))
    assert keys == sorted(keys)


def test_target_alignment_and_no_leakage(anomaly_corpus):
    res = run_pipeline(anomaly_corpus, PipelineConfig(window_days=2))
    by_user = {g.user_id: g for g in res.grids}
    for granularity in ("hourly", "daily"):
        ds = build_windows(res.grids, WindowConfig(2, granularity), FeatureConfig.preset("date"))
        assert len(ds) > 0
        for ex in ds.examples:
            g = by_user[ex.user_id]
            i = g.dates.index(ex.target_date)
            assert ex.target == g.values[i].sum()
            assert g.dates[i - 2] == ex.target_date - timedelta(days=2)   # window days precede target


# -- split ------------------------------------------------------------------------

def test_split_sizes():
    ds = toy_dataset(10)
    assert [len(s) for s in chronological_split(ds, (0.7, 0.15, 0.15))] == [7, 1, 2]
    assert [len(s) for s in chronological_split(ds, (1, 0, 0))] == [10, 0, 0]


def test_split_empty_and_bad_ratios():
    empty = toy_dataset(0)
    assert [len(s) for s in chronological_split(empty)] == [0, 0, 0]
    with pytest.raises(ValueError):
        chronological_split(empty, (0.5, 0.5, 0.5))


@given(st.integers(0, 60), st.sampled_from([(0.7, 0.15, 0.15), (0.5, 0.25, 0.25), (0.6, 0.2, 0.2), (0.34, 0.33, 0.33)]))
@settings(max_examples=60, deadline=None)
def test_split_contiguous_and_chronological(n, ratios):
    ds = toy_dataset(n)
    tr, va, te = chronological_split(ds, ratios)
    assert len(tr) == math.floor(ratios[0] * n + 1e-9) and len(va) == math.floor(ratios[1] * n + 1e-9)
    assert np.array_equal(np.concatenate([tr.y, va.y, te.y]), ds.y)
    if len(tr) and len(te):
        assert max(tr.target_dates) <= min(te.target_dates)


# -- scaling ----------------------------------------------------------------------

def test_scaler_hand_values():
    ds = build_windows([daily_series("u1", [2, 5, 4, 5, 6, 5])], WindowConfig(1, "daily"), FeatureConfig())
    sub = ds.subset([0, 2, 4])       # column [2, 4, 6]
    scaled = apply_scaler(fit_scaler(sub), sub)
    assert scaled.X[:, 0] == pytest.approx([-1.2247, 0, 1.2247], abs=1e-4)
    assert scaled.y == pytest.approx([0, 0, 0])       # constant target -> std guard
    sc = fit_scaler(sub)
    assert sc.target_std == 1.0


def test_scaler_empty_rejected():
    with pytest.raises(ValueError):
        fit_scaler(toy_dataset(0))


@given(st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_scaled_train_is_standardised(seed):
    rng = np.random.default_rng(seed)
    ds = toy_dataset(int(rng.integers(2, 40)), seed=seed)
    ds.X[:, 1] = 7.0                           # force a constant column
    sc = fit_scaler(ds)
    s = apply_scaler(sc, ds)
    assert np.all(np.abs(s.X.mean(axis=0)) < 1e-6)
    std = s.X.std(axis=0)
    assert np.all((np.abs(std - 1) < 1e-6) | (np.ptp(ds.X, axis=0) == 0))
    assert np.all(s.X[:, 1] == 0)
    assert np.allclose(invert_target(sc, s.y), ds.y, rtol=0, atol=1e-9 * max(1, np.abs(ds.y).max()))


# -- properties on sequence data ----------------------------------------------------

@given(st.integers(0, 2**31), st.integers(1, 4), st.sampled_from(["hourly", "daily"]))
@settings(max_examples=30, deadline=None)
def test_cyclic_rows_on_unit_circle(seed, W, granularity):
    rng = np.random.default_rng(seed)
    start = D0 + timedelta(days=int(rng.integers(0, 400)))
    g = hourly_grid("u", W + 3, start=start, seed=seed)
    ds = build_windows([g], WindowConfig(W, granularity), FeatureConfig.preset("all"))
    names = ds.feature_names
    for pre in [n[:-4] for n in names if n.endswith("_sin")]:
        s = ds.X[:, names.index(pre + "_sin")]
        c = ds.X[:, names.index(pre + "_cos")]
        assert np.all(np.abs(s ** 2 + c ** 2 - 1) < 1e-9)


# -- serialization ------------------------------------------------------------------

def test_binary_round_trip(tmp_path):
    g = hourly_grid("u1", 12)
    ds = build_windows([g], WindowConfig(2, "hourly", stride_days=1), FeatureConfig.preset("all", [D0]))
    tr, va, te = chronological_split(ds)
    sc = fit_scaler(tr)
    side = save_datasets(tmp_path / "d.bin", {"train": tr, "val": va, "test": te}, sc)
    back = load_datasets(tmp_path / "d.bin")
    for name, orig in (("train", tr), ("val", va), ("test", te)):
        got = back[name]
        assert got.X.tobytes() == orig.X.tobytes() and got.y.tobytes() == orig.y.tobytes()
        assert got.user_ids == orig.user_ids and got.target_dates == orig.target_dates
        assert got.feature_config == orig.feature_config and got.window_config == orig.window_config
    assert side["split_sizes"] == {"train": len(tr), "val": len(va), "test": len(te)}
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_datasets(tmp_path / "x.bin")
