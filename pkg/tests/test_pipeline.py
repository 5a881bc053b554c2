from dataclasses import replace
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepforecast.ingest import StudyPeriod
from stepforecast.pipeline import (DailySeries, HourlyGrid, PipelineConfig, consecutive_runs, deduplicate,
                                   filter_study_period, filter_users, grids_from_ndjson, grids_to_ndjson,
                                   impute_zeros, outlier_bounds, remove_outlier_days, resample, run_pipeline)

from conftest import day, rec
from oracles import grids_as_reference, random_records, ref_pipeline, ref_quantile

HOURLY = PipelineConfig()


def daily(user, start, totals):
    d0 = day(start)
    return DailySeries(user, [d0 + timedelta(days=i) for i in range(len(totals))], totals)


def grid_from_days(user, dates):
    n = len(dates)
    return HourlyGrid(user, [day(d) for d in dates], np.ones((n, 24), int), np.ones((n, 24), bool))


# -- deduplicate ------------------------------------------------------------------

def test_dedup_exact_duplicate():
    r = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 512)
    assert deduplicate([r, r]) == [r]


def test_dedup_keeps_max():
    a = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 512)
    b = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 600, "watch")
    assert deduplicate([a, b]) == [b]


def test_dedup_is_per_user():
    a = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 512)
    b = rec("u2", "2015-03-10 08:00", "2015-03-10 08:30", 512)
    assert deduplicate([a, b]) == [a, b]


def test_dedup_preserves_order():
    a = rec("u1", "2015-03-10 09:00", "2015-03-10 09:30", 1)
    b = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 2)
    c = rec("u1", "2015-03-10 09:00", "2015-03-10 09:30", 5)
    assert deduplicate([a, b, c]) == [c, b]


# -- study period -----------------------------------------------------------------

def test_period_filter():
    period = StudyPeriod(date(2015, 3, 1), date(2015, 12, 31))
    inside = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 5)
    epoch = rec("u1", "1970-01-01 00:00", "1970-01-01 00:10", 5)
    assert filter_study_period([inside, epoch], period) == [inside]
    assert filter_study_period([], period) == []
    assert filter_study_period([epoch], None) == [epoch]


# -- resample ---------------------------------------------------------------------

def test_resample_sub_hour_record():
    [g] = resample([rec("u1", "2015-03-10 08:15", "2015-03-10 08:45", 600)], HOURLY)
    assert g.values[0, 8] == 600 and g.values.sum() == 600
    assert g.mask[0].tolist() == [h == 8 for h in range(24)]


def test_resample_coarse_drop_and_split():
    coarse = rec("u1", "2015-03-10 06:00", "2015-03-10 10:00", 1400)
    anchor = rec("u1", "2015-03-10 03:00", "2015-03-10 03:10", 1)
    [g] = resample([coarse, anchor], HOURLY)
    assert g.values.sum() == 1
    [g] = resample([coarse], replace(HOURLY, coarse_record_policy="split"))
    assert g.values[0].tolist() == [100 if 8 <= h < 22 else 0 for h in range(24)]
    assert g.values.sum() == 1400


def test_resample_split_rounds_per_bucket():
    recs = [rec("u1", "2015-03-10 06:00", "2015-03-10 10:00", 10),
            rec("u1", "2015-03-10 07:00", "2015-03-10 12:00", 11)]
    [g] = resample(recs, replace(HOURLY, coarse_record_policy="split", active_hours=(8, 12)))
    # 10/4 + 11/4 = 5.25 per bucket -> 5
    assert g.values[0, 8:12].tolist() == [5, 5, 5, 5]


def test_resample_daily_aggregates():
    recs = [rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 5),
            rec("u1", "2015-03-10 13:00", "2015-03-10 13:30", 7),
            rec("u1", "2015-03-11 09:00", "2015-03-11 09:30", 3)]
    [s] = resample(recs, replace(HOURLY, granularity="daily"))
    assert s == daily("u1", "2015-03-10", [12, 3])


def test_conservation_on_random_corpora():
    for seed in range(100):
        recs = deduplicate(random_records(np.random.default_rng(seed)))
        kept = sum(r.steps for r in recs if r.end_time - r.start_time <= timedelta(hours=1))
        assert sum(int(g.values.sum()) for g in resample(recs, HOURLY)) == kept


def test_split_conservation_within_rounding():
    for seed in range(30):
        recs = deduplicate(random_records(np.random.default_rng(seed)))
        grids = resample(recs, replace(HOURLY, coarse_record_policy="split"))
        total = sum(r.steps for r in recs)
        n_buckets = sum(len(g) for g in grids) * 14
        assert abs(sum(int(g.values.sum()) for g in grids) - total) <= n_buckets


# -- outliers ---------------------------------------------------------------------

def test_outlier_uniform_totals():
    series = [daily(f"u{i:03d}", "2015-03-01", [100 * i]) for i in range(101)]
    assert outlier_bounds(series, 0.05) == (500.0, 9500.0)
    kept = remove_outlier_days(series, 0.05)
    assert [int(s.day_totals[0]) for s in kept] == list(range(500, 9501, 100))


def test_outlier_tiny_q_keeps_everything():
    # q small enough that the interpolated bounds land exactly on min and max
    series = [daily("u1", "2015-03-01", [10, 20, 30, 40])]
    assert outlier_bounds(series, 1e-18) == (10.0, 40.0)
    assert remove_outlier_days(series, 1e-18) == series


def test_outlier_empty():
    assert remove_outlier_days([], 0.05) == []


def test_outlier_disabled_is_identity(small_corpus):
    cfg = replace(HOURLY, outlier_removal_enabled=False, window_days=1)
    res = run_pipeline(small_corpus, cfg)
    direct = filter_users(resample(deduplicate(small_corpus), cfg), 1)
    assert res.grids == direct and res.outlier_bounds is None


# -- user filter ------------------------------------------------------------------

def test_filter_users_examples():
    ok = grid_from_days("u1", ["2015-03-01", "2015-03-02", "2015-03-03", "2015-03-04"])
    gap = grid_from_days("u2", ["2015-03-01", "2015-03-02", "2015-03-04", "2015-03-05"])
    assert filter_users([ok, gap], 3) == [ok]


def test_filter_users_trims_short_runs():
    g = grid_from_days("u1", ["2015-03-01", "2015-03-02", "2015-03-04", "2015-03-05", "2015-03-06"])
    [kept] = filter_users([g], 2)
    assert kept.dates == [day("2015-03-04"), day("2015-03-05"), day("2015-03-06")]


def test_consecutive_runs():
    ds = [day(x) for x in ["2015-03-01", "2015-03-02", "2015-03-05", "2015-03-07", "2015-03-08"]]
    assert consecutive_runs(ds) == [(0, 2), (2, 3), (3, 5)]
    assert consecutive_runs([]) == []


def test_larger_window_is_stricter(anomaly_corpus):
    grids = resample(deduplicate(anomaly_corpus), HOURLY)
    users = [{g.user_id for g in filter_users(grids, w)} for w in range(1, 8)]
    for small, large in zip(users, users[1:]):
        assert large <= small


# -- imputation -------------------------------------------------------------------

def test_impute_examples():
    values = np.zeros((4, 24), int)
    values[:3, 14] = [200, 400, 600]
    g = HourlyGrid("u1", [day("2015-03-01") + timedelta(days=i) for i in range(4)], values, values > 0)
    out = impute_zeros(g, (8, 22))
    assert out.values[3, 14] == 400
    assert out.values[:, 3].tolist() == [0, 0, 0, 0]          # night hour untouched
    assert out.values[:, 10].tolist() == [0, 0, 0, 0]         # no history for 10:00
    assert np.array_equal(out.mask, g.mask)


def test_impute_custom_strategy():
    values = np.zeros((2, 24), int)
    values[0, 9] = 7
    g = HourlyGrid("u1", [day("2015-03-01"), day("2015-03-02")], values, values > 0)
    out = impute_zeros(g, (8, 22), strategy=lambda col: 1)
    assert out.values[1, 9] == 1 and out.values[0, 8] == 1 and out.values[0, 22] == 0


def test_imputation_disabled_by_default(small_corpus):
    assert not HOURLY.imputation_enabled
    res = run_pipeline(small_corpus, HOURLY)
    assert res.stats.slots_imputed == 0


# -- whole pipeline ---------------------------------------------------------------

def test_only_duplicates_gives_single_record_grid():
    r = rec("u1", "2015-03-10 08:00", "2015-03-10 08:30", 512)
    res = run_pipeline([r] * 5, replace(HOURLY, window_days=1, outlier_removal_enabled=False))
    assert res.grids == []                     # one day cannot feed a 1-day window plus target
    [g] = resample(deduplicate([r] * 5), HOURLY)
    assert g.values.sum() == 512 and res.stats.records_after_dedup == 1


def test_clean_contiguous_data_equals_direct_bucketing():
    recs = []
    for d in range(6):
        for h in range(24):
            recs.append(rec("u1", f"2015-03-{1 + d:02d} {h:02d}:05", f"2015-03-{1 + d:02d} {h:02d}:35", 10 * h + d))
    cfg = replace(HOURLY, outlier_q=1e-18)
    [g] = run_pipeline(recs, cfg).grids
    expected = np.array([[10 * h + d for h in range(24)] for d in range(6)])
    assert np.array_equal(g.values, expected) and g.mask.all()


@pytest.mark.parametrize("kwargs", [
    {},
    {"granularity": "daily"},
    {"coarse_record_policy": "split"},
    {"imputation_enabled": True, "window_days": 2},
    {"outlier_removal_enabled": False, "window_days": 5},
    {"study_period": StudyPeriod(date(2015, 3, 10), date(2015, 4, 10)), "outlier_q": 0.1},
])
def test_matches_reference(anomaly_corpus, kwargs):
    cfg = replace(HOURLY, **kwargs)
    got = grids_as_reference(run_pipeline(anomaly_corpus, cfg).grids)
    want = ref_pipeline(anomaly_corpus, period=cfg.study_period, granularity=cfg.granularity, q=cfg.outlier_q,
                        outliers=cfg.outlier_removal_enabled, policy=cfg.coarse_record_policy,
                        impute=cfg.imputation_enabled, active=cfg.active_hours, window_days=cfg.window_days)
    assert got == want


def test_stats_counts(anomaly_corpus):
    s = run_pipeline(anomaly_corpus, HOURLY).stats
    assert s.records_in == len(anomaly_corpus) > s.records_after_dedup
    assert s.coarse_records_dropped > 0 and s.outlier_days_dropped > 0
    assert s.users_after_filter <= s.users_before_filter


def test_empty_input():
    res = run_pipeline([], HOURLY)
    assert res.grids == [] and res.outlier_bounds is None


def test_serialized_output_deterministic(small_corpus):
    a = run_pipeline(small_corpus, HOURLY)
    b = run_pipeline(list(small_corpus), HOURLY)
    text = grids_to_ndjson(a.grids, a.config, a.outlier_bounds)
    assert text == grids_to_ndjson(b.grids, b.config, b.outlier_bounds)
    grids, header = grids_from_ndjson(text)
    assert grids == a.grids and header["outlier_bounds"] == list(a.outlier_bounds)
    assert PipelineConfig.from_dict(header["pipeline_config"]) == HOURLY


@pytest.mark.parametrize("bad", [dict(outlier_q=0.5), dict(outlier_q=0), dict(active_hours=(10, 8)),
                                 dict(window_days=0), dict(granularity="weekly")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        PipelineConfig(**bad)


# -- properties -------------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_stages_idempotent(seed):
    recs = random_records(np.random.default_rng(seed), n_records=120)
    once = deduplicate(recs)
    assert deduplicate(once) == once
    period = StudyPeriod(date(2015, 3, 3), date(2015, 3, 8))
    p = filter_study_period(once, period)
    assert filter_study_period(p, period) == p
    grids = resample(once, HOURLY)
    bounds = outlier_bounds(grids, 0.1)
    if bounds is not None:
        cut = remove_outlier_days(grids, bounds=bounds)
        assert remove_outlier_days(cut, bounds=bounds) == cut
    for w in (1, 2, 3):
        f = filter_users(grids, w)
        assert filter_users(f, w) == f


@given(seeds, st.sampled_from([0.01, 0.05, 0.2, 0.45]))
@settings(max_examples=40, deadline=None)
def test_quantile_postcondition(seed, q):
    grids = resample(deduplicate(random_records(np.random.default_rng(seed), n_records=150)), HOURLY)
    all_totals = [int(t) for g in grids for t in g.totals()]
    lo, hi = ref_quantile(all_totals, q), ref_quantile(all_totals, 1 - q)
    kept = remove_outlier_days(grids, q)
    assert all(lo <= t <= hi for g in kept for t in g.totals())
    assert sum(len(g) for g in kept) == sum(lo <= t <= hi for t in all_totals)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_grid_invariants(seed):
    rng = np.random.default_rng(seed)
    cfg = replace(HOURLY, coarse_record_policy=str(rng.choice(["drop", "split"])))
    for g in resample(random_records(rng, n_records=100), cfg):
        assert all(b > a for a, b in zip(g.dates, g.dates[1:]))
        assert (g.values >= 0).all() and (g.values[~g.mask] == 0).all()
