import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import attention_reference

from factattn.attention import (
    AttentionError,
    AttentionProfile,
    UndefinedRelativeAttention,
    attention_curve,
    baseline,
    build_profiles,
    profile_from_series,
    relative_attention_at,
)
from factattn.claimcluster import ClaimCluster
from factattn.ingest import FactCheckRecord
from factattn.kglink import EntityRef
from factattn.trendscal import CalibratedSeries, Period, SeriesCache
from factattn.weeks import week_labels

PERIOD = Period.years()
LABELS = PERIOD.labels()
W2020 = week_labels(2020, 2020)
ENT = EntityRef("/m/0e", "thing")


def test_curve_examples():
    assert attention_curve([0, 0, 0, 4], 0, 4)[-1] == 1.0
    assert attention_curve([3, 1, 5], 2, 4).tolist() == [0.25, 0.25, 1.0]
    assert baseline([1, 2, 3]) == 2.0
    for r in (0, -1, float("nan")):
        with pytest.raises(AttentionError):
            attention_curve([1], 0, r)
    with pytest.raises(AttentionError):
        baseline([])


def profile(curve, dates=()):
    n = len(curve)
    return AttentionProfile(ENT, "BR", 0.0, 1.0, W2020[:n], tuple(curve), tuple(dates))


def test_relative_attention_clamps_outside_year():
    p = profile([0.0, 1.0, 1.0, 4.0])
    assert relative_attention_at(p, dt.date(2019, 12, 1)) == 0.0
    assert relative_attention_at(p, dt.date(2021, 6, 1)) == 1.0
    assert relative_attention_at(p, dt.date(2020, 1, 8)) == 0.25
    # 2019-12-30 is the Monday starting 2020-W01
    assert relative_attention_at(p, dt.date(2019, 12, 30)) == 0.0
    with pytest.raises(UndefinedRelativeAttention):
        relative_attention_at(profile([0.0, 0.0]), dt.date(2020, 3, 1))


def test_profile_rejects_bad_inputs():
    with pytest.raises(AttentionError):
        AttentionProfile(ENT, "BR", 0.0, 0.0, W2020[:1], (0.0,))
    with pytest.raises(AttentionError):
        profile([0.0], dates=(dt.date(2020, 3, 1), dt.date(2020, 2, 1)))
    p = profile([0.0, 2.0], dates=(dt.date(2020, 1, 1),))
    assert AttentionProfile.from_dict(p.to_dict()) == p and p.fact_checked and p.n_factchecks == 1


def cal(entity_id, raw, scale=0.01, weeks=LABELS):
    return CalibratedSeries(entity_id, "BR", tuple(weeks), tuple(raw), scale, scale * 0.98, scale * 1.02)


def test_profile_from_series_uses_previous_year_baseline():
    raw = [10] * 52 + [10] * 20 + [30] * 5 + [10] * 28
    g = cal("/m/045c7b", [50] * 105)
    p = profile_from_series(ENT, cal(ENT.entity_id, raw), g, PERIOD)
    assert p.b == pytest.approx(0.1) and p.r == pytest.approx(0.5)
    assert p.total == pytest.approx(5 * 0.2 / 0.5)
    lo, hi = p.total_bounds
    assert lo <= p.total <= hi
    with pytest.raises(AttentionError, match="baseline"):
        profile_from_series(ENT, cal(ENT.entity_id, [1] * 53, weeks=W2020), g, PERIOD)


def test_missing_weeks_are_zero_filled():
    g = cal("/m/045c7b", [50] * 105)
    p = profile_from_series(ENT, cal(ENT.entity_id, [10] * 60, weeks=LABELS[:60]), g, PERIOD)
    assert len(p.curve) == 53 and p.total_bounds is None


def test_build_profiles_collects_dates_and_missing_reference(tmp_path):
    cache = SeriesCache(tmp_path)
    raw = [10] * 52 + [40] * 53
    cache.put("/m/045c7b", "BR", PERIOD, cal("/m/045c7b", [50] * 105))
    cache.put(ENT.entity_id, "BR", PERIOD, cal(ENT.entity_id, raw))
    cache.put(ENT.entity_id, "AR", PERIOD, cal(ENT.entity_id, raw))
    other = EntityRef("/m/0f", "other")
    cache.put(other.entity_id, "BR", PERIOD, None)
    recs = [FactCheckRecord("a", dt.date(2020, 4, 1), "BR", "o", "c", "false"),
            FactCheckRecord("b", dt.date(2020, 2, 1), "BR", "o", "c", "false"),
            FactCheckRecord("c", dt.date(2020, 3, 1), "AR", "o", "c", "false")]
    clusters = [ClaimCluster("c000", frozenset("abc"), "x", ENT),
                ClaimCluster("c001", frozenset(), "y", other),
                ClaimCluster("c002", frozenset(), "z", None)]
    out = build_profiles(cache, clusters, recs, "/m/045c7b", PERIOD)
    assert [(p.entity, p.country) for p in out.profiles] == [(ENT, "BR")]
    assert out.profiles[0].factcheck_dates == (dt.date(2020, 2, 1), dt.date(2020, 4, 1))
    assert out.no_signal == [(other.entity_id, "BR")]
    assert "AR" in out.errors and "/m/045c7b" in out.errors["AR"]


volumes = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=60)


@given(volumes, st.floats(0, 1e6), st.floats(1e-3, 1e6))
def test_curve_is_monotone_and_matches_loop(v, b, r):
    c = attention_curve(v, b, r)
    assert np.all(np.diff(c) >= 0) and np.all(c >= 0)
    ref = attention_reference(v, b, r)
    assert np.allclose(c, ref, rtol=1e-12, atol=0)


@given(volumes, st.floats(1e-3, 1e6))
def test_baseline_dominance_gives_zero(v, r):
    assert attention_curve(v, max(v), r)[-1] == 0.0


@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=2, max_size=53).filter(lambda c: c[-1] > 0))
def test_relative_attention_ends_at_one(steps):
    curve = np.cumsum(steps)
    p = profile(curve.tolist())
    assert relative_attention_at(p, dt.date(2020, 12, 31)) == 1.0
    last_week = dt.date.fromisocalendar(2020, len(steps), 3)
    assert relative_attention_at(p, last_week) == 1.0


@given(st.lists(st.integers(0, 100), min_size=105, max_size=105),
       st.lists(st.integers(1, 100), min_size=105, max_size=105),
       st.integers(-40, 40), st.integers(-40, 40))
def test_attention_is_unit_free(raw, graw, k1, k2):
    graw[0] = 100
    e, g = cal(ENT.entity_id, raw), cal("/m/045c7b", graw)
    a = profile_from_series(ENT, e, g, PERIOD)
    c = 2.0**k1
    b = profile_from_series(ENT, e.scaled_by(c), g.scaled_by(c), PERIOD)
    assert a.curve == b.curve
    d = profile_from_series(ENT, e.scaled_by(2.0**k2), g, PERIOD)
    assert np.allclose(np.asarray(d.curve), np.asarray(a.curve) * 2.0**k2, rtol=1e-12, atol=0)


@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=53, max_size=53).filter(lambda c: sum(c) > 0),
       st.lists(st.integers(-30, 400), min_size=2, max_size=10))
def test_relative_attention_is_monotone_in_date(steps, offsets):
    p = profile(np.cumsum(steps).tolist())
    days = sorted(dt.date(2020, 1, 1) + dt.timedelta(days=o) for o in offsets)
    vals = [relative_attention_at(p, d) for d in days]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)
