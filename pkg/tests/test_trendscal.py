import json
import logging

import numpy as np
import pytest
from helpers import small_config, table_world
from hypothesis import given, settings
from hypothesis import strategies as st

from factattn import synthprov
from factattn.httpclient import JsonClient, TransportError
from factattn.synthprov import GOOGLE, REFERENCE_QUERY, generate_world, simulate_provider
from factattn.trendscal import (
    LO_BAND,
    MISS,
    Anchor,
    AnchorBank,
    AnchorBankError,
    CacheCorruptError,
    CalibratedSeries,
    CalibrationError,
    LiveTrendsProvider,
    Period,
    RawGroupResponse,
    SeriesCache,
    build_anchor_bank,
    calibrate,
    fetch_all,
    fetch_group,
)

PERIOD = Period.years()
N = len(PERIOD.labels())


def test_period_spans_two_full_years():
    labels = PERIOD.labels()
    assert len(labels) == 105 and labels[0] == "2019-W01" and labels[-1] == "2020-W53"


def test_fetch_group_normalizes_to_group_max():
    w = table_world({"BR": {"a": 200.0, "b": 100.0, "c": 0.5}})
    prov = simulate_provider(w)
    r = fetch_group(prov, ["a", "b"], "BR", PERIOD)
    assert (r.max_of("a"), r.max_of("b")) == (100, 50)
    assert fetch_group(prov, ["b"], "BR", PERIOD).max_of("b") == 100
    r = fetch_group(prov, ["a", "c"], "BR", PERIOD)
    assert r.series["c"] is None and r.max_of("a") == 100
    assert fetch_group(prov, ["zz"], "BR", PERIOD).no_signal
    with pytest.raises(ValueError):
        fetch_group(prov, list("abcdef"), "BR", PERIOD)


def test_fetch_group_retries_transport_errors():
    class Flaky:
        calls = 0

        def query(self, queries, country, period):
            Flaky.calls += 1
            if Flaky.calls < 3:
                raise TransportError("boom")
            return {q: [100] * N for q in queries}

    sleeps = []
    r = fetch_group(Flaky(), ["a"], "BR", PERIOD, retries=3, backoff=0.25, sleep=sleeps.append)
    assert r.max_of("a") == 100 and sleeps == [0.25, 0.5]
    Flaky.calls = -10
    with pytest.raises(TransportError, match="retry budget"):
        fetch_group(Flaky(), ["a"], "BR", PERIOD, retries=1, sleep=lambda s: None)


def test_raw_response_rejects_broken_groups():
    with pytest.raises(CalibrationError):
        RawGroupResponse("BR", PERIOD, {"a": (50,) * 3})
    with pytest.raises(CalibrationError):
        RawGroupResponse("BR", PERIOD, {"a": (101,) * 3})


class FixedPairs:
    """Provider answering every pair from a table of maxima."""

    def __init__(self, maxima):
        self.maxima = maxima

    def query(self, queries, country, period):
        out = {}
        for q in queries:
            other = [p for p in queries if p != q]
            m = self.maxima.get((q, other[0]) if other else (q, q), 100)
            out[q] = None if m is None else [m] * N
        return out


def test_bank_single_hop_interval():
    prov = FixedPairs({("ref", "a"): 100, ("a", "ref"): 20})
    bank = build_anchor_bank(prov, ["ref", "a"], "BR", PERIOD, reference="ref")
    a = bank.get("a")
    assert a.ratio == pytest.approx(0.2, rel=1e-15)
    assert a.lo == pytest.approx(19.5 / 100.5, rel=1e-15)
    assert a.hi == pytest.approx(20.5 / 99.5, rel=1e-15)
    assert a.error_bound > 0 and np.isfinite(a.error_bound)
    ref = bank.get("ref")
    assert (ref.ratio, ref.lo, ref.hi, ref.error_bound) == (1.0, 1.0, 1.0, 0.0)


def test_bank_reference_only_and_exclusion():
    bank = build_anchor_bank(FixedPairs({}), ["ref"], "BR", PERIOD, reference="ref")
    assert [a.query for a in bank.anchors] == ["ref"]
    prov = FixedPairs({("ref", "a"): 100, ("a", "ref"): 20, ("b", "ref"): None, ("ref", "b"): 100})
    bank = build_anchor_bank(prov, ["ref", "a", "b"], "BR", PERIOD, reference="ref")
    assert "b" in bank.excluded and bank.get("b") is None
    with pytest.raises(AnchorBankError):
        build_anchor_bank(FixedPairs({("x", "ref"): None, ("ref", "x"): 100}), ["ref", "x"], "BR",
                          PERIOD, reference="ref")


def test_bank_invariants_enforced():
    ref = Anchor("ref", 1.0, 1.0, 1.0)
    with pytest.raises(CalibrationError):
        AnchorBank("BR", "ref", (ref, Anchor("a", 1.0, 0.9, 1.1)))
    with pytest.raises(CalibrationError):
        AnchorBank("BR", "ref", (Anchor("ref", 0.9, 0.9, 0.9),))


def test_calibrate_against_reference_directly():
    w = table_world({"BR": {"ref": 100.0, "e": 50.0}})
    prov = simulate_provider(w)
    bank = build_anchor_bank(prov, ["ref"], "BR", PERIOD, reference="ref")
    s = calibrate(prov, bank, "e", "BR", PERIOD)
    assert max(s.raw) == 50 and s.scale == pytest.approx(0.01)
    assert s.values.max() == pytest.approx(0.5)
    same = calibrate(prov, bank, "ref", "BR", PERIOD)
    assert same.values.max() == pytest.approx(1.0) and same.hops == 0


def test_calibrate_known_ratio():
    t = np.linspace(0.5, 1.0, N)
    tables = {"ref": t * 100, "u1": t * 160, "d1": t * 61, "d2": t * 36, "e": t * 37}
    prov = simulate_provider(table_world({"BR": tables}))
    bank = build_anchor_bank(prov, ["u1", "ref", "d1", "d2"], "BR", PERIOD, reference="ref")
    s = calibrate(prov, bank, "e", "BR", PERIOD)
    truth = 0.37 * t
    blo, bhi = s.value_bounds()
    assert np.all(blo <= truth * (1 + 1e-12)) and np.all(truth <= bhi * (1 + 1e-12))
    lo, hi = s.error_bound
    assert lo <= 1.0 <= hi and hi - lo < 0.1
    assert abs(s.values.max() / 0.37 - 1) < 0.05


def test_calibrate_no_signal():
    tables = {"ref": 100.0, "d1": 40.0, "e": 1e-4}
    prov = simulate_provider(table_world({"BR": tables}))
    bank = build_anchor_bank(prov, ["ref", "d1"], "BR", PERIOD, reference="ref")
    assert calibrate(prov, bank, "e", "BR", PERIOD) is None
    with pytest.raises(CalibrationError):
        calibrate(prov, bank, "e", "AR", PERIOD)


def series(scale=0.01, raw=None):
    raw = tuple(raw or [10] * N)
    return CalibratedSeries("/m/x", "BR", PERIOD.labels(), raw, scale, scale * 0.99, scale * 1.01)


def test_series_invariants():
    with pytest.raises(CalibrationError):
        CalibratedSeries("/m/x", "BR", PERIOD.labels()[:3], (1, 2), 1.0, 1.0, 1.0)
    labels = PERIOD.labels()
    with pytest.raises(CalibrationError):
        CalibratedSeries("/m/x", "BR", (labels[0], labels[2]), (1, 2), 1.0, 1.0, 1.0)
    s = series()
    assert len(s.weeks) == len(s.values) and (s.values >= 0).all()


def test_cache_round_trip_miss_overwrite(tmp_path, caplog):
    cache = SeriesCache(tmp_path)
    assert cache.get("/m/x", "BR", PERIOD) is MISS
    cache.put("/m/x", "BR", PERIOD, series())
    assert cache.get("/m/x", "BR", PERIOD) == series()
    doc = json.loads(cache.path("/m/x", "BR").read_text())
    assert {"weeks", "values", "error_bound", "fetched_at"} <= set(doc)
    with caplog.at_level(logging.INFO):
        cache.put("/m/x", "BR", PERIOD, series(0.02))
    assert "overwriting" in caplog.text
    assert cache.get("/m/x", "BR", PERIOD) == series(0.02)
    cache.put("/m/y", "BR", PERIOD, None)
    assert cache.get("/m/y", "BR", PERIOD) is None
    assert cache.get("/m/x", "BR", Period.years(2020, 2020)) is MISS
    cache.evict("/m/x", "BR")
    assert cache.get("/m/x", "BR", PERIOD) is MISS


def test_cache_corruption(tmp_path):
    cache = SeriesCache(tmp_path)
    cache.put("/m/x", "BR", PERIOD, series())
    cache.path("/m/x", "BR").write_text("{not json")
    with pytest.raises(CacheCorruptError, match="BR//m/x"):
        cache.get("/m/x", "BR", PERIOD)
    assert SeriesCache(tmp_path, repair=True).get("/m/x", "BR", PERIOD) is MISS


def calibrate_world(world, country, entities):
    prov = simulate_provider(world)
    bank = build_anchor_bank(prov, world.anchor_candidates, country, PERIOD, REFERENCE_QUERY)
    return bank, {e: calibrate(prov, bank, e, country, PERIOD) for e in entities}


@settings(max_examples=1000)
@given(st.integers(0, 2**31 - 1))
def test_calibration_recovers_truth_within_bound(seed):
    world = generate_world(small_config(countries=("BR",)), seed)
    ents = [GOOGLE.entity_id] + [e.entity_id for e in world.entities]
    _, got = calibrate_world(world, "BR", ents)
    for e, s in got.items():
        assert s is not None
        truth = world.true_reference_units(e, "BR")
        lo, hi = s.value_bounds()
        assert np.all(lo <= truth * (1 + 1e-12)) and np.all(truth <= hi * (1 + 1e-12))
        tlo, thi = s.total_bounds()
        assert tlo <= truth.sum() * (1 + 1e-12) and truth.sum() <= thi * (1 + 1e-12)
        if s.chain_length <= 4 and s.min_value >= 20:
            assert max(1 - s.error_bound[0], s.error_bound[1] - 1) <= 0.05


@given(st.integers(0, 2**31 - 1), st.integers(-30, 30))
def test_calibration_is_scale_free(seed, k):
    world = generate_world(small_config(countries=("AR",), n_entities=4), seed)
    ents = [e.entity_id for e in world.entities]
    bank1, a = calibrate_world(world, "AR", ents)
    bank2, b = calibrate_world(world.scaled(2.0**k), "AR", ents)
    assert bank1 == bank2 and a == b


@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 20), min_size=1, max_size=5, unique=True))
def test_every_simulated_response_peaks_at_100(seed, picks):
    world = generate_world(small_config(countries=("BR",)), seed)
    qs = [world.queries[i % len(world.queries)] for i in picks]
    qs = list(dict.fromkeys(qs))
    r = fetch_group(simulate_provider(world), qs, "BR", PERIOD)
    live = [s for s in r.series.values() if s is not None]
    assert not live or max(max(s) for s in live) == 100
    assert all(isinstance(v, int) and 0 <= v <= 100 for s in live for v in s)


def test_fetch_all_caches_and_reports_failures(tmp_path):
    cfg = small_config(countries=("AR", "BR", "MW"), noisy_countries=("MW",), missing_rate=0.25)
    world = generate_world(cfg, 5)
    ents = [GOOGLE.entity_id] + [e.entity_id for e in world.entities]
    cache = SeriesCache(tmp_path)
    s = fetch_all(simulate_provider(world), ents, world.countries, world.anchor_candidates,
                  cache, PERIOD, REFERENCE_QUERY, max_in_flight=3)
    assert list(s.failed_countries) == ["MW"]
    assert s.no_signal == len(world.missing) == 3
    assert s.calibrated == 2 * len(ents) - 3
    assert cache.get_bank("AR", PERIOD) is not None
    again = fetch_all(simulate_provider(world), ents, ["AR", "BR"], world.anchor_candidates,
                      cache, PERIOD, REFERENCE_QUERY)
    assert again.cached == 2 * len(ents) and again.calibrated == 0


def test_live_provider_contract():
    class Session:
        def get(self, url, params=None, timeout=None):
            self.params = params

            class R:
                status_code = 200

                def json(self_inner):
                    return {"series": {"a": [100, 50], "b": None}}
            return R()

    sess = Session()
    prov = LiveTrendsProvider("https://trends.example/api", JsonClient(sess, rate=0))
    out = prov.query(["a", "b"], "BR", ("2019-W01", "2020-W53"))
    assert out == {"a": [100, 50], "b": None}
    assert sess.params == {"q": ["a", "b"], "geo": "BR", "start": "2019-W01", "end": "2020-W53"}


def test_lo_band_is_ten():
    assert LO_BAND == 10
