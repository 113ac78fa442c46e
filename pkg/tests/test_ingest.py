import datetime as dt
import io
import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from factattn.ingest import (
    CANONICAL_COLUMNS,
    ConfigError,
    FactCheckRecord,
    ScopeConfig,
    filter_scope,
    normalize_rating,
    parse_date,
    parse_factchecks,
    read_jsonl,
    write_factchecks_csv,
    write_jsonl,
)

IFCN_MAP = {
    "date": "Date",
    "country": "Country",
    "organization": "Organization",
    "claim_text": "What was fact-checked?",
    "rating": "Final rating",
}
HEADER = "Date,Country,Organization,What was fact-checked?,Final rating\n"


def test_table_one_style_row():
    text = HEADER + "2020-03-15,ZA,Africa Check,Footballer Ronaldo is turning his hotels into hospitals,False\n"
    recs, errs = parse_factchecks(io.StringIO(text), IFCN_MAP)
    assert errs == []
    (r,) = recs
    assert r.date == dt.date(2020, 3, 15)
    assert r.country_code == "ZA"
    assert r.rating == "false"
    assert "Ronaldo" in r.claim_text


def test_empty_stream_with_header():
    assert parse_factchecks(HEADER, IFCN_MAP) == ([], [])


def test_blank_claim_goes_to_errors_only():
    recs, errs = parse_factchecks(HEADER + "2020-03-15,ZA,Org,   ,False\n", IFCN_MAP)
    assert recs == []
    assert [(e.row, e.reason) for e in errs] == [(0, "empty claim")]


def test_bad_date_is_a_row_error():
    recs, errs = parse_factchecks(HEADER + "someday,ZA,Org,claim,False\n", IFCN_MAP)
    assert recs == [] and "unparseable date" in errs[0].reason


def test_missing_mapped_column_is_config_error():
    with pytest.raises(ConfigError, match="Final rating"):
        parse_factchecks("Date,Country,Organization,What was fact-checked?\n", IFCN_MAP)
    with pytest.raises(ConfigError, match="rating"):
        parse_factchecks(HEADER, {k: v for k, v in IFCN_MAP.items() if k != "rating"})


def test_tab_delimited_input():
    text = HEADER.replace(",", "\t") + "2020-03-15\tBR\tLupa\tclaim, with comma\tMisleading\n"
    (r,), _ = parse_factchecks(text, IFCN_MAP)
    assert r.claim_text == "claim, with comma" and r.rating == "misleading"


@pytest.mark.parametrize("text", ["15th of March of 2020", "15 March 2020", "March 15, 2020",
                                  "2020/03/15", "15/03/2020", "15.03.2020"])
def test_spelled_out_dates(text):
    assert parse_date(text) == dt.date(2020, 3, 15)


@pytest.mark.parametrize("raw,expected", [("False", "false"), ("Partly false", "partly_false"),
                                          ("No evidence", "no_evidence"), ("True", "other"),
                                          ("MISLEADING", "misleading")])
def test_rating_normalization(raw, expected):
    assert normalize_rating(raw) == expected


def test_multi_country_cell_splits_records():
    recs, _ = parse_factchecks(HEADER + "2020-03-15,AR; BR,Org,claim,False\n", IFCN_MAP)
    assert [(r.record_id, r.country_code) for r in recs] == [("r00000.AR", "AR"), ("r00000.BR", "BR")]


def rec(country="BR", date=dt.date(2020, 5, 1), rid="x"):
    return FactCheckRecord(rid, date, country, "org", "claim", "false")


def test_scope_drops_regions_and_noisy_countries():
    scope = ScopeConfig(excluded_countries=("MW", "KR", "TL", "KG"))
    kept, dropped = filter_scope(
        [rec("Middle East", rid="a"), rec("MW", rid="b"), rec("BR", rid="c"),
         rec("BR", dt.date(2021, 1, 2), rid="d")], scope)
    assert [r.record_id for r in kept] == ["c"]
    assert [(r.record_id, why) for r, why in dropped] == [
        ("a", "region"), ("b", "excluded country"), ("d", "outside window")]


def test_scope_without_exclusions_keeps_in_window_record():
    kept, dropped = filter_scope([rec()], ScopeConfig())
    assert kept == [rec()] and dropped == []


def test_scope_window_must_be_ordered():
    with pytest.raises(ConfigError):
        ScopeConfig(window_start=dt.date(2020, 2, 1), window_end=dt.date(2020, 1, 1))


words = st.text(alphabet=string.ascii_letters + " ,;'\"-", min_size=1, max_size=40).filter(str.strip)
records_st = st.builds(
    FactCheckRecord,
    record_id=st.from_regex(r"[a-z][a-z0-9]{0,8}", fullmatch=True),
    date=st.dates(dt.date(2019, 1, 1), dt.date(2021, 12, 31)),
    country_code=st.sampled_from(["BR", "US", "ZA", "IN", "EU"]),
    organization=st.text(alphabet=string.ascii_letters + " ", max_size=15).map(str.strip),
    claim_text=words.map(str.strip),
    rating=st.sampled_from(["false", "misleading", "partly_false", "no_evidence", "other"]),
    source_platform=st.sampled_from(["", "Facebook", "WhatsApp"]),
    article_url=st.sampled_from(["", "https://x.example/a?b=c,d"]),
    language=st.sampled_from(["", "English"]),
    explanation=st.text(alphabet=string.ascii_letters + " ,.", max_size=30).map(str.strip),
)


@given(st.lists(records_st, max_size=12, unique_by=lambda r: r.record_id))
def test_round_trip_is_stable(records):
    kept, _ = filter_scope(records, ScopeConfig())
    buf = io.StringIO()
    write_factchecks_csv(kept, buf)
    again, errors = parse_factchecks(buf.getvalue(), CANONICAL_COLUMNS)
    assert errors == []
    assert again == kept
    buf2 = io.StringIO()
    write_factchecks_csv(again, buf2)
    assert buf2.getvalue() == buf.getvalue()
    lines = io.StringIO()
    write_jsonl(again, lines)
    lines.seek(0)
    assert read_jsonl(lines) == kept


@given(st.lists(records_st, max_size=20),
       st.lists(st.sampled_from(["BR", "US", "ZA"]), max_size=2))
def test_filter_scope_partitions_input(records, excluded):
    kept, dropped = filter_scope(records, ScopeConfig(excluded_countries=tuple(excluded)))
    assert len(kept) + len(dropped) == len(records)
    out = [id(r) for r in kept] + [id(r) for r, _ in dropped]
    assert sorted(out) == sorted(id(r) for r in records)
