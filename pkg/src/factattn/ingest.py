"""Parsing, validation and scope filtering of fact-check metadata exports."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import re
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable

RATINGS = ("false", "misleading", "partly_false", "no_evidence", "other")
CLUSTERABLE_RATINGS = frozenset({"false", "misleading", "partly_false", "no_evidence"})

REQUIRED_FIELDS = ("date", "country", "claim_text", "rating")
OPTIONAL_FIELDS = (
    "record_id",
    "organization",
    "source_platform",
    "article_url",
    "language",
    "explanation",
)

# ISO 3166-1 alpha-2, officially assigned codes.
ISO_ALPHA2 = frozenset(
    """
    AD AE AF AG AI AL AM AO AQ AR AS AT AU AW AX AZ BA BB BD BE BF BG BH BI BJ
    BL BM BN BO BQ BR BS BT BV BW BY BZ CA CC CD CF CG CH CI CK CL CM CN CO CR
    CU CV CW CX CY CZ DE DJ DK DM DO DZ EC EE EG EH ER ES ET FI FJ FK FM FO FR
    GA GB GD GE GF GG GH GI GL GM GN GP GQ GR GS GT GU GW GY HK HM HN HR HT HU
    ID IE IL IM IN IO IQ IR IS IT JE JM JO JP KE KG KH KI KM KN KP KR KW KY KZ
    LA LB LC LI LK LR LS LT LU LV LY MA MC MD ME MF MG MH MK ML MM MN MO MP MQ
    MR MS MT MU MV MW MX MY MZ NA NC NE NF NG NI NL NO NP NR NU NZ OM PA PE PF
    PG PH PK PL PM PN PR PS PT PW PY QA RE RO RS RU RW SA SB SC SD SE SG SH SI
    SJ SK SL SM SN SO SR SS ST SV SX SY SZ TC TD TF TG TH TJ TK TL TM TN TO TR
    TT TV TW TZ UA UG UM US UY UZ VA VC VE VG VI VN VU WF WS YE YT ZA ZM ZW
    """.split()
)

_RATING_ALIASES = {
    "false": "false",
    "mostly false": "false",
    "fake": "false",
    "misleading": "misleading",
    "partly false": "partly_false",
    "partially false": "partly_false",
    "partly_false": "partly_false",
    "half true": "partly_false",
    "no evidence": "no_evidence",
    "no_evidence": "no_evidence",
    "unproven": "no_evidence",
}

_DATE_FORMATS = (
    "%Y-%m-%d",
    "%Y/%m/%d",
    "%d/%m/%Y",
    "%d.%m.%Y",
    "%d %B %Y",
    "%d %b %Y",
    "%B %d %Y",
    "%b %d %Y",
    "%d of %B of %Y",
    "%d of %B %Y",
)
_ORDINAL = re.compile(r"(\d+)(st|nd|rd|th)\b", re.IGNORECASE)
_COUNTRY_SPLIT = re.compile(r"\s*[;|]\s*")


class ConfigError(ValueError):
    """A column map, scope or other configuration input is unusable."""


@dataclass(frozen=True)
class FactCheckRecord:
    record_id: str
    date: dt.date
    country_code: str
    organization: str
    claim_text: str
    rating: str
    source_platform: str = ""
    article_url: str = ""
    language: str = ""
    explanation: str = ""

    @property
    def is_region(self) -> bool:
        return self.country_code not in ISO_ALPHA2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["date"] = self.date.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FactCheckRecord":
        d = dict(d)
        d["date"] = dt.date.fromisoformat(d["date"])
        return cls(**d)


@dataclass(frozen=True)
class RowError:
    row: int
    reason: str
    raw: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"row": self.row, "reason": self.reason, "raw": self.raw}


@dataclass(frozen=True)
class ScopeConfig:
    window_start: dt.date = dt.date(2020, 1, 1)
    window_end: dt.date = dt.date(2020, 12, 31)
    excluded_regions: tuple[str, ...] = ()
    excluded_countries: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.window_start < self.window_end:
            raise ConfigError(
                f"window_start {self.window_start} must precede window_end {self.window_end}"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "ScopeConfig":
        kw = {}
        for key in ("window_start", "window_end"):
            if key in d:
                kw[key] = dt.date.fromisoformat(str(d[key]))
        for key in ("excluded_regions", "excluded_countries"):
            if key in d:
                kw[key] = tuple(d[key])
        return cls(**kw)


def parse_date(text: str) -> dt.date:
    """Parse ISO-8601 or one of a handful of spelled-out day formats."""
    s = _ORDINAL.sub(r"\1", text.strip())
    s = re.sub(r"\s+", " ", s.replace(",", " ")).strip()
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(s, fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparseable date {text!r}")


def normalize_rating(text: str) -> str:
    key = re.sub(r"\s+", " ", text.strip().lower().replace("-", " "))
    return _RATING_ALIASES.get(key, "other")


def normalize_country(text: str) -> str:
    s = text.strip()
    if len(s) == 2 and s.upper() in ISO_ALPHA2:
        return s.upper()
    return s


def _sniff_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def parse_factchecks(
    source: IO[str] | str, column_map: dict[str, str]
) -> tuple[list[FactCheckRecord], list[RowError]]:
    """Parse a delimited export into records plus per-row validation errors.

    ``column_map`` maps record field names to header names in the export.
    The country cell may hold several codes separated by ``;`` or ``|``, in
    which case one record per country is emitted (ids get a ``.CC`` suffix).
    """
    missing = [f for f in REQUIRED_FIELDS if f not in column_map]
    if missing:
        raise ConfigError(f"column map lacks required fields: {', '.join(missing)}")
    text = source if isinstance(source, str) else source.read()
    if not text.strip():
        raise ConfigError("input has no header row")
    header = text.splitlines()[0]
    reader = csv.DictReader(io.StringIO(text), delimiter=_sniff_delimiter(header))
    columns = set(reader.fieldnames or ())
    absent = [f"{f}->{c}" for f, c in column_map.items() if c not in columns]
    if absent:
        raise ConfigError(f"mapped columns not in header: {', '.join(absent)}")

    records: list[FactCheckRecord] = []
    errors: list[RowError] = []
    for i, row in enumerate(reader):
        raw = {k: v for k, v in row.items() if k is not None}
        get = lambda f: (raw.get(column_map[f]) or "").strip() if f in column_map else ""
        claim = get("claim_text")
        if not claim:
            errors.append(RowError(i, "empty claim", raw))
            continue
        try:
            date = parse_date(get("date"))
        except ValueError as exc:
            errors.append(RowError(i, str(exc), raw))
            continue
        countries = [c for c in _COUNTRY_SPLIT.split(get("country")) if c]
        if not countries:
            errors.append(RowError(i, "empty country", raw))
            continue
        base_id = get("record_id") or f"r{i:05d}"
        for code in countries:
            code = normalize_country(code)
            rid = base_id if len(countries) == 1 else f"{base_id}.{code}"
            records.append(
                FactCheckRecord(
                    record_id=rid,
                    date=date,
                    country_code=code,
                    organization=get("organization"),
                    claim_text=claim,
                    rating=normalize_rating(get("rating")),
                    source_platform=get("source_platform"),
                    article_url=get("article_url"),
                    language=get("language"),
                    explanation=get("explanation"),
                )
            )
    return records, errors


def filter_scope(
    records: Iterable[FactCheckRecord], scope: ScopeConfig
) -> tuple[list[FactCheckRecord], list[tuple[FactCheckRecord, str]]]:
    kept, dropped = [], []
    excluded_regions = set(scope.excluded_regions)
    excluded_countries = set(scope.excluded_countries)
    for rec in records:
        if rec.is_region or rec.country_code in excluded_regions:
            dropped.append((rec, "region"))
        elif rec.country_code in excluded_countries:
            dropped.append((rec, "excluded country"))
        elif not scope.window_start <= rec.date <= scope.window_end:
            dropped.append((rec, "outside window"))
        else:
            kept.append(rec)
    return kept, dropped


# Canonical column map used when re-serializing records to CSV.
CANONICAL_COLUMNS = {
    "record_id": "Record ID",
    "date": "Date",
    "country": "Country",
    "organization": "Organization",
    "claim_text": "What was fact-checked?",
    "source_platform": "Who said/posted it?",
    "article_url": "URL to article",
    "language": "Language of fact-check",
    "rating": "Final rating",
    "explanation": "Explanation",
}

_RATING_LABELS = {
    "false": "False",
    "misleading": "Misleading",
    "partly_false": "Partly false",
    "no_evidence": "No evidence",
    "other": "Other",
}


def write_factchecks_csv(records: Iterable[FactCheckRecord], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    fields = list(CANONICAL_COLUMNS)
    writer.writerow([CANONICAL_COLUMNS[f] for f in fields])
    for rec in records:
        d = rec.to_dict()
        d["country"] = d.pop("country_code")
        d["rating"] = _RATING_LABELS[rec.rating]
        writer.writerow([d[f] for f in fields])


def write_jsonl(records: Iterable[FactCheckRecord], out: IO[str]) -> int:
    n = 0
    for rec in records:
        out.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        n += 1
    return n


def read_jsonl(source: IO[str]) -> list[FactCheckRecord]:
    return [FactCheckRecord.from_dict(json.loads(line)) for line in source if line.strip()]
