"""Search-interest series on a country-universal scale via anchor banks.

The trends service normalises every request to its own maximum (100) and
rounds to integers, so values from different requests are not comparable.
An anchor bank fixes that per country: a ladder of queries whose popularity
ratios to one reference query are measured by co-querying neighbours. A new
query is co-queried with a ladder anchor of similar popularity and rescaled
into reference units (1.0 = the reference query's peak weekly volume).

Rounding is carried as interval arithmetic: an observed integer ``v`` stands
for a true value in ``[v - 0.5, v + 0.5]``.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .httpclient import JsonClient, TransportError
from .weeks import is_contiguous, week_labels

log = logging.getLogger(__name__)

LO_BAND = 10
MAX_GROUP = 5


class CalibrationError(RuntimeError):
    pass


class AnchorBankError(CalibrationError):
    pass


class CacheCorruptError(RuntimeError):
    pass


class TrendsProvider(Protocol):
    def query(self, queries: Sequence[str], country: str,
              period: tuple[str, str]) -> Mapping[str, Sequence[int] | None]: ...


@dataclass(frozen=True)
class Period:
    start: str
    end: str

    @classmethod
    def years(cls, start_year: int = 2019, end_year: int = 2020) -> "Period":
        labels = week_labels(start_year, end_year)
        return cls(labels[0], labels[-1])

    def labels(self) -> tuple[str, ...]:
        y0, y1 = int(self.start[:4]), int(self.end[:4])
        all_labels = week_labels(y0, y1)
        return all_labels[all_labels.index(self.start): all_labels.index(self.end) + 1]

    def as_tuple(self) -> tuple[str, str]:
        return (self.start, self.end)


@dataclass(frozen=True)
class RawGroupResponse:
    country: str
    period: Period
    series: dict[str, tuple[int, ...] | None]

    def __post_init__(self):
        live = [s for s in self.series.values() if s is not None]
        for q, s in self.series.items():
            if s is not None and any(v < 0 or v > 100 for v in s):
                raise CalibrationError(f"{q}: values outside 0..100")
        if live and max(max(s) for s in live) != 100:
            raise CalibrationError("group maximum is not 100")

    @property
    def no_signal(self) -> bool:
        return all(s is None for s in self.series.values())

    def max_of(self, query: str) -> int | None:
        s = self.series.get(query)
        return None if s is None else max(s)


def fetch_group(
    provider: TrendsProvider,
    queries: Sequence[str],
    country: str,
    period: Period,
    retries: int = 3,
    backoff: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> RawGroupResponse:
    if not 1 <= len(queries) <= MAX_GROUP:
        raise ValueError(f"a group holds 1..{MAX_GROUP} queries, got {len(queries)}")
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            raw = provider.query(list(queries), country, period.as_tuple())
            break
        except TransportError as exc:
            last = exc
            if attempt < retries:
                sleep(backoff * 2**attempt)
    else:
        raise TransportError(f"{country} {list(queries)}: retry budget exhausted ({last})")
    series = {q: (None if raw.get(q) is None else tuple(int(v) for v in raw[q])) for q in queries}
    return RawGroupResponse(country, period, series)


@dataclass(frozen=True)
class Anchor:
    query: str
    ratio: float
    lo: float
    hi: float
    hops: int = 0
    min_value: int = 100

    @property
    def error_bound(self) -> float:
        """Largest relative deviation of the true ratio from ``ratio``."""
        return max(self.hi / self.ratio - 1.0, 1.0 - self.lo / self.ratio)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "ratio": self.ratio,
            "lo": self.lo,
            "hi": self.hi,
            "hops": self.hops,
            "min_value": self.min_value,
            "error_bound": self.error_bound,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Anchor":
        return cls(d["query"], d["ratio"], d["lo"], d["hi"], d.get("hops", 0),
                   d.get("min_value", 100))


@dataclass(frozen=True)
class AnchorBank:
    country: str
    reference: str
    anchors: tuple[Anchor, ...]  # most popular first
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        ratios = [a.ratio for a in self.anchors]
        if any(a <= b for a, b in zip(ratios, ratios[1:])):
            raise CalibrationError("anchor ratios must strictly decrease")
        ref = self.get(self.reference)
        if ref is None or ref.ratio != 1.0 or ref.lo != 1.0 or ref.hi != 1.0:
            raise CalibrationError("reference must be in the bank with ratio exactly 1")

    def get(self, query: str) -> Anchor | None:
        return next((a for a in self.anchors if a.query == query), None)

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "reference": self.reference,
            "anchors": [a.to_dict() for a in self.anchors],
            "excluded": list(self.excluded),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnchorBank":
        return cls(d["country"], d["reference"], tuple(Anchor.from_dict(a) for a in d["anchors"]),
                   tuple(d.get("excluded", ())))


def _link(prev: Anchor, query: str, m_prev: int, m_new: int) -> Anchor:
    return Anchor(
        query=query,
        ratio=prev.ratio * (m_new / m_prev),
        lo=prev.lo * ((m_new - 0.5) / (m_prev + 0.5)),
        hi=prev.hi * ((m_new + 0.5) / (m_prev - 0.5)),
        hops=prev.hops + 1,
        min_value=min(prev.min_value, m_prev, m_new),
    )


def build_anchor_bank(
    provider: TrendsProvider,
    candidates: Sequence[str],
    country: str,
    period: Period,
    reference: str | None = None,
    lo_band: int = LO_BAND,
) -> AnchorBank:
    """Chain candidates to the reference by co-querying neighbours.

    ``candidates`` are ordered from most to least popular (a rough order is
    enough) and must include ``reference`` (default: the middle candidate).
    Walking outwards from the reference, each candidate is co-queried with
    the last anchor accepted on that side; it joins the bank if both maxima
    land in ``[lo_band, 100]``, otherwise it is excluded.
    """
    if reference is None:
        reference = candidates[len(candidates) // 2]
    if reference not in candidates:
        raise AnchorBankError(f"{country}: reference {reference} not among candidates")
    r = list(candidates).index(reference)
    ref = Anchor(reference, 1.0, 1.0, 1.0)
    accepted = [ref]
    excluded = []
    for side in (list(candidates[r + 1:]), list(reversed(candidates[:r]))):
        prev = ref
        for cand in side:
            resp = fetch_group(provider, [prev.query, cand], country, period)
            m_prev, m_new = resp.max_of(prev.query), resp.max_of(cand)
            if m_prev is None or m_new is None or min(m_prev, m_new) < lo_band:
                log.debug("%s: anchor %s excluded (%s, %s)", country, cand, m_prev, m_new)
                excluded.append(cand)
                continue
            prev = _link(prev, cand, m_prev, m_new)
            accepted.append(prev)
    if len(candidates) > 1 and len(accepted) == 1:
        raise AnchorBankError(f"{country}: no candidate could be chained to {reference}")
    accepted.sort(key=lambda a: (-a.ratio, a.hops))
    unique = []
    for a in accepted:
        if unique and a.ratio >= unique[-1].ratio:
            excluded.append(a.query)
            continue
        unique.append(a)
    return AnchorBank(country, reference, tuple(unique), tuple(excluded))


@dataclass(frozen=True)
class CalibratedSeries:
    entity_id: str
    country: str
    weeks: tuple[str, ...]
    raw: tuple[int, ...]
    scale: float
    scale_lo: float
    scale_hi: float
    anchor: str = ""
    hops: int = 0
    min_value: int = 100
    fetched_at: str = ""

    def __post_init__(self):
        if len(self.weeks) != len(self.raw):
            raise CalibrationError("weeks and values differ in length")
        if not is_contiguous(self.weeks):
            raise CalibrationError("week labels must be contiguous and increasing")
        if not 0 < self.scale_lo <= self.scale <= self.scale_hi:
            raise CalibrationError("scale must lie inside its bounds")

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.raw, dtype=float) * self.scale

    @property
    def error_bound(self) -> tuple[float, float]:
        """Multiplicative interval around ``scale``: true scale in ``scale * [lo, hi]``."""
        return (self.scale_lo / self.scale, self.scale_hi / self.scale)

    @property
    def chain_length(self) -> int:
        """Number of measured ratios behind ``scale`` (bank hops plus the entity pair)."""
        return self.hops + 1

    def raw_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(self.raw, dtype=float)
        return np.maximum(raw - 0.5, 0.0), raw + 0.5

    def value_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.raw_bounds()
        return lo * self.scale_lo, hi * self.scale_hi

    def total(self) -> float:
        return float(self.values.sum())

    def total_bounds(self) -> tuple[float, float]:
        lo, hi = self.value_bounds()
        return float(lo.sum()), float(hi.sum())

    def scaled_by(self, factor: float) -> "CalibratedSeries":
        return CalibratedSeries(self.entity_id, self.country, self.weeks, self.raw,
                                self.scale * factor, self.scale_lo * factor,
                                self.scale_hi * factor, self.anchor, self.hops,
                                self.min_value, self.fetched_at)

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "country": self.country,
            "weeks": list(self.weeks),
            "values": self.values.tolist(),
            "raw": list(self.raw),
            "scale": self.scale,
            "scale_lo": self.scale_lo,
            "scale_hi": self.scale_hi,
            "error_bound": list(self.error_bound),
            "anchor": self.anchor,
            "hops": self.hops,
            "min_value": self.min_value,
            "fetched_at": self.fetched_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibratedSeries":
        return cls(d["entity_id"], d["country"], tuple(d["weeks"]), tuple(d["raw"]),
                   d["scale"], d["scale_lo"], d["scale_hi"], d.get("anchor", ""),
                   d.get("hops", 0), d.get("min_value", 100), d.get("fetched_at", ""))


def _classify(m_e: int | None, m_a: int | None) -> int:
    """-1: entity above the anchor, +1: below, 0: comparable."""
    if m_e is None:
        return 1
    if m_a is None:
        return -1
    if m_e == 100 and m_a < 100:
        return -1
    if m_a == 100 and m_e < 100:
        return 1
    return 0


def calibrate(
    provider: TrendsProvider,
    bank: AnchorBank,
    entity: str,
    country: str,
    period: Period,
    lo_band: int = LO_BAND,
) -> CalibratedSeries | None:
    """Express ``entity`` in the bank's reference units, or ``None`` for no signal.

    Binary search over the ladder finds where the entity's popularity sits;
    the probed anchors that bracket it are compared and the one whose pair
    has the larger smaller-maximum (least rounding error) is used.
    """
    if bank.country != country:
        raise CalibrationError(f"bank for {bank.country} used for {country}")
    ladder = bank.anchors
    probes: dict[int, RawGroupResponse] = {}

    def probe(i: int) -> int:
        if i not in probes:
            probes[i] = fetch_group(provider, [entity, ladder[i].query], country, period)
        r = probes[i]
        return _classify(r.max_of(entity), r.max_of(ladder[i].query))

    lo, hi = 0, len(ladder) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        side = probe(mid)
        if side < 0:
            hi = mid - 1
        elif side > 0:
            lo = mid + 1
        else:
            lo = hi = mid
            break
    for i in {hi, lo}:
        if 0 <= i < len(ladder):
            probe(i)

    best = None
    for i in sorted(probes):
        r = probes[i]
        m_e, m_a = r.max_of(entity), r.max_of(ladder[i].query)
        if m_e is None or m_a is None or min(m_e, m_a) < lo_band:
            continue
        if best is None or min(m_e, m_a) > best[0]:
            best = (min(m_e, m_a), i)
    if best is None:
        return None
    i = best[1]
    anchor, resp = ladder[i], probes[i]
    m_a = resp.max_of(anchor.query)
    raw = resp.series[entity]
    return CalibratedSeries(
        entity_id=entity,
        country=country,
        weeks=period.labels(),
        raw=raw,
        scale=anchor.ratio / m_a,
        scale_lo=anchor.lo / (m_a + 0.5),
        scale_hi=anchor.hi / (m_a - 0.5),
        anchor=anchor.query,
        hops=anchor.hops,
        min_value=min(anchor.min_value, best[0]),
    )


class SeriesCache:
    """One JSON document per key at ``<root>/<country>/<entity_id>.json``.

    Calibration failures are cached too, as ``{"no_signal": true}``.
    """

    def __init__(self, root: str | Path, repair: bool = False):
        self.root = Path(root)
        self.repair = repair
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, entity_id: str, country: str) -> Path:
        return self.root / country / (entity_id.strip("/") + ".json")

    def bank_path(self, country: str) -> Path:
        return self.root / country / "_bank.json"

    def _write(self, path: Path, doc: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True))
        os.replace(tmp, path)

    def _read(self, path: Path, key: str) -> dict | None:
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            if self.repair:
                log.warning("corrupt cache entry %s treated as miss", key)
                return None
            raise CacheCorruptError(f"corrupt cache entry {key}: {exc}") from exc

    def put(self, entity_id: str, country: str, period: Period,
            series: CalibratedSeries | None) -> None:
        path = self.path(entity_id, country)
        if path.exists():
            log.info("overwriting cache entry %s/%s", country, entity_id)
        doc = {"period": [period.start, period.end]}
        if series is None:
            doc["no_signal"] = True
            doc["fetched_at"] = _now()
        else:
            doc.update(series.to_dict())
        self._write(path, doc)

    def get(self, entity_id: str, country: str, period: Period) -> CalibratedSeries | None | str:
        """Cached series, ``None`` for a cached no-signal, or ``MISS``."""
        key = f"{country}/{entity_id}"
        doc = self._read(self.path(entity_id, country), key)
        if doc is None or doc.get("period") != [period.start, period.end]:
            return MISS
        if doc.get("no_signal"):
            return None
        try:
            return CalibratedSeries.from_dict(doc)
        except (KeyError, TypeError, CalibrationError) as exc:
            if self.repair:
                return MISS
            raise CacheCorruptError(f"corrupt cache entry {key}: {exc}") from exc

    def evict(self, entity_id: str, country: str) -> None:
        self.path(entity_id, country).unlink(missing_ok=True)

    def put_bank(self, bank: AnchorBank, period: Period) -> None:
        self._write(self.bank_path(bank.country),
                    {"period": [period.start, period.end], **bank.to_dict()})

    def get_bank(self, country: str, period: Period) -> AnchorBank | None:
        doc = self._read(self.bank_path(country), f"{country}/_bank")
        if doc is None or doc.get("period") != [period.start, period.end]:
            return None
        return AnchorBank.from_dict(doc)

    def countries(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())


MISS = "miss"


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class FetchSummary:
    calibrated: int = 0
    no_signal: int = 0
    cached: int = 0
    failed_countries: dict[str, str] = field(default_factory=dict)


def fetch_all(
    provider: TrendsProvider,
    entities: Iterable[str],
    countries: Iterable[str],
    candidates: Sequence[str],
    cache: SeriesCache,
    period: Period,
    reference: str | None = None,
    max_in_flight: int = 1,
    force: bool = False,
    stamp: bool = True,
) -> FetchSummary:
    """Build banks and calibrate every entity in every country into ``cache``.

    Countries whose bank cannot be built are reported in ``failed_countries``
    and skipped.
    """
    summary = FetchSummary()
    entities = list(dict.fromkeys(entities))

    def one_country(country: str) -> tuple[str, FetchSummary]:
        s = FetchSummary()
        bank = None if force else cache.get_bank(country, period)
        if bank is None:
            try:
                bank = build_anchor_bank(provider, candidates, country, period, reference)
            except AnchorBankError as exc:
                s.failed_countries[country] = str(exc)
                return country, s
            cache.put_bank(bank, period)
        for ent in entities:
            if not force and cache.get(ent, country, period) is not MISS:
                s.cached += 1
                continue
            series = calibrate(provider, bank, ent, country, period)
            if series is None:
                s.no_signal += 1
            else:
                s.calibrated += 1
                if stamp:
                    series = _stamped(series)
            cache.put(ent, country, period, series)
        return country, s

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        for _, s in pool.map(one_country, sorted(set(countries))):
            summary.calibrated += s.calibrated
            summary.no_signal += s.no_signal
            summary.cached += s.cached
            summary.failed_countries.update(s.failed_countries)
    return summary


def _stamped(series: CalibratedSeries) -> CalibratedSeries:
    d = series.to_dict()
    d["fetched_at"] = _now()
    return CalibratedSeries.from_dict(d)


class LiveTrendsProvider:
    """Client for a JSON trends endpoint.

    Contract: ``GET <url>?q=<id>&q=<id>...&geo=<CC>&start=<week>&end=<week>``
    answers ``{"series": {<id>: [ints] | null}}``. Not exercised offline.
    """

    def __init__(self, url: str, client: JsonClient | None = None):
        self.url = url
        self.client = client or JsonClient(rate=0.2)

    def query(self, queries: Sequence[str], country: str,
              period: tuple[str, str]) -> dict[str, list[int] | None]:
        body = self.client.get(self.url, {"q": list(queries), "geo": country,
                                          "start": period[0], "end": period[1]})
        series = body.get("series", {})
        return {q: series.get(q) for q in queries}
