"""Misinformation-induced attention.

For one entity in one country, with weekly volumes ``v`` of the analysis
year, baseline ``b`` (mean weekly volume of the previous year) and ``r``
(mean weekly volume of the reference entity in the analysis year)::

    attention(i) = sum(max(v[k] - b, 0) for k <= i) / r

Total attention is the value at the last week; relative attention at a week
is attention there divided by the total.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .claimcluster import ClaimCluster
from .ingest import FactCheckRecord
from .kglink import EntityRef
from .trendscal import MISS, CalibratedSeries, Period, SeriesCache
from .weeks import week_start, year_slice

log = logging.getLogger(__name__)


class AttentionError(ValueError):
    pass


class UndefinedRelativeAttention(AttentionError):
    """Total attention is zero, so no point in time can be located."""


def baseline(series: Sequence[float]) -> float:
    v = np.asarray(series, dtype=float)
    if v.size == 0:
        raise AttentionError("baseline needs at least one week of data")
    return float(v.mean())


def attention_curve(series: Sequence[float], b: float, r: float) -> np.ndarray:
    if not r > 0:
        raise AttentionError(f"reference volume must be positive, got {r}")
    v = np.asarray(series, dtype=float)
    return np.cumsum(np.maximum(v - b, 0.0)) / r


@dataclass(frozen=True)
class AttentionProfile:
    entity: EntityRef
    country: str
    b: float
    r: float
    weeks: tuple[str, ...]
    curve: tuple[float, ...]
    factcheck_dates: tuple[dt.date, ...] = ()
    total_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.b < 0 or not self.r > 0:
            raise AttentionError("need b >= 0 and r > 0")
        if len(self.weeks) != len(self.curve):
            raise AttentionError("curve and weeks differ in length")
        if list(self.factcheck_dates) != sorted(self.factcheck_dates):
            raise AttentionError("fact-check dates must be sorted")

    @property
    def total(self) -> float:
        return self.curve[-1] if self.curve else 0.0

    @property
    def n_factchecks(self) -> int:
        return len(self.factcheck_dates)

    @property
    def fact_checked(self) -> bool:
        return bool(self.factcheck_dates)

    def to_dict(self) -> dict:
        d = {
            "entity": self.entity.to_dict(),
            "country": self.country,
            "b": self.b,
            "r": self.r,
            "total": self.total,
            "weeks": list(self.weeks),
            "curve": list(self.curve),
            "factcheck_dates": [d.isoformat() for d in self.factcheck_dates],
        }
        if self.total_bounds is not None:
            d["total_bounds"] = list(self.total_bounds)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttentionProfile":
        tb = d.get("total_bounds")
        return cls(
            entity=EntityRef.from_dict(d["entity"]),
            country=d["country"],
            b=d["b"],
            r=d["r"],
            weeks=tuple(d["weeks"]),
            curve=tuple(d["curve"]),
            factcheck_dates=tuple(dt.date.fromisoformat(x) for x in d["factcheck_dates"]),
            total_bounds=tuple(tb) if tb else None,
        )


def week_index(profile: AttentionProfile, date: dt.date) -> int:
    """Index of the week containing ``date``; -1 before the year, len after it."""
    i = (date - week_start(profile.weeks[0])).days // 7
    return max(-1, min(i, len(profile.weeks)))


def relative_attention_at(profile: AttentionProfile, date: dt.date) -> float:
    if not profile.total > 0:
        raise UndefinedRelativeAttention(
            f"{profile.entity.entity_id}/{profile.country} has zero total attention"
        )
    i = week_index(profile, date)
    if i < 0:
        return 0.0
    if i >= len(profile.weeks):
        return 1.0
    return profile.curve[i] / profile.total


def attention_bounds(entity: CalibratedSeries, reference: CalibratedSeries,
                     prev: slice, cur: slice) -> tuple[float, float]:
    """Interval guaranteed to hold the true total attention.

    Every rounded weekly value and every scale carries its interval; the
    sum of ramps is monotone in each week's value and anti-monotone in the
    baseline, so evaluating at the interval ends bounds it.
    """
    lo, hi = entity.raw_bounds()
    b_lo, b_hi = lo[prev].mean(), hi[prev].mean()
    excess_lo = np.maximum(lo[cur] - b_hi, 0.0).sum()
    excess_hi = np.maximum(hi[cur] - b_lo, 0.0).sum()
    g_lo, g_hi = reference.raw_bounds()
    r_lo = max(g_lo[cur].mean(), 0.0) * reference.scale_lo
    r_hi = g_hi[cur].mean() * reference.scale_hi
    upper = entity.scale_hi * excess_hi / r_lo if r_lo > 0 else float("inf")
    return (entity.scale_lo * excess_lo / r_hi, upper)


def _aligned(series: CalibratedSeries, labels: Sequence[str]) -> np.ndarray:
    """Values on ``labels``; weeks absent from the series count as zero volume."""
    have = dict(zip(series.weeks, series.values))
    gaps = [w for w in labels if w not in have]
    if gaps:
        log.warning("%s/%s: %d missing weeks zero-filled", series.country, series.entity_id, len(gaps))
    return np.array([have.get(w, 0.0) for w in labels])


def profile_from_series(
    entity: EntityRef,
    series: CalibratedSeries,
    reference: CalibratedSeries,
    period: Period,
    year: int = 2020,
    factcheck_dates: Iterable[dt.date] = (),
) -> AttentionProfile:
    labels = period.labels()
    prev, cur = year_slice(labels, year - 1), year_slice(labels, year)
    if prev.stop == prev.start or not any(w in set(series.weeks) for w in labels[prev]):
        raise AttentionError(f"{series.country}/{entity.entity_id}: no {year - 1} data for a baseline")
    v = _aligned(series, labels)
    g = _aligned(reference, labels)
    b = baseline(v[prev])
    r = float(g[cur].mean())
    curve = attention_curve(v[cur], b, r)
    bounds = None
    if tuple(series.weeks) == tuple(labels) and tuple(reference.weeks) == tuple(labels):
        bounds = attention_bounds(series, reference, prev, cur)
    return AttentionProfile(
        entity=entity,
        country=series.country,
        b=b,
        r=r,
        weeks=tuple(labels[cur]),
        curve=tuple(float(x) for x in curve),
        factcheck_dates=tuple(sorted(factcheck_dates)),
        total_bounds=bounds,
    )


@dataclass
class ProfileBuild:
    profiles: list[AttentionProfile] = field(default_factory=list)
    no_signal: list[tuple[str, str]] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)


def build_profiles(
    cache: SeriesCache,
    clusters: Sequence[ClaimCluster],
    records: Sequence[FactCheckRecord],
    reference_entity: str,
    period: Period,
    countries: Sequence[str] | None = None,
    year: int = 2020,
) -> ProfileBuild:
    """One profile per linked entity and country with calibrated data.

    Fact-check dates come from cluster members recorded in that country.
    A country without a reference-entity series yields no profiles and is
    named in ``errors``; pairs cached as no signal are listed separately.
    """
    by_id = {r.record_id: r for r in records}
    out = ProfileBuild()
    linked = sorted((c for c in clusters if c.entity is not None), key=lambda c: c.entity.entity_id)
    for country in sorted(countries if countries is not None else cache.countries()):
        ref = cache.get(reference_entity, country, period)
        if not isinstance(ref, CalibratedSeries):
            out.errors[country] = f"missing reference series {reference_entity} for {country}"
            continue
        for cl in linked:
            series = cache.get(cl.entity.entity_id, country, period)
            if series is MISS or series is None:
                out.no_signal.append((cl.entity.entity_id, country))
                continue
            dates = [by_id[m].date for m in cl.member_ids
                     if m in by_id and by_id[m].country_code == country]
            try:
                out.profiles.append(
                    profile_from_series(cl.entity, series, ref, period, year, dates)
                )
            except AttentionError as exc:
                out.errors[f"{country}/{cl.entity.entity_id}"] = str(exc)
    return out
