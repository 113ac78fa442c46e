"""What gets fact-checked and when: statistics over attention profiles."""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import stats
from .attention import AttentionProfile, UndefinedRelativeAttention, relative_attention_at

BUCKETS = ("0", "1", "2-5", "6+")


class Skip(Exception):
    """A statistic's precondition does not hold for this input; recorded, not fatal."""


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class DistributionSummary:
    n: int
    mean: float
    standard_error: float
    q1: float
    median: float
    q3: float
    p5: float
    p95: float

    def to_dict(self) -> dict:
        return asdict(self)


def quantile(sorted_values: Sequence[float], q: float) -> float:
    """Linear interpolation between closest ranks."""
    h = (len(sorted_values) - 1) * q
    lo = math.floor(h)
    if lo + 1 >= len(sorted_values):
        return float(sorted_values[-1])
    a, b = sorted_values[lo], sorted_values[lo + 1]
    return float(a + (h - lo) * (b - a))


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def summarize(values: Iterable[float]) -> DistributionSummary:
    xs = sorted(float(v) for v in values)
    if not xs:
        raise ValueError("cannot summarize an empty sample")
    mean, se = _mean_se(xs)
    return DistributionSummary(
        n=len(xs),
        mean=mean,
        standard_error=se,
        q1=quantile(xs, 0.25),
        median=quantile(xs, 0.5),
        q3=quantile(xs, 0.75),
        p5=quantile(xs, 0.05),
        p95=quantile(xs, 0.95),
    )


def mean_ci(values: Iterable[float], level: float = 0.95) -> tuple[float, float, float]:
    xs = sorted(float(v) for v in values)
    if len(xs) < 2:
        raise ValueError("a confidence interval needs at least two values")
    mean, se = _mean_se(xs)
    half = stats.t_ppf(1 - (1 - level) / 2, len(xs) - 1) * se
    return mean, mean - half, mean + half


def _by_total(profiles: Iterable[AttentionProfile]) -> list[AttentionProfile]:
    return sorted(profiles, key=lambda p: (-p.total, p.entity.entity_id))


def topk_log_ratio(profiles: Sequence[AttentionProfile], k: int) -> float:
    """log2 of summed totals of the k most-attended fact-checked vs non-fact-checked claims."""
    fc = _by_total(p for p in profiles if p.fact_checked)
    other = _by_total(p for p in profiles if not p.fact_checked)
    if len(fc) < k or len(other) < k:
        raise Skip(f"needs {k} fact-checked and {k} other claims, has {len(fc)}/{len(other)}")
    num = math.fsum(p.total for p in fc[:k])
    den = math.fsum(p.total for p in other[:k])
    if den <= 0 or num <= 0:
        raise Skip("zero attention sum")
    return math.log2(num / den)


def most_fc_vs_most_attention_ratio(profiles: Sequence[AttentionProfile], k: int) -> float:
    """log2 of totals of the k most fact-checked over the k most-attended fact-checked claims."""
    fc = [p for p in profiles if p.fact_checked]
    if len(fc) < k:
        raise Skip(f"needs {k} fact-checked claims, has {len(fc)}")
    most_checked = sorted(fc, key=lambda p: (-p.n_factchecks, -p.total, p.entity.entity_id))[:k]
    num = math.fsum(p.total for p in most_checked)
    den = math.fsum(p.total for p in _by_total(fc)[:k])
    if den <= 0 or num <= 0:
        raise Skip("zero attention sum")
    return math.log2(num / den)


def table2_pct(profiles: Sequence[AttentionProfile], top: int = 10) -> dict:
    ranked = _by_total(p for p in profiles if p.total > 0)[:top]
    hits = sum(p.fact_checked for p in ranked)
    return {
        "pct": 100.0 * hits / len(ranked) if ranked else 0.0,
        "n_top": len(ranked),
        "short": len(ranked) < top,
    }


def bucket_of(n_factchecks: int) -> str:
    if n_factchecks == 0:
        return "0"
    if n_factchecks == 1:
        return "1"
    if n_factchecks <= 5:
        return "2-5"
    return "6+"


def bucket_by_fc_count(profiles: Iterable[AttentionProfile]) -> dict[str, DistributionSummary | None]:
    groups: dict[str, list[float]] = {b: [] for b in BUCKETS}
    for p in profiles:
        groups[bucket_of(p.n_factchecks)].append(p.total)
    return {b: summarize(v) if v else None for b, v in groups.items()}


def rel_attention_at_kth(profiles: Iterable[AttentionProfile], k: int) -> dict:
    if k < 1:
        raise ValueError("k starts at 1")
    vals = []
    for p in profiles:
        if p.n_factchecks < k:
            continue
        try:
            vals.append(relative_attention_at(p, p.factcheck_dates[k - 1]))
        except UndefinedRelativeAttention:
            continue
    row = {"k": k, "n": len(vals), "mean": None, "se": None, "ci_lo": None, "ci_hi": None}
    if vals:
        row["mean"], row["se"] = _mean_se(sorted(vals))
    if len(vals) >= 2:
        _, row["ci_lo"], row["ci_hi"] = mean_ci(vals)
    return row


def rankdata(x: Sequence[float]) -> np.ndarray:
    """Ranks starting at 1; ties share their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    n = len(x)
    if n < 3:
        raise ValueError("spearman needs at least three pairs")
    rx, ry = rankdata(x), rankdata(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("spearman is undefined for a constant input")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    return rho, stats.t_two_sided_p(t, n - 2)


@dataclass(frozen=True)
class AncovaResult:
    F: float
    p: float
    df_between: int
    df_resid: int
    n: int
    saturated: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.F):
            d["F"] = None
        return d


def design_matrix(groups: Sequence, covariates: Sequence[Sequence[float]],
                  with_groups: bool = True) -> tuple[np.ndarray, list[str]]:
    n = len(groups)
    cols = [np.ones(n)]
    names = ["intercept"]
    if with_groups:
        levels = sorted(set(groups), key=str)
        for lev in levels[1:]:
            cols.append(np.array([g == lev for g in groups], dtype=float))
            names.append(f"group[{lev}]")
    for j, cov in enumerate(covariates):
        cols.append(np.asarray(cov, dtype=float))
        names.append(f"covariate[{j}]")
    return np.column_stack(cols), names


def collinear_columns(X: np.ndarray, names: Sequence[str], rtol: float = 1e-10) -> list[str]:
    """Columns lying in the span of the columns before them."""
    bad = []
    kept: list[np.ndarray] = []
    for j in range(X.shape[1]):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if kept:
            Q, _ = np.linalg.qr(np.column_stack(kept))
            resid = col - Q @ (Q.T @ col)
        else:
            resid = col
        if norm == 0 or np.linalg.norm(resid) <= rtol * norm:
            bad.append(names[j])
        else:
            kept.append(col)
    return bad


def _rss(X: np.ndarray, y: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    return float(r @ r)


def ancova(response: Sequence[float], groups: Sequence,
           covariates: Sequence[Sequence[float]] = ()) -> AncovaResult:
    """F test for a categorical factor after adjusting for covariates."""
    y = np.asarray(response, dtype=float)
    n = len(y)
    g = len(set(groups))
    if g < 2:
        raise ValueError("ancova needs at least two groups")
    if len(groups) != n or any(len(c) != n for c in covariates):
        raise ValueError("response, groups and covariates differ in length")
    if n <= g + len(covariates):
        raise ValueError(f"too few observations ({n}) for {g} groups and {len(covariates)} covariates")
    # Centring is absorbed by the intercept and keeps near-constant covariates well conditioned.
    covariates = [np.asarray(c, dtype=float) - math.fsum(c) / n for c in covariates]
    X_full, names = design_matrix(groups, covariates)
    bad = collinear_columns(X_full, names)
    if bad:
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(bad)}")
    X_red, _ = design_matrix(groups, covariates, with_groups=False)
    yc = y - y.mean()
    rss_full = _rss(X_full, yc)
    rss_red = _rss(X_red, yc)
    df_between = g - 1
    df_resid = n - X_full.shape[1]
    tol = 1e-20 * max(float(yc @ yc), 1e-300)
    extra = rss_red - rss_full
    if extra <= tol:
        return AncovaResult(0.0, 1.0, df_between, df_resid, n)
    if rss_full <= tol:
        return AncovaResult(math.inf, 0.0, df_between, df_resid, n, saturated=True)
    F = (extra / df_between) / (rss_full / df_resid)
    return AncovaResult(F, stats.f_sf(F, df_between, df_resid), df_between, df_resid, n)


# ---------------------------------------------------------------- report


def _day_of_year(d: dt.date, year: int) -> int:
    return (d - dt.date(year, 1, 1)).days


def _ci_row(values: Sequence[float]) -> dict:
    row = {"n": len(values), "mean": None, "ci_lo": None, "ci_hi": None}
    if values:
        row["mean"] = math.fsum(values) / len(values)
    if len(values) >= 2:
        _, row["ci_lo"], row["ci_hi"] = mean_ci(values)
    return row


def _per_k(by_country: Mapping[str, list[AttentionProfile]], countries: Sequence[str],
           fn: Callable[[Sequence[AttentionProfile], int], float], kmax: int) -> list[dict]:
    rows = []
    for k in range(1, kmax + 1):
        values, skipped = {}, []
        for c in countries:
            try:
                values[c] = fn(by_country[c], k)
            except Skip:
                skipped.append(c)
        row = {"k": k, **_ci_row([values[c] for c in sorted(values)])}
        row["skipped"] = len(skipped)
        row["values"] = {c: values[c] for c in sorted(values)}
        rows.append(row)
    return rows


def _safe_spearman(x: Sequence[float], y: Sequence[float]) -> dict:
    try:
        rho, p = spearman(x, y)
    except ValueError as exc:
        return {"rho": None, "p": None, "n": len(x), "note": str(exc)}
    return {"rho": rho, "p": p, "n": len(x)}


def _safe_ancova(y, groups, covs) -> dict:
    try:
        return ancova(y, groups, covs).to_dict()
    except ValueError as exc:
        return {"F": None, "p": None, "n": len(y), "note": str(exc)}


def _first_fc_rows(profiles: Iterable[AttentionProfile], year: int) -> list[dict]:
    rows = []
    for p in profiles:
        if not p.fact_checked or not p.total > 0:
            continue
        first = p.factcheck_dates[0]
        rows.append({
            "entity_id": p.entity.entity_id,
            "country": p.country,
            "rel": relative_attention_at(p, first),
            "total": p.total,
            "day": _day_of_year(first, year),
        })
    return rows


def _group_block(rows: list[dict], key: str, members: Sequence[str]) -> dict:
    chosen = [r for r in rows if r[key] in set(members)]
    per = []
    for m in members:
        mine = [r for r in chosen if r[key] == m]
        per.append({
            key: m,
            "n": len(mine),
            "relative_attention": _ci_row([r["rel"] for r in mine]),
            "total_attention": _ci_row([r["total"] for r in mine]),
            "mean_day": math.fsum(r["day"] for r in mine) / len(mine) if mine else None,
        })
    usable = [g for g in per if g["n"] > 0]
    rel = [g["relative_attention"]["mean"] for g in usable]
    return {
        "groups": per,
        "spearman_rel_vs_total": _safe_spearman(rel, [g["total_attention"]["mean"] for g in usable]),
        "spearman_rel_vs_day": _safe_spearman(rel, [g["mean_day"] for g in usable]),
        "ancova": _safe_ancova(
            [r["rel"] for r in chosen],
            [r[key] for r in chosen],
            [[r["total"] for r in chosen], [r["day"] for r in chosen]],
        ),
    }


def _summary_or_none(values: Sequence[float]) -> dict | None:
    return summarize(values).to_dict() if values else None


def build_report(
    profiles: Sequence[AttentionProfile],
    min_fc_claims: int = 10,
    kmax: int = 10,
    min_claim_countries: int = 10,
    year: int = 2020,
) -> dict:
    """Every statistic of the study as one JSON-ready dict (no timestamp)."""
    profiles = sorted(profiles, key=lambda p: (p.country, p.entity.entity_id))
    by_country: dict[str, list[AttentionProfile]] = defaultdict(list)
    for p in profiles:
        by_country[p.country].append(p)
    countries = sorted(by_country)
    busy = [c for c in countries if sum(p.fact_checked for p in by_country[c]) >= min_fc_claims]

    fc_totals = [p.total for p in profiles if p.fact_checked]
    other_totals = [p.total for p in profiles if not p.fact_checked]
    table2 = [{"country": c, **table2_pct(by_country[c])} for c in busy]
    buckets = bucket_by_fc_count(profiles)

    rq2_rows = [rel_attention_at_kth(profiles, k) for k in range(1, kmax + 1)]
    first = _first_fc_rows(profiles, year)
    claim_countries: dict[str, set[str]] = defaultdict(set)
    for p in profiles:
        if p.fact_checked:
            claim_countries[p.entity.entity_id].add(p.country)
    wide_claims = sorted(e for e, cs in claim_countries.items() if len(cs) >= min_claim_countries)

    return {
        "params": {
            "min_fc_claims": min_fc_claims,
            "kmax": kmax,
            "min_claim_countries": min_claim_countries,
            "year": year,
        },
        "counts": {
            "profiles": len(profiles),
            "countries": len(countries),
            "entities": len({p.entity.entity_id for p in profiles}),
            "fact_checked_pairs": len(fc_totals),
            "factchecks": sum(p.n_factchecks for p in profiles),
            "zero_total_fact_checked": sum(1 for p in profiles if p.fact_checked and not p.total > 0),
            "busy_countries": len(busy),
        },
        "rq1": {
            "fc_vs_nonfc": {
                "fact_checked": _summary_or_none(fc_totals),
                "not_fact_checked": _summary_or_none(other_totals),
            },
            "topk_log_ratios": {
                "all": _per_k(by_country, countries, topk_log_ratio, kmax),
                "min_fc": _per_k(by_country, busy, topk_log_ratio, kmax),
            },
            "table2": table2,
            "table2_at_most_50pct": {
                "count": sum(1 for r in table2 if r["pct"] <= 50),
                "n": len(table2),
            },
            "fc_count_buckets": {b: (s.to_dict() if s else None) for b, s in buckets.items()},
            "most_fc_vs_most_attention": {
                "all": _per_k(by_country, countries, most_fc_vs_most_attention_ratio, kmax),
                "min_fc": _per_k(by_country, busy, most_fc_vs_most_attention_ratio, kmax),
            },
        },
        "rq2": {
            "relative_attention_at_k": rq2_rows,
            "per_claim": _group_block(first, "entity_id", wide_claims),
            "per_country": _group_block(first, "country", busy),
        },
    }


def clean_json(obj):
    """Replace non-finite floats by ``None`` so the report is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    return obj


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_tables(report: Mapping, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "table2.csv", ["country", "pct_top10_fact_checked", "n_top"],
               [(r["country"], r["pct"], r["n_top"]) for r in report["rq1"]["table2"]])
    rows = []
    for name, s in [("fact_checked", report["rq1"]["fc_vs_nonfc"]["fact_checked"]),
                    ("not_fact_checked", report["rq1"]["fc_vs_nonfc"]["not_fact_checked"]),
                    *[(f"fc_{b}", s) for b, s in report["rq1"]["fc_count_buckets"].items()]]:
        if s:
            rows.append((name, s["n"], s["mean"], s["standard_error"], s["p5"], s["q1"],
                         s["median"], s["q3"], s["p95"]))
    _write_csv(out / "total_attention_distributions.csv",
               ["group", "n", "mean", "se", "p5", "q1", "median", "q3", "p95"], rows)


def write_plot_series(report: Mapping, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hdr = ["x", "y", "ci_lo", "ci_hi", "n"]
    rq1, rq2 = report["rq1"], report["rq2"]
    for name, rows in [
        ("topk_log_ratio_all", rq1["topk_log_ratios"]["all"]),
        ("topk_log_ratio_min_fc", rq1["topk_log_ratios"]["min_fc"]),
        ("most_fc_vs_most_attention_all", rq1["most_fc_vs_most_attention"]["all"]),
        ("most_fc_vs_most_attention_min_fc", rq1["most_fc_vs_most_attention"]["min_fc"]),
        ("relative_attention_at_k", rq2["relative_attention_at_k"]),
    ]:
        _write_csv(out / f"{name}.csv", hdr,
                   [(r["k"], r["mean"], r["ci_lo"], r["ci_hi"], r["n"]) for r in rows])
    for block, key in [("per_claim", "entity_id"), ("per_country", "country")]:
        groups = rq2[block]["groups"]
        for metric in ("relative_attention", "total_attention"):
            _write_csv(out / f"{block}_{metric}.csv", hdr,
                       [(g[key], g[metric]["mean"], g[metric]["ci_lo"], g[metric]["ci_hi"],
                         g[metric]["n"]) for g in groups])
