"""Stage functions and the config-driven runner behind the command line.

Every stage reads and writes plain JSON/JSONL files. Writes go through a
temporary file and ``os.replace`` so a failing stage never leaves a
half-written artifact behind.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import analysis, attention, claimcluster, ingest, kglink, synthprov, trendscal

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("ingest", "cluster", "link", "fetch", "attention", "analyze")
EXIT_CODES = {"config": 2, **{s: 10 + i for i, s in enumerate(STAGES)}}
GOOGLE_ID = synthprov.GOOGLE.entity_id


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# ---------------------------------------------------------------- file helpers


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    if p.is_dir():
        for sub in sorted(p.rglob("*")):
            if sub.is_file():
                h.update(str(sub.relative_to(p)).encode())
                h.update(hashlib.sha256(sub.read_bytes()).digest())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- stages


def run_ingest(input_path: Path, column_map: Path, scope: Path | None,
               out: Path, errors: Path | None = None) -> dict:
    cmap = read_json(column_map)
    scope_cfg = ingest.ScopeConfig.from_dict(read_json(scope)) if scope else ingest.ScopeConfig()
    with open(input_path, newline="") as fh:
        records, row_errors = ingest.parse_factchecks(fh, cmap)
    kept, dropped = ingest.filter_scope(records, scope_cfg)
    kept.sort(key=lambda r: r.record_id)
    atomic_write(out, "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in kept))
    if errors is not None:
        lines = [json.dumps(e.to_dict(), sort_keys=True) for e in row_errors]
        lines += [json.dumps({"record_id": r.record_id, "reason": why}, sort_keys=True)
                  for r, why in dropped]
        atomic_write(errors, "".join(l + "\n" for l in lines))
    reasons: dict[str, int] = {}
    for _, why in dropped:
        reasons[why] = reasons.get(why, 0) + 1
    return {"parsed": len(records), "kept": len(kept), "row_errors": len(row_errors),
            "dropped": dict(sorted(reasons.items()))}


def read_records(path: Path) -> list[ingest.FactCheckRecord]:
    with open(path) as fh:
        return ingest.read_jsonl(fh)


def load_splits(path: Path) -> dict[str, list[tuple[str, list[str]]]]:
    """``{cluster_id: [[label, [keywords...]], ...]}``."""
    raw = read_json(path)
    return {cid: [(label, list(kws)) for label, kws in rule] for cid, rule in raw.items()}


def run_cluster(records_path: Path, out: Path, eps: float = 0.5, min_pts: int = 2,
                stopwords: Path | None = None, splits: Path | None = None,
                sweep: Sequence[float] | None = None, sweep_out: Path | None = None) -> dict:
    records = read_records(records_path)
    stop = claimcluster.load_stopwords(stopwords)
    clusters, tokens = claimcluster.cluster_records(records, eps, min_pts, stop)
    if splits:
        clusters = claimcluster.apply_splits(clusters, load_splits(splits), tokens)
    atomic_write(out, dump_json([c.to_dict() for c in clusters]))
    counts = {"records": len(records), "clusters": len(clusters),
              "clustered_records": sum(len(c.member_ids) for c in clusters)}
    if sweep:
        ids = [rid for rid, t in tokens.items() if t]
        d = claimcluster.distance_matrix([tokens[i] for i in ids])
        rows = [r.to_dict() for r in claimcluster.sweep_eps(d, sweep, min_pts)]
        if sweep_out is not None:
            atomic_write(sweep_out, dump_json(rows))
        counts["sweep"] = rows
    return counts


def read_clusters(path: Path) -> list[claimcluster.ClaimCluster]:
    return [claimcluster.ClaimCluster.from_dict(d) for d in read_json(path)]


def run_link(clusters_path: Path, map_path: Path, out: Path,
             records_path: Path | None = None, stopwords: Path | None = None,
             provider: kglink.EntitySearchProvider | None = None,
             candidates_out: Path | None = None) -> dict:
    """Attach entities from the mapping file, then grow bound clusters by keyword."""
    clusters = read_clusters(clusters_path)
    raw = read_json(map_path)
    clusters = kglink.apply_entity_map(clusters, kglink.parse_entity_map(raw))
    keywords = kglink.entity_keywords(raw)
    if keywords:
        if records_path is None:
            raise ValueError("keyword expansion needs the ingested records")
        stop = claimcluster.load_stopwords(stopwords)
        tokens = {r.record_id: claimcluster.tokenize(r.claim_text, stop)
                  for r in read_records(records_path)
                  if r.rating in ingest.CLUSTERABLE_RATINGS}
        clusters = claimcluster.expand_all(clusters, tokens, keywords)
    if provider is not None and candidates_out is not None:
        words = sorted({c.label for c in clusters if c.label})
        found = kglink.search_many(provider, words)
        atomic_write(candidates_out, dump_json({
            w: [{**e.to_dict(), "score": s} for e, s in found[w].candidates] for w in words
        }))
    atomic_write(out, dump_json([c.to_dict() for c in clusters]))
    bound = kglink.linked(clusters)
    return {"clusters": len(clusters), "linked": len(bound),
            "linked_records": sum(len(c.member_ids) for c in bound)}


def run_synth(config_path: Path | None, seed: int, out: Path) -> dict:
    cfg = synthprov.SynthConfig.from_dict(read_json(config_path)) if config_path else synthprov.SynthConfig()
    world = synthprov.generate_world(cfg, seed)
    atomic_write(out, json.dumps(world.to_dict(), sort_keys=True))
    return {"countries": len(world.countries), "queries": len(world.queries)}


def run_fetch(linked_path: Path, cache_dir: Path, provider: trendscal.TrendsProvider,
              countries: Sequence[str], candidates: Sequence[str], reference_query: str | None,
              reference_entity: str = GOOGLE_ID, period: trendscal.Period | None = None,
              max_in_flight: int = 4, force: bool = False, summary_out: Path | None = None,
              stamp: bool = True) -> dict:
    period = period or trendscal.Period.years()
    entities = [reference_entity] + sorted(c.entity.entity_id for c in kglink.linked(read_clusters(linked_path)))
    cache = trendscal.SeriesCache(cache_dir)
    s = trendscal.fetch_all(provider, entities, countries, candidates, cache, period,
                            reference_query, max_in_flight, force, stamp)
    counts = {"countries": len(set(countries)), "calibrated": s.calibrated,
              "no_signal": s.no_signal, "cached": s.cached,
              "failed_countries": dict(sorted(s.failed_countries.items()))}
    if summary_out is not None:
        atomic_write(summary_out, dump_json(counts))
    return counts


def run_attention(cache_dir: Path, linked_path: Path, records_path: Path, out: Path,
                  reference_entity: str = GOOGLE_ID, period: trendscal.Period | None = None,
                  year: int = 2020, countries: Sequence[str] | None = None) -> dict:
    period = period or trendscal.Period.years(year - 1, year)
    build = attention.build_profiles(
        trendscal.SeriesCache(cache_dir), read_clusters(linked_path), read_records(records_path),
        reference_entity, period, countries, year,
    )
    atomic_write(out, dump_json([p.to_dict() for p in build.profiles]))
    return {"profiles": len(build.profiles), "no_signal": len(build.no_signal),
            "fact_checked": sum(p.fact_checked for p in build.profiles),
            "errors": dict(sorted(build.errors.items()))}


def read_profiles(path: Path) -> list[attention.AttentionProfile]:
    return [attention.AttentionProfile.from_dict(d) for d in read_json(path)]


def _timestamp() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run_analyze(profiles_path: Path, out: Path, min_fc_claims: int = 10, kmax: int = 10,
                min_claim_countries: int = 10, year: int = 2020,
                tables_csv: Path | None = None, plot_series: Path | None = None,
                provenance: Mapping | None = None) -> dict:
    report = analysis.build_report(read_profiles(profiles_path), min_fc_claims, kmax,
                                   min_claim_countries, year)
    report = analysis.clean_json(report)
    if provenance is not None:
        report["provenance"] = dict(provenance)
    report["generated_at"] = _timestamp()
    atomic_write(out, dump_json(report))
    if tables_csv is not None:
        analysis.write_tables(report, tables_csv)
    if plot_series is not None:
        analysis.write_plot_series(report, plot_series)
    return dict(report["counts"])


# ---------------------------------------------------------------- pipeline config


@dataclass
class PipelineConfig:
    """Paths are resolved against ``base_dir`` (the config file's directory)."""

    base_dir: Path
    workdir: str = "out"
    factchecks: str = "factchecks.csv"
    column_map: str = "column_map.json"
    scope: str | None = None
    stopwords: str | None = None
    splits: str | None = None
    entity_map: str = "entity_map.json"
    eps: float = 0.5
    min_pts: int = 2
    provider: str = "sim"
    world: str | None = None
    synth_config: str | None = None
    seed: int = 0
    trends_url: str | None = None
    anchor_candidates: tuple[str, ...] = ()
    reference_query: str | None = None
    countries: tuple[str, ...] | str = "all"
    reference_entity: str = GOOGLE_ID
    year: int = 2020
    max_in_flight: int = 4
    min_fc_claims: int = 10
    kmax: int = 10
    min_claim_countries: int = 10
    raw: dict = field(default_factory=dict, repr=False)

    _SECTIONS = {
        "paths": ("workdir", "factchecks", "column_map", "scope", "stopwords", "splits", "entity_map"),
        "cluster": ("eps", "min_pts"),
        "provider": ("kind", "world", "synth_config", "seed", "trends_url",
                     "anchor_candidates", "reference_query", "countries", "max_in_flight"),
        "attention": ("reference_entity", "year"),
        "analysis": ("min_fc_claims", "kmax", "min_claim_countries"),
    }

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        raw = tomllib.loads(path.read_text())
        return cls.from_dict(raw, path.resolve().parent)

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: Path) -> "PipelineConfig":
        kwargs: dict[str, Any] = {}
        unknown = set(raw) - set(cls._SECTIONS)
        if unknown:
            raise ingest.ConfigError(f"unknown config sections: {sorted(unknown)}")
        for section, names in cls._SECTIONS.items():
            body = raw.get(section, {})
            extra = set(body) - set(names)
            if extra:
                raise ingest.ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
            kwargs.update(body)
        if "kind" in kwargs:
            kwargs["provider"] = kwargs.pop("kind")
        for key in ("anchor_candidates",):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if isinstance(kwargs.get("countries"), list):
            kwargs["countries"] = tuple(kwargs["countries"])
        cfg = cls(base_dir=base_dir, raw=json.loads(json.dumps(raw)), **kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.provider not in ("sim", "live"):
            raise ingest.ConfigError(f"provider must be 'sim' or 'live', got {self.provider!r}")
        if self.provider == "sim" and not (self.world or self.synth_config):
            raise ingest.ConfigError("the simulated provider needs 'world' or 'synth_config'")
        if self.provider == "live" and not (self.trends_url and self.anchor_candidates):
            raise ingest.ConfigError("the live provider needs 'trends_url' and 'anchor_candidates'")

    def path(self, name: str | None) -> Path | None:
        return None if name is None else self.base_dir / name

    @property
    def out(self) -> Path:
        return self.base_dir / self.workdir

    def artifact(self, name: str) -> Path:
        return self.out / name

    def world_path(self) -> Path:
        return self.path(self.world) if self.world else self.artifact("world.json")


def _stage_plan(cfg: PipelineConfig) -> dict[str, dict]:
    """Inputs, outputs and config keys per stage."""
    a = cfg.artifact
    opt = lambda *names: [cfg.path(n) for n in names if n]
    fetch_inputs = [a("linked.json")]
    if cfg.provider == "sim":
        fetch_inputs += opt(cfg.world) or opt(cfg.synth_config)
    return {
        "ingest": {"inputs": opt(cfg.factchecks, cfg.column_map, cfg.scope),
                   "outputs": [a("records.jsonl"), a("ingest_errors.jsonl")],
                   "keys": ()},
        "cluster": {"inputs": [a("records.jsonl")] + opt(cfg.stopwords, cfg.splits),
                    "outputs": [a("clusters.json")], "keys": ("eps", "min_pts")},
        "link": {"inputs": [a("clusters.json"), a("records.jsonl")] + opt(cfg.entity_map, cfg.stopwords),
                 "outputs": [a("linked.json")], "keys": ()},
        "fetch": {"inputs": fetch_inputs, "outputs": [a("fetch.json")],
                  "keys": ("provider", "seed", "trends_url", "anchor_candidates",
                           "reference_query", "countries", "reference_entity")},
        "attention": {"inputs": [a("fetch.json"), a("linked.json"), a("records.jsonl")],
                      "outputs": [a("profiles.json")], "keys": ("reference_entity", "year")},
        "analyze": {"inputs": [a("profiles.json")], "outputs": [a("report.json")],
                    "keys": ("min_fc_claims", "kmax", "min_claim_countries", "year")},
    }


def config_hash(cfg: PipelineConfig) -> str:
    """Digest of every config field and every external input file."""
    h = hashlib.sha256(json.dumps(cfg.raw, sort_keys=True).encode())
    for name in (cfg.factchecks, cfg.column_map, cfg.scope, cfg.stopwords, cfg.splits,
                 cfg.entity_map, cfg.world, cfg.synth_config):
        p = cfg.path(name)
        if p is not None and p.exists():
            h.update(name.encode())
            h.update(file_digest(p).encode())
    return h.hexdigest()


def _fingerprint(cfg: PipelineConfig, plan: Mapping) -> str:
    h = hashlib.sha256()
    for p in plan["inputs"]:
        h.update(str(p.name).encode())
        h.update(file_digest(p).encode() if p.exists() else b"absent")
    h.update(json.dumps({k: getattr(cfg, k) for k in plan["keys"]}, sort_keys=True).encode())
    return h.hexdigest()


def _up_to_date(plan: Mapping, fingerprint: str, previous: Mapping | None) -> bool:
    outs = plan["outputs"]
    if previous is None or previous.get("fingerprint") != fingerprint:
        return False
    if not all(p.exists() for p in outs):
        return False
    newest_in = max((p.stat().st_mtime for p in plan["inputs"] if p.exists()), default=0.0)
    return min(p.stat().st_mtime for p in outs) >= newest_in


def _provider(cfg: PipelineConfig) -> tuple[trendscal.TrendsProvider, list[str], list[str], str | None]:
    if cfg.provider == "live":
        prov = trendscal.LiveTrendsProvider(cfg.trends_url)
        if cfg.countries == "all":
            raise ingest.ConfigError("the live provider needs an explicit country list")
        return prov, list(cfg.countries), list(cfg.anchor_candidates), cfg.reference_query
    if cfg.world:
        world = synthprov.SynthWorld.load(cfg.world_path())
    else:
        world = synthprov.generate_world(
            synthprov.SynthConfig.from_dict(read_json(cfg.path(cfg.synth_config))), cfg.seed)
    countries = list(world.countries) if cfg.countries == "all" else list(cfg.countries)
    ref = cfg.reference_query or synthprov.REFERENCE_QUERY
    return synthprov.simulate_provider(world), countries, list(world.anchor_candidates), ref


def _execute(stage: str, cfg: PipelineConfig, force: bool) -> dict:
    a = cfg.artifact
    if stage == "ingest":
        return run_ingest(cfg.path(cfg.factchecks), cfg.path(cfg.column_map), cfg.path(cfg.scope),
                          a("records.jsonl"), a("ingest_errors.jsonl"))
    if stage == "cluster":
        return run_cluster(a("records.jsonl"), a("clusters.json"), cfg.eps, cfg.min_pts,
                           cfg.path(cfg.stopwords), cfg.path(cfg.splits))
    if stage == "link":
        return run_link(a("clusters.json"), cfg.path(cfg.entity_map), a("linked.json"),
                        a("records.jsonl"), cfg.path(cfg.stopwords))
    if stage == "fetch":
        prov, countries, candidates, ref = _provider(cfg)
        return run_fetch(a("linked.json"), a("cache"), prov, countries, candidates, ref,
                         cfg.reference_entity, trendscal.Period.years(cfg.year - 1, cfg.year),
                         cfg.max_in_flight, force, a("fetch.json"), stamp=True)
    if stage == "attention":
        return run_attention(a("cache"), a("linked.json"), a("records.jsonl"), a("profiles.json"),
                             cfg.reference_entity, year=cfg.year)
    if stage == "analyze":
        return run_analyze(a("profiles.json"), a("report.json"), cfg.min_fc_claims, cfg.kmax,
                           cfg.min_claim_countries, cfg.year,
                           provenance={"config": cfg.raw, "config_hash": config_hash(cfg)})
    raise ValueError(f"unknown stage {stage}")


def run_pipeline(cfg: PipelineConfig, force: bool = False, only: str | None = None,
                 clock: Callable[[], float] = time.perf_counter) -> dict:
    """Run stages in order, skipping those whose outputs are current.

    Returns the manifest, which is also written to ``<workdir>/manifest.json``.
    Raises :class:`StageError` naming the failing stage; artifacts of
    earlier stages are left untouched.
    """
    if only is not None and only not in STAGES:
        raise ingest.ConfigError(f"unknown stage {only!r}; choose from {', '.join(STAGES)}")
    manifest_path = cfg.artifact("manifest.json")
    try:
        old = read_json(manifest_path) if manifest_path.exists() else {}
    except json.JSONDecodeError:
        old = {}
    old_stages = old.get("stages", {})
    plans = _stage_plan(cfg)
    manifest = {"config_hash": config_hash(cfg), "stages": {}}
    for stage in STAGES:
        if only is not None and stage != only:
            if stage in old_stages:
                manifest["stages"][stage] = old_stages[stage]
            continue
        plan = plans[stage]
        absent = [str(p) for p in plan["inputs"] if not p.exists()]
        if absent:
            raise StageError(stage, f"missing inputs: {', '.join(absent)}")
        fp = _fingerprint(cfg, plan)
        prev = old_stages.get(stage)
        if not force and _up_to_date(plan, fp, prev):
            manifest["stages"][stage] = {**prev, "status": "skipped"}
            log.info("stage %s up to date", stage)
            continue
        t0 = clock()
        try:
            counts = _execute(stage, cfg, force)
        except StageError:
            raise
        except Exception as exc:  # every failure is reported under its stage name
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        manifest["stages"][stage] = {
            "status": "ran",
            "fingerprint": fp,
            "seconds": round(clock() - t0, 3),
            "counts": counts,
        }
        atomic_write(manifest_path, dump_json(manifest))
    atomic_write(manifest_path, dump_json(manifest))
    return manifest
