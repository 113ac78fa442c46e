"""Build the checked-in end-to-end fixture under tests/fixtures/golden.

The fixture is a synthetic world (39 claim entities over 72 usable countries
plus 4 whose trends data is pure noise) together with a fact-check export
whose claims cluster, split and link back to those entities. Fact-check
dates are placed on the pipeline's own calibrated attention curves so that
the mean relative attention at the first fact-check lands on TARGET.

    python scripts/make_fixture.py [--out tests/fixtures/golden] [--check]
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import math
import shutil
import tempfile
from pathlib import Path

import numpy as np

from factattn import pipeline, synthprov, trendscal
from factattn.attention import profile_from_series
from factattn.ingest import CANONICAL_COLUMNS
from factattn.rng import Stream
from factattn.weeks import week_start

SEED = 2020
NOISY = ("MW", "KR", "TL", "KG")
COUNTRIES = tuple(synthprov.DEFAULT_COUNTRIES[:72])
N_ENTITIES = 39
MISSING_RATE = 0.079  # rounds to 222 of 2808 pairs
N_FC_PAIRS = 410
TARGET = 0.346
TOLERANCE = 0.0003
N_UNLINKED = 7

FILLERS = (
    "video post shared viral claims says new people online message whatsapp "
    "facebook photo image circulating users social media report"
).split()
SYLLABLES = "ba ko ri mu ze ta lo vi ne su da pe fi go hu ja".split()
FIRST_DAY, LAST_DAY = dt.date(2020, 1, 1), dt.date(2020, 12, 31)


def pseudo_word(s: Stream, taken: set[str]) -> str:
    while True:
        idx = s.integers(3, 0, len(SYLLABLES))
        w = "".join(SYLLABLES[i] for i in idx)
        if w not in taken:
            taken.add(w)
            return w


def build_world() -> synthprov.SynthWorld:
    cfg = synthprov.SynthConfig(
        countries=COUNTRIES + NOISY,
        n_entities=N_ENTITIES,
        missing_rate=MISSING_RATE,
        noisy_countries=NOISY,
    )
    return synthprov.generate_world(cfg, SEED)


def calibrated_curves(world: synthprov.SynthWorld, workdir: Path) -> dict[tuple[str, str], np.ndarray]:
    """Pipeline attention curves for every usable (entity, country) pair."""
    cache = trendscal.SeriesCache(workdir / "cache")
    period = trendscal.Period.years()
    ents = [e.entity_id for e in world.entities]
    trendscal.fetch_all(synthprov.simulate_provider(world), [pipeline.GOOGLE_ID] + ents,
                        world.countries, world.anchor_candidates, cache, period,
                        synthprov.REFERENCE_QUERY, max_in_flight=4, stamp=False)
    out = {}
    for c in COUNTRIES:
        ref = cache.get(pipeline.GOOGLE_ID, c, period)
        for e in world.entities:
            series = cache.get(e.entity_id, c, period)
            if isinstance(series, trendscal.CalibratedSeries):
                prof = profile_from_series(e, series, ref, period)
                out[(e.entity_id, c)] = np.asarray(prof.curve)
    return out


def week_days(i: int) -> list[dt.date]:
    start = week_start(f"2020-W{i + 1:02d}")
    days = [start + dt.timedelta(days=d) for d in range(7)]
    return [d for d in days if FIRST_DAY <= d <= LAST_DAY]


def choose_pairs(curves, s: Stream) -> list[tuple[str, str]]:
    """Weighted sampling without replacement, skewed by entity and country."""
    ent_ids = sorted({e for e, _ in curves})
    ent_w = {e: 1.0 / (1 + i) ** 0.6 for i, e in enumerate(ent_ids)}
    cty_w = {c: 1.0 / (1 + i) ** 0.9 for i, c in enumerate(COUNTRIES)}
    pairs = sorted(p for p, curve in curves.items() if curve[-1] > 0)
    u = s.uniform(len(pairs))
    keys = [math.log(x) / (ent_w[e] * cty_w[c]) for x, (e, c) in zip(u, pairs)]
    order = sorted(range(len(pairs)), key=lambda i: -keys[i])
    return sorted(pairs[i] for i in order[:N_FC_PAIRS])


def place_first_weeks(pairs, curves, s: Stream) -> dict[tuple[str, str], int]:
    """Pick a first fact-check week per pair, then nudge until the mean hits TARGET."""
    rel = {p: curves[p] / curves[p][-1] for p in pairs}
    targets = s.uniform(len(pairs)) ** 1.9
    weeks = {}
    for p, t in zip(pairs, targets):
        weeks[p] = int(np.argmin(np.abs(rel[p] - t)))
    mean = lambda: sum(rel[p][weeks[p]] for p in pairs) / len(pairs)
    for p in pairs * 3:
        gap = TARGET - mean()
        if abs(gap) < TOLERANCE / 3:
            break
        want = rel[p][weeks[p]] + gap * len(pairs)
        weeks[p] = int(np.argmin(np.abs(rel[p] - want)))
    return weeks


def fc_count(s: Stream) -> int:
    u = float(s.uniform(1)[0])
    if u < 0.55:
        return 1
    if u < 0.9:
        return int(s.integers(1, 2, 6)[0])
    return int(s.integers(1, 6, 12)[0])


def random_day(s: Stream, after: dt.date) -> dt.date:
    span = (LAST_DAY - after).days
    return after + dt.timedelta(days=int(s.integers(1, 0, span + 1)[0]))


def text_for(core: list[str], s: Stream, n_fill: int | None = None) -> str:
    n = int(s.integers(1, 0, 3)[0]) if n_fill is None else n_fill
    fill = [FILLERS[i] for i in s.integers(n, 0, len(FILLERS))] if n else []
    words = list(core) + fill
    order = s.permutation(len(words))
    words = [words[i] for i in order]
    return " ".join(words).capitalize()


DATE_STYLES = ("%Y-%m-%d", "%d %B %Y", "%d/%m/%Y")


def write_fixture(out: Path, world: synthprov.SynthWorld, curves) -> dict:
    s = Stream(SEED, "fixture")
    pairs = choose_pairs(curves, Stream(SEED, "pairs"))
    first = place_first_weeks(pairs, curves, Stream(SEED, "weeks"))

    taken: set[str] = set(FILLERS)
    ents = list(world.entities)
    words = {hits[0]["entity_id"]: w for w, hits in world.entity_catalog.items()}
    cores = {}
    for e in ents:
        w = words[e.entity_id]
        base = [w] if w.isalpha() and len(w) > 2 else []
        cores[e.entity_id] = base + [pseudo_word(s, taken) for _ in range(4 - len(base))]
    # Two entities share three core words so text clustering merges them;
    # a split rule on their fourth word separates them again.
    merged_a, merged_b = ents[-2].entity_id, ents[-1].entity_id
    cores[merged_b] = cores[merged_a][:3] + [pseudo_word(s, taken)]
    # One entity has strays that only a keyword back-search recovers.
    per_entity: dict[str, list[str]] = {}
    for e, c in pairs:
        per_entity.setdefault(e, []).append(c)
    stray_ent = next(e.entity_id for e in ents if len(per_entity.get(e.entity_id, ())) >= 4)
    unlinked = [[pseudo_word(s, taken) for _ in range(4)] for _ in range(N_UNLINKED)]

    rows: list[dict] = []

    def add(text, date, country, rating="False", org="FactCheck Desk", style=None):
        fmt = style or DATE_STYLES[len(rows) % len(DATE_STYLES)]
        rows.append({
            "record_id": f"fc{len(rows):05d}",
            "date": date.strftime(fmt),
            "country": country,
            "organization": org,
            "claim_text": text,
            "source_platform": "Facebook",
            "article_url": f"https://factcheck.example/{len(rows):05d}",
            "language": "English",
            "rating": rating,
            "explanation": "",
        })

    first_day: dict[tuple[str, str], dt.date] = {}
    big = pairs[len(pairs) // 2]
    for p in pairs:
        e, c = p
        n = 23 if p == big else fc_count(s)
        days = week_days(first[p])
        d0 = days[int(s.integers(1, 0, len(days))[0])]
        first_day[p] = d0
        dates = [d0] + sorted(random_day(s, d0) for _ in range(n - 1))
        for i, d in enumerate(dates):
            # the first fact-check of each merged-pair entity has no filler so
            # the two groups are certain to touch
            n_fill = 0 if (e in (merged_a, merged_b) and i == 0) else None
            add(text_for(cores[e], s, n_fill), d, c)

    # fact-checks where the pipeline finds no usable data
    missing = sorted(world.missing)
    for e, c in missing[:5]:
        add(text_for(cores[e], s), dt.date(2020, 6, 1), c)
    for c in NOISY:
        add(text_for(cores[ents[0].entity_id], s), dt.date(2020, 4, 2), c)
    # stray records: one core word among many fillers, too far for clustering
    for i, c in enumerate(per_entity[stray_ent][:4]):
        text = " ".join([cores[stray_ent][0]] + FILLERS[i * 3: i * 3 + 5])
        add(text.capitalize(), random_day(s, first_day[(stray_ent, c)]), c)
    # claims that cluster but never map to an entity
    for k, core in enumerate(unlinked):
        for j in range(2 + k % 3):
            add(text_for(core, s), dt.date(2020, 3 + k, 1 + j), COUNTRIES[j])
    # singletons, out-of-scope rows and rows that fail validation
    for i in range(6):
        add(" ".join(pseudo_word(s, taken) for _ in range(5)).capitalize(),
            dt.date(2020, 2, 1 + i), COUNTRIES[i])
    add(text_for(cores[ents[1].entity_id], s), dt.date(2020, 7, 1), "US", rating="True")
    add(text_for(cores[ents[2].entity_id], s), dt.date(2020, 7, 2), "EU")
    add(text_for(cores[ents[2].entity_id], s), dt.date(2020, 7, 3), "LATAM")
    add(text_for(cores[ents[3].entity_id], s), dt.date(2019, 12, 20), "BR")
    add(text_for(cores[ents[3].entity_id], s), dt.date(2021, 1, 4), "BR")
    add(text_for(cores[ents[4].entity_id], s), dt.date(2020, 8, 8), "CN")
    add("", dt.date(2020, 8, 9), "AR")
    add(text_for(cores[ents[5].entity_id], s), dt.date(2020, 8, 10), "AR")
    rows[-1]["date"] = "sometime in August"
    # one row published for two countries at once, after both first fact-checks
    e2 = next(e for e, cs in sorted(per_entity.items()) if len(cs) >= 2 and e != stray_ent)
    add(text_for(cores[e2], s), LAST_DAY, ";".join(per_entity[e2][:2]))

    out.mkdir(parents=True, exist_ok=True)
    world.save(out / "world.json")
    (out / "synth_config.json").write_text(json.dumps(world.config.to_dict(), indent=1) + "\n")
    with open(out / "factchecks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fields = list(CANONICAL_COLUMNS)
        w.writerow([CANONICAL_COLUMNS[f] for f in fields])
        for r in rows:
            w.writerow([r[f] for f in fields])
    (out / "column_map.json").write_text(json.dumps(CANONICAL_COLUMNS, indent=1) + "\n")
    (out / "scope.json").write_text(json.dumps({
        "window_start": "2020-01-01", "window_end": "2020-12-31",
        "excluded_regions": [], "excluded_countries": ["CN"],
    }, indent=1) + "\n")
    for e in (merged_a, merged_b):
        if e not in per_entity:
            raise SystemExit(f"entity {e} has no fact-checked pair; pick another seed")
    return {"cores": cores, "unlinked": unlinked, "merged": (merged_a, merged_b),
            "stray": stray_ent, "pairs": pairs}


def link_files(out: Path, world: synthprov.SynthWorld, design: dict, work: Path) -> None:
    """Cluster once to learn the cluster ids, then write splits and the entity map."""
    a, b = design["merged"]
    cores = design["cores"]
    pipeline.run_ingest(out / "factchecks.csv", out / "column_map.json", out / "scope.json",
                        work / "records.jsonl")
    pipeline.run_cluster(work / "records.jsonl", work / "clusters.json")
    clusters = pipeline.read_clusters(work / "clusters.json")
    records = {r.record_id: r for r in pipeline.read_records(work / "records.jsonl")}

    def owner(cl):
        toks = set(" ".join(records[m].claim_text.lower() for m in cl.member_ids).split())
        hits = [e for e, core in cores.items() if set(core) <= toks]
        hits += [f"unlinked{k}" for k, core in enumerate(design["unlinked"]) if set(core) <= toks]
        return hits

    splits, entity_map = {}, {}
    by_id = {e.entity_id: e for e in world.entities}
    for cl in clusters:
        hits = owner(cl)
        if set(hits) == {a, b}:
            splits[cl.cluster_id] = [[f"{by_id[a].display_name.split()[-1]}", [cores[a][3]]],
                                     [f"{by_id[b].display_name.split()[-1]}", [cores[b][3]]]]
            continue
        if len(hits) != 1:
            raise SystemExit(f"cluster {cl.cluster_id} owned by {hits}")
        h = hits[0]
        if h.startswith("unlinked"):
            entity_map[cl.cluster_id] = "none"
        else:
            entity_map[cl.cluster_id] = by_id[h].to_dict()
            if h == design["stray"]:
                entity_map[cl.cluster_id]["keywords"] = [cores[h][0]]
    if len(splits) != 1:
        raise SystemExit(f"expected one merged cluster, found {len(splits)}")
    (cid, rule), = splits.items()
    for (label, kws), ent in zip(rule, (a, b)):
        entity_map[f"{cid}.{label}"] = by_id[ent].to_dict()
    (out / "splits.json").write_text(json.dumps(splits, indent=1) + "\n")
    (out / "entity_map.json").write_text(json.dumps(dict(sorted(entity_map.items())), indent=1) + "\n")


PIPELINE_TOML = """\
[paths]
workdir = "out"
factchecks = "factchecks.csv"
column_map = "column_map.json"
scope = "scope.json"
splits = "splits.json"
entity_map = "entity_map.json"

[cluster]
eps = 0.5
min_pts = 2

[provider]
kind = "sim"
world = "world.json"

[attention]
reference_entity = "/m/045c7b"
year = 2020

[analysis]
min_fc_claims = 10
kmax = 10
min_claim_countries = 10
"""


def strip_timestamp(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "generated_at"}


def run_and_check(out: Path) -> dict:
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp) / "fixture"
        shutil.copytree(out, work, ignore=shutil.ignore_patterns("out", "report.golden.json"))
        manifest = pipeline.run_pipeline(pipeline.PipelineConfig.from_toml(work / "pipeline.toml"))
        report = pipeline.read_json(work / "out" / "report.json")
    row = report["rq2"]["relative_attention_at_k"][0]
    print(json.dumps({s: v["counts"] for s, v in manifest["stages"].items()}, indent=1))
    print(f"profiles={report['counts']['profiles']} k=1 n={row['n']} mean={row['mean']:.5f}")
    return report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests/fixtures/golden")
    ap.add_argument("--check", action="store_true", help="only rerun the pipeline on the existing fixture")
    args = ap.parse_args(argv)
    if not args.check:
        world = build_world()
        with tempfile.TemporaryDirectory() as tmp:
            curves = calibrated_curves(world, Path(tmp))
            design = write_fixture(args.out, world, curves)
            link_files(args.out, world, design, Path(tmp))
        (args.out / "pipeline.toml").write_text(PIPELINE_TOML)
    report = run_and_check(args.out)
    row = report["rq2"]["relative_attention_at_k"][0]
    ok = row["n"] == N_FC_PAIRS and abs(row["mean"] - TARGET) <= 0.002
    if ok and not args.check:
        golden = json.dumps(strip_timestamp(report), indent=1, sort_keys=True) + "\n"
        (args.out / "report.golden.json").write_text(golden)
    print("fixture OK" if ok else "fixture does not meet its targets")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
