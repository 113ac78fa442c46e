"""Command-line entry point: one subcommand per stage plus ``pipeline``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import kglink, pipeline, synthprov, trendscal
from .claimcluster import eps_grid
from .ingest import ConfigError


def _sweep(text: str) -> list[float]:
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep must look like start:stop:step") from None
    return eps_grid(start, stop, step)


def _countries(text: str) -> list[str] | str:
    if text == "all":
        return "all"
    return [c.strip().upper() for c in text.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factattn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse a fact-check export into records.jsonl")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--column-map", required=True, type=Path)
    s.add_argument("--scope", type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--errors", type=Path)

    s = sub.add_parser("cluster", help="group records into claim clusters")
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--eps", type=float, default=0.5)
    s.add_argument("--min-pts", type=int, default=2)
    s.add_argument("--sweep", type=_sweep)
    s.add_argument("--sweep-out", type=Path)
    s.add_argument("--stopwords", type=Path)
    s.add_argument("--splits", type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("link", help="attach knowledge-graph entities to clusters")
    s.add_argument("--clusters", required=True, type=Path)
    s.add_argument("--map", required=True, type=Path)
    s.add_argument("--records", type=Path, help="needed when the map declares keywords")
    s.add_argument("--stopwords", type=Path)
    s.add_argument("--provider", choices=("fixture", "live"))
    s.add_argument("--catalog", type=Path, help="word -> candidates file for --provider fixture")
    s.add_argument("--candidates-out", type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("synth", help="generate a synthetic world")
    s.add_argument("--config", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("fetch", help="calibrate trends series into a cache")
    s.add_argument("--linked", required=True, type=Path)
    s.add_argument("--countries", type=_countries, default="all")
    s.add_argument("--provider", choices=("sim", "live"), default="sim")
    s.add_argument("--world", type=Path)
    s.add_argument("--synth-config", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--url", help="endpoint for --provider live")
    s.add_argument("--anchors", help="comma-separated anchor queries for --provider live")
    s.add_argument("--reference-query")
    s.add_argument("--reference-entity", default=pipeline.GOOGLE_ID)
    s.add_argument("--cache", required=True, type=Path)
    s.add_argument("--max-in-flight", type=int, default=4)
    s.add_argument("--force", action="store_true")

    s = sub.add_parser("attention", help="compute attention profiles")
    s.add_argument("--cache", required=True, type=Path)
    s.add_argument("--linked", required=True, type=Path)
    s.add_argument("--records", required=True, type=Path)
    s.add_argument("--reference-entity", default=pipeline.GOOGLE_ID)
    s.add_argument("--year", type=int, default=2020)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("analyze", help="compute the report from profiles")
    s.add_argument("--profiles", required=True, type=Path)
    s.add_argument("--min-fc-claims", type=int, default=10)
    s.add_argument("--kmax", type=int, default=10)
    s.add_argument("--min-claim-countries", type=int, default=10)
    s.add_argument("--year", type=int, default=2020)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--tables-csv", type=Path)
    s.add_argument("--plot-series", type=Path)

    s = sub.add_parser("pipeline", help="run every stage from a TOML config")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--force", action="store_true")
    s.add_argument("--stage", choices=pipeline.STAGES)
    return p


def _fetch_provider(args):
    if args.provider == "live":
        if not (args.url and args.anchors) or args.countries == "all":
            raise ConfigError("--provider live needs --url, --anchors and an explicit --countries list")
        return (trendscal.LiveTrendsProvider(args.url), args.countries,
                args.anchors.split(","), args.reference_query)
    if args.world:
        world = synthprov.SynthWorld.load(args.world)
    else:
        cfg = (synthprov.SynthConfig.from_dict(pipeline.read_json(args.synth_config))
               if args.synth_config else synthprov.SynthConfig())
        world = synthprov.generate_world(cfg, args.seed)
    countries = list(world.countries) if args.countries == "all" else args.countries
    return (synthprov.simulate_provider(world), countries, list(world.anchor_candidates),
            args.reference_query or synthprov.REFERENCE_QUERY)


def _dispatch(args) -> dict:
    cmd = args.command
    if cmd == "ingest":
        return pipeline.run_ingest(args.input, args.column_map, args.scope, args.out, args.errors)
    if cmd == "cluster":
        return pipeline.run_cluster(args.records, args.out, args.eps, args.min_pts, args.stopwords,
                                    args.splits, args.sweep, args.sweep_out)
    if cmd == "link":
        provider = None
        if args.provider == "fixture":
            if args.catalog is None:
                raise ConfigError("--provider fixture needs --catalog")
            provider = kglink.FixtureEntityProvider.from_file(args.catalog)
        elif args.provider == "live":
            provider = kglink.LiveEntityProvider()
        return pipeline.run_link(args.clusters, args.map, args.out, args.records, args.stopwords,
                                 provider, args.candidates_out)
    if cmd == "synth":
        return pipeline.run_synth(args.config, args.seed, args.out)
    if cmd == "fetch":
        prov, countries, anchors, ref = _fetch_provider(args)
        return pipeline.run_fetch(args.linked, args.cache, prov, countries, anchors, ref,
                                  args.reference_entity, max_in_flight=args.max_in_flight,
                                  force=args.force)
    if cmd == "attention":
        return pipeline.run_attention(args.cache, args.linked, args.records, args.out,
                                      args.reference_entity, year=args.year)
    if cmd == "analyze":
        return pipeline.run_analyze(args.profiles, args.out, args.min_fc_claims, args.kmax,
                                    args.min_claim_countries, args.year, args.tables_csv,
                                    args.plot_series)
    cfg = pipeline.PipelineConfig.from_toml(args.config)
    return pipeline.run_pipeline(cfg, force=args.force, only=args.stage)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _dispatch(args)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CODES[exc.stage]
    except (ConfigError, synthprov.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CODES["config"]
    except Exception as exc:
        if args.command in pipeline.EXIT_CODES:
            print(f"error: stage {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return pipeline.EXIT_CODES[args.command]
        raise
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
