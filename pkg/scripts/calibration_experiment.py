"""Calibration error on random simulated worlds, grouped by chain length.

    python scripts/calibration_experiment.py --worlds 200 --countries 3
"""

from __future__ import annotations

import argparse
from collections import defaultdict

import numpy as np

from factattn.synthprov import GOOGLE, REFERENCE_QUERY, SynthConfig, generate_world, simulate_provider
from factattn.trendscal import Period, build_anchor_bank, calibrate


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--worlds", type=int, default=200)
    ap.add_argument("--countries", type=int, default=2)
    ap.add_argument("--entities", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--floor", type=int, default=20, help="co-query value floor for the strong subset")
    args = ap.parse_args(argv)

    from factattn.synthprov import DEFAULT_COUNTRIES

    cfg = SynthConfig(countries=DEFAULT_COUNTRIES[:args.countries], n_entities=args.entities,
                      entity_level=(0.002, 5.0))
    period = Period.years()
    errs, bounds = defaultdict(list), defaultdict(list)
    outside = no_signal = 0
    for w in range(args.worlds):
        world = generate_world(cfg, args.seed + w)
        prov = simulate_provider(world)
        ents = [GOOGLE.entity_id] + [e.entity_id for e in world.entities]
        for c in world.countries:
            bank = build_anchor_bank(prov, world.anchor_candidates, c, period, REFERENCE_QUERY)
            for e in ents:
                s = calibrate(prov, bank, e, c, period)
                if s is None:
                    no_signal += 1
                    continue
                truth = world.true_total(e, c)
                lo, hi = s.total_bounds()
                outside += not (lo <= truth * (1 + 1e-12) and truth <= hi * (1 + 1e-12))
                key = (s.chain_length, s.min_value >= args.floor)
                errs[key].append(abs(s.total() / truth - 1))
                bounds[key].append(max(1 - s.error_bound[0], s.error_bound[1] - 1))

    print(f"{'chain':>5} {'strong':>6} {'n':>6} {'median err':>11} {'max err':>9} {'max bound':>10}")
    for key in sorted(errs):
        e = np.asarray(errs[key])
        print(f"{key[0]:>5} {str(key[1]):>6} {len(e):>6} {np.median(e):>11.4%} {e.max():>9.4%} "
              f"{max(bounds[key]):>10.4%}")
    print(f"outside bound: {outside}; no signal: {no_signal}")


if __name__ == "__main__":
    main()
