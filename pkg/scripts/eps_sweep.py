"""Print the eps sweep (0.3 to 0.7 in steps of 0.05) for an ingested records file.

    python scripts/eps_sweep.py tests/fixtures/golden/out/records.jsonl
"""

from __future__ import annotations

import argparse
from pathlib import Path

from factattn.claimcluster import distance_matrix, eps_grid, load_stopwords, sweep_eps, tokenize
from factattn.pipeline import read_records


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("records", type=Path)
    ap.add_argument("--min-pts", type=int, default=2)
    ap.add_argument("--stopwords", type=Path)
    args = ap.parse_args(argv)

    stop = load_stopwords(args.stopwords)
    records = read_records(args.records)
    d = distance_matrix([tokenize(r.claim_text, stop) for r in records])
    print(f"{'eps':>5} {'clusters':>8} {'noise':>7} largest")
    for row in sweep_eps(d, eps_grid(0.3, 0.7, 0.05), args.min_pts):
        largest = max((int(k) for k in row.size_histogram), default=0)
        print(f"{row.eps:>5.2f} {row.n_clusters:>8} {row.noise_fraction:>7.2%} {largest}")


if __name__ == "__main__":
    main()
