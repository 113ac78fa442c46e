"""Small worlds built by hand for calibration tests."""

from __future__ import annotations

import numpy as np

from factattn import synthprov
from factattn.weeks import week_labels


def table_world(tables: dict[str, dict[str, np.ndarray]], n_weeks: int | None = None) -> synthprov.SynthWorld:
    """World whose country tables are given directly as ``{country: {query: series}}``."""
    weeks = week_labels(2019, 2020)
    queries = sorted({q for t in tables.values() for q in t})
    pop = {}
    for c, t in tables.items():
        arr = np.zeros((len(queries), len(weeks)))
        for q, s in t.items():
            arr[queries.index(q)] = np.broadcast_to(np.asarray(s, dtype=float), len(weeks))
        pop[c] = arr
    cfg = synthprov.SynthConfig(countries=tuple(tables))
    return synthprov.SynthWorld(0, cfg, weeks, tuple(queries), (), {}, pop)


def small_config(**kw) -> synthprov.SynthConfig:
    base = dict(countries=("AR", "BR"), n_entities=6)
    base.update(kw)
    return synthprov.SynthConfig(**base)
