"""Deterministic synthetic worlds and the simulated providers built on them.

A world holds true weekly search volumes for every query in every country:
an anchor ladder around a mid-popularity reference query, the "Google"
reference entity, and the claim entities. 2019 is stationary noise around a
per-pair baseline; 2020 adds rectangular or exponentially decaying bursts.
The simulated trends provider mimics the public service: each request is
normalised so its largest value is 100, rounded to integers, and queries
whose mean falls below 1% of the group maximum come back empty.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .kglink import EntityRef, FixtureEntityProvider
from .rng import Stream
from .weeks import week_labels, year_slice

GOOGLE = EntityRef("/m/045c7b", "Google")
REFERENCE_QUERY = "anchor_ref"

# A few entities named in public reporting on COVID-19 misinformation; the
# rest of a world's entities are synthetic.
KNOWN_ENTITIES = (
    ("/m/012mj", "alcoholic drink", "alcohol"),
    ("/m/0c41j8y", "5G", "5g"),
    ("/m/03gns", "Hypoxia", "hypoxia"),
    ("/m/02vqfm", "Coffee", "coffee"),
    ("/m/0h3ttc", "Charles M. Lieber", "lieber"),
    ("/m/0z9c", "Aspirin", "aspirin"),
)

DEFAULT_COUNTRIES = (
    "AR BR CO ES FR IN IT KE MX PH PT TR US CA DE GB NG ZA ID BO CL PE VE EC UY PY "
    "CR GT HN SV PA DO CU NI PK BD LK NP MY SG TH VN KH MM AU NZ IE NL BE CH AT PL "
    "CZ SK HU RO BG GR RS HR UA GE AM AZ EG MA TN DZ GH CM SN CI UG"
).split()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    countries: tuple[str, ...] = tuple(DEFAULT_COUNTRIES[:8])
    n_entities: int = 8
    start_year: int = 2019
    end_year: int = 2020
    entity_level: tuple[float, float] = (0.05, 1.0)
    google_level: tuple[float, float] = (4.0, 8.0)
    anchors_above: int = 5
    anchors_below: int = 8
    anchor_step: tuple[float, float] = (0.6, 0.7)
    country_scale: tuple[float, float] = (1e2, 1e6)
    noise: float = 0.05
    burst_prob: float = 0.7
    max_bursts: int = 2
    burst_magnitude: tuple[float, float] = (0.5, 4.0)
    burst_width: tuple[int, int] = (2, 10)
    burst_decay: tuple[float, float] = (0.6, 0.9)
    missing_rate: float = 0.0
    noisy_countries: tuple[str, ...] = ()

    def __post_init__(self):
        if self.end_year < self.start_year:
            raise ConfigError("end_year precedes start_year")
        if not self.countries:
            raise ConfigError("world needs at least one country")
        if self.n_entities < 1:
            raise ConfigError("world needs at least one entity")
        if not 0 <= self.missing_rate <= 1:
            raise ConfigError("missing_rate must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        kw = {}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown synth config key {k!r}")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class BurstEvent:
    start: int  # week index within the final year
    height: float  # true volume units, before the country scale
    shape: str  # "rect" or "exp"
    width: int = 0
    decay: float = 0.0

    def profile(self, n_weeks: int) -> np.ndarray:
        t = np.arange(n_weeks) - self.start
        out = np.zeros(n_weeks)
        live = t >= 0
        if self.shape == "rect":
            out[live & (t < self.width)] = self.height
        else:
            out[live] = self.height * self.decay ** t[live]
        return out

    def integral(self, n_weeks: int) -> float:
        """Closed-form sum of :meth:`profile` over ``n_weeks`` weeks."""
        span = max(n_weeks - self.start, 0)
        if self.shape == "rect":
            return self.height * min(self.width, span)
        return self.height * (1 - self.decay**span) / (1 - self.decay)


def _entity_list(n: int) -> list[tuple[EntityRef, str]]:
    out = [(EntityRef(eid, name), word) for eid, name, word in KNOWN_ENTITIES[:n]]
    for i in range(len(out), n):
        out.append((EntityRef(f"/m/synth_{i:03d}", f"synthetic claim topic {i}"), f"topic{i:03d}"))
    return out


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode(s: str, shape: Sequence[int]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).copy()


@dataclass
class SynthWorld:
    seed: int
    config: SynthConfig
    weeks: tuple[str, ...]
    queries: tuple[str, ...]
    entities: tuple[EntityRef, ...]
    entity_catalog: dict[str, list[dict]]
    popularity: dict[str, np.ndarray]  # country -> (n_queries, n_weeks)
    events: dict[tuple[str, str], list[BurstEvent]] = field(default_factory=dict)
    baselines: dict[tuple[str, str], float] = field(default_factory=dict)
    missing: frozenset[tuple[str, str]] = frozenset()

    @property
    def countries(self) -> tuple[str, ...]:
        return self.config.countries

    @property
    def anchor_candidates(self) -> tuple[str, ...]:
        """Anchor query ids ordered from most to least popular."""
        return tuple(q for q in self.queries if q.startswith("anchor_"))

    def index(self, query: str) -> int:
        return self.queries.index(query)

    def true_series(self, query: str, country: str) -> np.ndarray:
        return self.popularity[country][self.index(query)]

    def true_reference_units(self, query: str, country: str) -> np.ndarray:
        """True volume divided by the reference query's maximum over the period."""
        ref = self.true_series(REFERENCE_QUERY, country)
        return self.true_series(query, country) / ref.max()

    def true_total(self, query: str, country: str) -> float:
        return float(self.true_reference_units(query, country).sum())

    def true_attention_curve(self, entity_id: str, country: str) -> np.ndarray:
        last, prev = self.config.end_year, self.config.end_year - 1
        cur, base = year_slice(self.weeks, last), year_slice(self.weeks, prev)
        v = self.true_series(entity_id, country)
        g = self.true_series(GOOGLE.entity_id, country)
        b = v[base].mean()
        r = g[cur].mean()
        return np.cumsum(np.maximum(v[cur] - b, 0.0)) / r

    def true_attention(self, entity_id: str, country: str) -> float:
        return float(self.true_attention_curve(entity_id, country)[-1])

    def scaled(self, factor: float) -> "SynthWorld":
        """Copy with every true volume multiplied by ``factor``."""
        return SynthWorld(
            seed=self.seed,
            config=self.config,
            weeks=self.weeks,
            queries=self.queries,
            entities=self.entities,
            entity_catalog=self.entity_catalog,
            popularity={c: p * factor for c, p in self.popularity.items()},
            events=self.events,
            baselines=self.baselines,
            missing=self.missing,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "weeks": list(self.weeks),
            "queries": list(self.queries),
            "entities": [e.to_dict() for e in self.entities],
            "entity_catalog": self.entity_catalog,
            "popularity": {c: _encode(p) for c, p in self.popularity.items()},
            "events": [
                {"entity_id": e, "country": c, "events": [asdict(ev) for ev in evs]}
                for (e, c), evs in sorted(self.events.items())
            ],
            "baselines": [
                {"entity_id": e, "country": c, "level": v}
                for (e, c), v in sorted(self.baselines.items())
            ],
            "missing": sorted([e, c] for e, c in self.missing),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthWorld":
        weeks = tuple(d["weeks"])
        queries = tuple(d["queries"])
        shape = (len(queries), len(weeks))
        return cls(
            seed=d["seed"],
            config=SynthConfig.from_dict(d["config"]),
            weeks=weeks,
            queries=queries,
            entities=tuple(EntityRef.from_dict(e) for e in d["entities"]),
            entity_catalog={k: list(v) for k, v in d["entity_catalog"].items()},
            popularity={c: _decode(s, shape) for c, s in d["popularity"].items()},
            events={
                (row["entity_id"], row["country"]): [BurstEvent(**ev) for ev in row["events"]]
                for row in d["events"]
            },
            baselines={(row["entity_id"], row["country"]): row["level"] for row in d["baselines"]},
            missing=frozenset((e, c) for e, c in d["missing"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SynthWorld":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_world(config: SynthConfig, seed: int) -> SynthWorld:
    weeks = week_labels(config.start_year, config.end_year)
    if not weeks:
        raise ConfigError("configured period has zero weeks")
    cur = year_slice(weeks, config.end_year)
    n_weeks = len(weeks)
    n_cur = cur.stop - cur.start

    ents = _entity_list(config.n_entities)
    anchor_ids = (
        [f"anchor_u{i:02d}" for i in range(config.anchors_above, 0, -1)]
        + [REFERENCE_QUERY]
        + [f"anchor_d{i:02d}" for i in range(1, config.anchors_below + 1)]
    )
    queries = tuple(anchor_ids + [GOOGLE.entity_id] + [e.entity_id for e, _ in ents])
    catalog: dict[str, list[dict]] = {}
    for e, word in ents + [(GOOGLE, "google")]:
        catalog.setdefault(word, []).append({**e.to_dict(), "score": 1000.0})

    # Noisy countries are unusable anyway, so missing pairs come from the others.
    pairs = [(e.entity_id, c) for c in config.countries if c not in config.noisy_countries
             for e, _ in ents]
    n_missing = int(round(config.missing_rate * len(pairs)))
    order = Stream(seed, "missing").permutation(len(pairs))
    missing = frozenset(pairs[i] for i in order[:n_missing])

    popularity: dict[str, np.ndarray] = {}
    events: dict[tuple[str, str], list[BurstEvent]] = {}
    baselines: dict[tuple[str, str], float] = {}
    for c in config.countries:
        s = Stream(seed, f"country/{c}")
        scale = float(s.log_uniform(1, *config.country_scale)[0])
        up = s.uniform(config.anchors_above, *config.anchor_step)
        down = s.uniform(config.anchors_below, *config.anchor_step)
        levels = np.concatenate([np.cumprod(1 / up)[::-1], [1.0], np.cumprod(down)])
        g_level = float(s.log_uniform(1, *config.google_level)[0])
        p = np.empty((len(queries), n_weeks))
        for i, lvl in enumerate(levels):
            if c in config.noisy_countries:
                spike = np.zeros(n_weeks)
                spike[int(s.integers(1, 0, n_weeks)[0])] = lvl
                p[i] = spike
            else:
                p[i] = lvl * (1 + config.noise * s.uniform(n_weeks, -1, 1))
        gi = len(levels)
        p[gi] = g_level * (1 + config.noise * s.uniform(n_weeks, -1, 1))
        for j, (e, _) in enumerate(ents):
            ps = Stream(seed, f"pair/{c}/{e.entity_id}")
            base = float(ps.log_uniform(1, *config.entity_level)[0])
            v = base * (1 + config.noise * ps.uniform(n_weeks, -1, 1))
            evs = []
            n_bursts = int(ps.integers(1, 0, config.max_bursts + 1)[0])
            if ps.uniform(1)[0] < config.burst_prob:
                for _ in range(max(n_bursts, 1)):
                    start = int(ps.integers(1, 0, n_cur)[0])
                    height = base * float(ps.uniform(1, *config.burst_magnitude)[0])
                    if ps.uniform(1)[0] < 0.5:
                        w = int(ps.integers(1, config.burst_width[0], config.burst_width[1] + 1)[0])
                        ev = BurstEvent(start, height, "rect", width=w)
                    else:
                        ev = BurstEvent(start, height, "exp",
                                        decay=float(ps.uniform(1, *config.burst_decay)[0]))
                    evs.append(ev)
                    v[cur] += ev.profile(n_cur)
            if (e.entity_id, c) in missing:
                v = v * 1e-5
                base *= 1e-5
                evs = [BurstEvent(ev.start, ev.height * 1e-5, ev.shape, ev.width, ev.decay)
                       for ev in evs]
            p[gi + 1 + j] = v
            events[(e.entity_id, c)] = evs
            baselines[(e.entity_id, c)] = base
        popularity[c] = p * scale
    return SynthWorld(
        seed=seed,
        config=config,
        weeks=weeks,
        queries=queries,
        entities=tuple(e for e, _ in ents),
        entity_catalog=catalog,
        popularity=popularity,
        events=events,
        baselines=baselines,
        missing=missing,
    )


class SimulatedTrendsProvider:
    """Answers group queries from a world the way the public service would."""

    def __init__(self, world: SynthWorld, empty_threshold: float = 0.01):
        self.world = world
        self.empty_threshold = empty_threshold
        self._week_index = {w: i for i, w in enumerate(world.weeks)}
        self._query_index = {q: i for i, q in enumerate(world.queries)}

    def query(self, queries: Sequence[str], country: str,
              period: tuple[str, str]) -> dict[str, list[int] | None]:
        out: dict[str, list[int] | None] = {q: None for q in queries}
        table = self.world.popularity.get(country)
        if table is None:
            return out
        sl = slice(self._week_index[period[0]], self._week_index[period[1]] + 1)
        known = {q: table[self._query_index[q], sl] for q in queries if q in self._query_index}
        if not known:
            return out
        group_max = max(float(v.max()) for v in known.values())
        if group_max <= 0:
            return out
        live = {q: v for q, v in known.items() if v.mean() >= self.empty_threshold * group_max}
        if not live:
            return out
        top = max(float(v.max()) for v in live.values())
        for q, v in live.items():
            out[q] = np.rint(100.0 * v / top).astype(int).tolist()
        return out


def simulate_provider(world: SynthWorld, empty_threshold: float = 0.01) -> SimulatedTrendsProvider:
    return SimulatedTrendsProvider(world, empty_threshold)


def entity_provider(world: SynthWorld) -> FixtureEntityProvider:
    return FixtureEntityProvider(world.entity_catalog)
