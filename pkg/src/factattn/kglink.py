"""Knowledge-graph entity search and the human-authored cluster->entity map."""

from __future__ import annotations

import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .claimcluster import ClaimCluster
from .httpclient import JsonClient

_ENTITY_ID = re.compile(r"^/[mg]/[0-9A-Za-z_]+$")

KG_SEARCH_URL = "https://kgsearch.googleapis.com/v1/entities:search"
KG_KEY_ENV = "FACTATTN_KG_API_KEY"


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class EntityRef:
    entity_id: str
    display_name: str

    def __post_init__(self):
        if not _ENTITY_ID.match(self.entity_id):
            raise ValueError(f"malformed entity id {self.entity_id!r}")
        if not self.display_name.strip():
            raise ValueError(f"entity {self.entity_id} has an empty display name")

    def to_dict(self) -> dict:
        return {"entity_id": self.entity_id, "display_name": self.display_name}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EntityRef":
        return cls(d["entity_id"], d["display_name"])


@dataclass(frozen=True)
class EntityCandidateList:
    query: str
    candidates: tuple[tuple[EntityRef, float], ...]

    def __post_init__(self):
        scores = [s for _, s in self.candidates]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("candidate scores must be non-increasing")

    @property
    def top(self) -> EntityRef | None:
        return self.candidates[0][0] if self.candidates else None


class EntitySearchProvider(Protocol):
    def search(self, word: str, limit: int) -> list[tuple[EntityRef, float]]: ...


class FixtureEntityProvider:
    """Offline provider over a JSON catalog ``{word: [{entity_id, display_name, score}]}``."""

    def __init__(self, catalog: Mapping[str, Sequence[Mapping]]):
        self.catalog = {k.lower(): list(v) for k, v in catalog.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureEntityProvider":
        return cls(json.loads(Path(path).read_text()))

    def search(self, word: str, limit: int) -> list[tuple[EntityRef, float]]:
        hits = self.catalog.get(word.strip().lower(), [])
        return [(EntityRef.from_dict(h), float(h.get("score", 0.0))) for h in hits][:limit]


class LiveEntityProvider:
    """Knowledge Graph Search API client; the key comes from ``FACTATTN_KG_API_KEY``."""

    def __init__(self, client: JsonClient | None = None, api_key: str | None = None,
                 url: str = KG_SEARCH_URL, languages: str = "en"):
        self.client = client or JsonClient(rate=5.0)
        self.api_key = api_key or os.environ.get(KG_KEY_ENV, "")
        self.url = url
        self.languages = languages

    def search(self, word: str, limit: int) -> list[tuple[EntityRef, float]]:
        params = {"query": word, "limit": limit, "languages": self.languages}
        if self.api_key:
            params["key"] = self.api_key
        body = self.client.get(self.url, params)
        out = []
        for item in body.get("itemListElement", []):
            result = item.get("result", {})
            eid = result.get("@id", "").removeprefix("kg:")
            name = result.get("name", "")
            if _ENTITY_ID.match(eid) and name:
                out.append((EntityRef(eid, name), float(item.get("resultScore", 0.0))))
        return out


def search_entities(provider: EntitySearchProvider, word: str, limit: int = 10) -> EntityCandidateList:
    if not word.strip():
        raise ValueError("search word must be non-empty")
    hits = sorted(provider.search(word, limit), key=lambda h: -h[1])[:limit]
    return EntityCandidateList(word, tuple(hits))


def search_many(provider: EntitySearchProvider, words: Sequence[str], limit: int = 10,
                max_in_flight: int = 4) -> dict[str, EntityCandidateList]:
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = pool.map(lambda w: search_entities(provider, w, limit), words)
        return dict(zip(words, results))


def load_entity_map(path: str | Path) -> dict[str, EntityRef | None]:
    """Read ``{cluster_id: {entity_id, display_name[, keywords]} | "none"}``."""
    raw = json.loads(Path(path).read_text())
    return parse_entity_map(raw)


def parse_entity_map(raw: Mapping) -> dict[str, EntityRef | None]:
    out: dict[str, EntityRef | None] = {}
    for cid, val in raw.items():
        if val == "none" or val is None:
            out[cid] = None
        else:
            out[cid] = EntityRef.from_dict(val)
    return out


def entity_keywords(raw: Mapping) -> dict[str, list[str]]:
    """Back-search keywords declared in a raw mapping file, by cluster id."""
    return {
        cid: list(val["keywords"])
        for cid, val in raw.items()
        if isinstance(val, Mapping) and val.get("keywords")
    }


def apply_entity_map(
    clusters: Sequence[ClaimCluster], mapping: Mapping[str, EntityRef | None]
) -> list[ClaimCluster]:
    ids = [c.cluster_id for c in clusters]
    unknown = sorted(set(mapping) - set(ids))
    if unknown:
        raise MappingError(f"mapping references unknown cluster ids: {', '.join(unknown)}")
    missing = [cid for cid in ids if cid not in mapping]
    if missing:
        raise MappingError(f"mapping lacks cluster ids: {', '.join(missing)}")
    owner: dict[str, str] = {}
    for cid in ids:
        ent = mapping[cid]
        if ent is None:
            continue
        if ent.entity_id in owner:
            raise MappingError(
                f"entity {ent.entity_id} mapped to both {owner[ent.entity_id]} and {cid}"
            )
        owner[ent.entity_id] = cid
    return [replace(c, entity=mapping[c.cluster_id]) for c in clusters]


def linked(clusters: Sequence[ClaimCluster]) -> list[ClaimCluster]:
    return [c for c in clusters if c.entity is not None]
