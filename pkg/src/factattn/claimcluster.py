"""Claim clusters from fact-check descriptions.

Descriptions become boolean bags of words; pairwise Jaccard distances feed a
DBSCAN over the precomputed matrix. The manual refinements (choosing eps,
splitting overly broad clusters, pulling in stray fact-checks by keyword)
are exposed as plain functions driven by configuration.
"""

from __future__ import annotations

import re
from collections import Counter, deque
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .ingest import CLUSTERABLE_RATINGS, FactCheckRecord

if TYPE_CHECKING:
    from .kglink import EntityRef

NOISE = -1
_TOKEN = re.compile(r"[0-9a-z]+")


class ParameterError(ValueError):
    pass


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a one-term-per-line stop-word file; ``None`` gives the bundled English list."""
    if path is None:
        text = resources.files("factattn").joinpath("data/stopwords_en.txt").read_text()
    else:
        text = Path(path).read_text()
    return frozenset(
        w.strip().lower() for w in text.splitlines() if w.strip() and not w.startswith("#")
    )


def tokenize(text: str, stopwords: Iterable[str] = ()) -> frozenset[str]:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return frozenset(t for t in _TOKEN.findall(text.lower()) if t not in stop)


def jaccard_distance(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    union = len(a | b)
    if union == 0:
        return 0.0
    return 1.0 - len(a & b) / union


def distance_matrix(token_sets: Sequence[frozenset[str]]) -> np.ndarray:
    n = len(token_sets)
    vocab = {t: i for i, t in enumerate(sorted(set().union(*token_sets)))} if n else {}
    bow = np.zeros((n, len(vocab)), dtype=np.int64)
    for i, toks in enumerate(token_sets):
        bow[i, [vocab[t] for t in toks]] = 1
    inter = bow @ bow.T
    sizes = bow.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - inter / union
    d[union == 0] = 0.0
    np.fill_diagonal(d, 0.0)
    return d


def dbscan(d: np.ndarray, eps: float, min_pts: int) -> list[int]:
    """DBSCAN on a precomputed distance matrix.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Points are scanned in index order and each new cluster is
    fully expanded before the next starts, so a border point reachable from
    several clusters lands in the one created first. Returns one label per
    point, ``NOISE`` (-1) for unclustered points.
    """
    if not 0 < eps <= 1:
        raise ParameterError(f"eps must be in (0, 1], got {eps}")
    if min_pts < 1:
        raise ParameterError(f"min_pts must be >= 1, got {min_pts}")
    d = np.asarray(d)
    n = d.shape[0]
    neighbors = [np.flatnonzero(d[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbors]
    labels = [NOISE] * n
    next_label = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = next_label
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = next_label
                    if core[q]:
                        queue.append(q)
        next_label += 1
    return labels


@dataclass(frozen=True)
class SweepRow:
    eps: float
    n_clusters: int
    noise_fraction: float
    size_histogram: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "n_clusters": self.n_clusters,
            "noise_fraction": self.noise_fraction,
            "size_histogram": {str(k): v for k, v in sorted(self.size_histogram.items())},
        }


def sweep_eps(d: np.ndarray, eps_values: Sequence[float], min_pts: int = 2) -> list[SweepRow]:
    if not eps_values:
        raise ParameterError("eps_values must be non-empty")
    rows = []
    n = len(d)
    for eps in eps_values:
        labels = dbscan(d, eps, min_pts)
        sizes = Counter(l for l in labels if l != NOISE)
        rows.append(
            SweepRow(
                eps=float(eps),
                n_clusters=len(sizes),
                noise_fraction=labels.count(NOISE) / n if n else 0.0,
                size_histogram=dict(Counter(sizes.values())),
            )
        )
    return rows


def eps_grid(start: float, stop: float, step: float) -> list[float]:
    """Inclusive grid, rounded to avoid accumulated float drift."""
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


@dataclass(frozen=True)
class ClaimCluster:
    cluster_id: str
    member_ids: frozenset[str]
    label: str = ""
    entity: "EntityRef | None" = None

    def to_dict(self) -> dict:
        d = {
            "cluster_id": self.cluster_id,
            "label": self.label,
            "member_ids": sorted(self.member_ids),
        }
        if self.entity is not None:
            d["entity"] = self.entity.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClaimCluster":
        from .kglink import EntityRef

        ent = d.get("entity")
        return cls(
            cluster_id=d["cluster_id"],
            member_ids=frozenset(d["member_ids"]),
            label=d.get("label", ""),
            entity=EntityRef.from_dict(ent) if ent else None,
        )


def _label_for(token_sets: Iterable[frozenset[str]], n: int = 3) -> str:
    counts = Counter(t for toks in token_sets for t in toks)
    top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return " ".join(t for t, _ in top)


def cluster_records(
    records: Sequence[FactCheckRecord],
    eps: float = 0.5,
    min_pts: int = 2,
    stopwords: Iterable[str] | None = None,
    ratings: Iterable[str] = CLUSTERABLE_RATINGS,
) -> tuple[list[ClaimCluster], dict[str, frozenset[str]]]:
    """Cluster clusterable records; returns clusters and the token map used.

    Records are scanned in ``record_id`` order. Records with an empty token
    set or a rating outside ``ratings`` are left out of the matrix.
    """
    stop = load_stopwords() if stopwords is None else frozenset(stopwords)
    allowed = set(ratings)
    tokens = {
        r.record_id: tokenize(r.claim_text, stop)
        for r in sorted(records, key=lambda r: r.record_id)
        if r.rating in allowed
    }
    ids = [rid for rid, toks in tokens.items() if toks]
    labels = dbscan(distance_matrix([tokens[i] for i in ids]), eps, min_pts) if ids else []
    groups: dict[int, list[str]] = {}
    for rid, lab in zip(ids, labels):
        if lab != NOISE:
            groups.setdefault(lab, []).append(rid)
    clusters = [
        ClaimCluster(
            cluster_id=f"c{lab:03d}",
            member_ids=frozenset(members),
            label=_label_for(tokens[m] for m in members),
        )
        for lab, members in sorted(groups.items())
    ]
    return clusters, tokens


def split_cluster(
    cluster: ClaimCluster,
    rule: Sequence[tuple[str, Iterable[str]]],
    tokens: Mapping[str, frozenset[str]],
) -> list[ClaimCluster]:
    """Route members into keyword sub-clusters.

    ``rule`` is an ordered list of ``(label, keywords)``; a member joins the
    first group whose keywords intersect its tokens, else the residual
    sub-cluster ``<id>.rest``. Only non-empty sub-clusters are returned.
    """
    if not rule:
        raise ParameterError(f"empty split rule for cluster {cluster.cluster_id}")
    groups = [(label, frozenset(k.lower() for k in kws)) for label, kws in rule]
    buckets: dict[str, set[str]] = {label: set() for label, _ in groups}
    rest: set[str] = set()
    for rid in sorted(cluster.member_ids):
        toks = tokens.get(rid, frozenset())
        for label, kws in groups:
            if toks & kws:
                buckets[label].add(rid)
                break
        else:
            rest.add(rid)
    out = [
        ClaimCluster(f"{cluster.cluster_id}.{label}", frozenset(m), label=label)
        for label, m in buckets.items()
        if m
    ]
    if rest:
        out.append(ClaimCluster(f"{cluster.cluster_id}.rest", frozenset(rest), label=cluster.label))
    return out


def apply_splits(
    clusters: Sequence[ClaimCluster],
    splits: Mapping[str, Sequence[tuple[str, Iterable[str]]]],
    tokens: Mapping[str, frozenset[str]],
) -> list[ClaimCluster]:
    unknown = set(splits) - {c.cluster_id for c in clusters}
    if unknown:
        raise ParameterError(f"split rules reference unknown clusters: {sorted(unknown)}")
    out = []
    for c in clusters:
        out.extend(split_cluster(c, splits[c.cluster_id], tokens) if c.cluster_id in splits else [c])
    return out


def expand_cluster_by_keyword(
    cluster: ClaimCluster,
    all_records: Mapping[str, frozenset[str]],
    keywords: Iterable[str],
    claimed: Iterable[str] = (),
) -> ClaimCluster:
    """Add every record whose tokens hit ``keywords`` unless it is in ``claimed``.

    ``claimed`` holds the members of other entity-bound clusters.
    """
    kws = frozenset(k.lower() for k in keywords)
    if not kws:
        raise ParameterError("keywords must be non-empty")
    blocked = set(claimed) - cluster.member_ids
    extra = {rid for rid, toks in all_records.items() if toks & kws and rid not in blocked}
    if extra <= cluster.member_ids:
        return cluster
    return replace(cluster, member_ids=cluster.member_ids | extra)


def expand_all(
    clusters: Sequence[ClaimCluster],
    all_records: Mapping[str, frozenset[str]],
    keywords: Mapping[str, Iterable[str]],
) -> list[ClaimCluster]:
    """Expand entity-bound clusters in order, stealing only from unbound ones.

    Members moved into an entity-bound cluster are removed from unbound
    clusters so memberships stay disjoint; unbound clusters left empty are
    dropped.
    """
    current = list(clusters)
    for cid, kws in keywords.items():
        idx = next((i for i, c in enumerate(current) if c.cluster_id == cid), None)
        if idx is None:
            raise ParameterError(f"keyword expansion references unknown cluster {cid}")
        claimed = {
            m for c in current if c.entity is not None and c.cluster_id != cid for m in c.member_ids
        }
        grown = expand_cluster_by_keyword(current[idx], all_records, kws, claimed)
        current[idx] = grown
        moved = grown.member_ids
        current = [
            c if c.cluster_id == cid or c.entity is not None
            else replace(c, member_ids=c.member_ids - moved)
            for c in current
        ]
        current = [c for c in current if c.member_ids]
    return current
