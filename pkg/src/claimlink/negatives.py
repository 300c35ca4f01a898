"""Hard-negative mining for contrastive training data.

Three strategies over the train split: uniform random draws, nearest
neighbors by embedding similarity, and same-topic draws from a claim
clustering. Every strategy excludes the gold claim, never repeats a
negative within a record, and draws only from claims visible to the
train split, so no dev or test material can leak into training files.

Randomness is streamed per post from (seed, post_id): adding or removing
posts never shifts any other post's draws.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .corpus import Corpus, TRAIN
from .embedstore import EmbeddingStore
from .retrieval import retrieve_topk
from .splits import SplitManifest, derive_rng

logger = logging.getLogger(__name__)

STRATEGY_RANDOM = "random"
STRATEGY_SIMILARITY = "similarity"
STRATEGY_TOPIC = "topic"
STRATEGIES = (STRATEGY_RANDOM, STRATEGY_SIMILARITY, STRATEGY_TOPIC)

UNCATEGORIZED = "uncategorized"

SHORTFALL_POOL_EXHAUSTED = "pool_exhausted"


@dataclass(frozen=True)
class NegativeConfig:
    strategy: str = STRATEGY_RANDOM
    k: int = 3
    seed: int = 0
    n_clusters: int = 50
    tau: float = 0.35
    max_iter: int = 50

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class NegativeRecord:
    post_id: str
    gold_claim_id: str
    negative_ids: tuple[str, ...]
    strategy: str
    shortfall: Optional[str] = None


@dataclass(frozen=True)
class ClusterMap:
    """Claim-to-topic assignment; ``uncategorized`` collects the outliers."""

    label_of: dict[str, str]
    centroids: np.ndarray = field(repr=False, compare=False, default=None)

    def members(self, label: str) -> list[str]:
        return sorted(c for c, lab in self.label_of.items() if lab == label)

    def labels(self) -> list[str]:
        return sorted(set(self.label_of.values()))


def cluster_claims(
    store: EmbeddingStore,
    claim_ids: Sequence[str],
    n_clusters: int,
    tau: float = 0.35,
    seed: int = 0,
    max_iter: int = 50,
) -> ClusterMap:
    """Spherical k-means over claim embeddings.

    Centroids live on the unit sphere and assignment is by cosine. After
    convergence, members whose similarity to their own centroid falls
    below ``tau`` are moved to the ``uncategorized`` bucket, which the
    topic miner uses as its fallback pool.
    """
    ordered = sorted(claim_ids)
    if len(set(ordered)) != len(ordered):
        raise ValueError("claim ids must be unique")
    if not ordered:
        raise ValueError("cannot cluster an empty claim set")
    n_clusters = min(n_clusters, len(ordered))
    matrix = store.rows(ordered).astype(np.float64)

    rng = derive_rng(seed, "cluster:init")
    centroid_rows = rng.choice(len(ordered), size=n_clusters, replace=False)
    centroids = matrix[np.sort(centroid_rows)].copy()

    assignment = np.full(len(ordered), -1, dtype=np.int64)
    for _ in range(max_iter):
        sims = matrix @ centroids.T
        new_assignment = np.argmax(sims, axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for cluster in range(n_clusters):
            members = matrix[assignment == cluster]
            if len(members) == 0:
                # Reseed a starved cluster with the worst-fitting point.
                worst = int(np.argmin(np.max(sims, axis=1)))
                centroids[cluster] = matrix[worst]
                continue
            mean = members.sum(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centroids[cluster] = mean / norm

    sims = matrix @ centroids.T
    own = sims[np.arange(len(ordered)), assignment]
    width = len(str(max(n_clusters - 1, 0)))
    label_of: dict[str, str] = {}
    for i, claim_id in enumerate(ordered):
        if own[i] < tau:
            label_of[claim_id] = UNCATEGORIZED
        else:
            label_of[claim_id] = f"c{assignment[i]:0{width}d}"
    return ClusterMap(label_of=label_of, centroids=centroids.astype(np.float32))


def train_pairs(corpus: Corpus, manifest: SplitManifest) -> list[tuple[str, str]]:
    """(post_id, gold_claim_id) pairs assigned to train, sorted."""
    out = [
        (pair.post_id, pair.claim_id)
        for pair in corpus.pairs
        if manifest.split_of_post.get(pair.post_id) == TRAIN
    ]
    out.sort()
    return out


def train_claim_pool(corpus: Corpus, manifest: SplitManifest) -> list[str]:
    """Claims visible to training, sorted; the only legal negative source."""
    return sorted(
        c for c in corpus.claims if manifest.split_of_claim.get(c) == TRAIN
    )


def _draw(rng: np.random.Generator, candidates: Sequence[str], count: int) -> list[str]:
    if count <= 0 or not candidates:
        return []
    count = min(count, len(candidates))
    picked = rng.choice(len(candidates), size=count, replace=False)
    return [candidates[i] for i in picked]


def mine_random(
    pairs: Sequence[tuple[str, str]],
    pool: Sequence[str],
    k: int,
    seed: int = 0,
) -> list[NegativeRecord]:
    """k uniform draws per pair from the pool, gold excluded."""
    pool_sorted = sorted(set(pool))
    records: list[NegativeRecord] = []
    for post_id, gold in pairs:
        eligible = [c for c in pool_sorted if c != gold]
        rng = derive_rng(seed, f"neg:random:{post_id}")
        negatives = sorted(_draw(rng, eligible, k))
        shortfall = SHORTFALL_POOL_EXHAUSTED if len(negatives) < k else None
        records.append(
            NegativeRecord(
                post_id=post_id,
                gold_claim_id=gold,
                negative_ids=tuple(negatives),
                strategy=STRATEGY_RANDOM,
                shortfall=shortfall,
            )
        )
    return records


def mine_similarity(
    pairs: Sequence[tuple[str, str]],
    query_store: EmbeddingStore,
    claim_store: EmbeddingStore,
    pool: Sequence[str],
    k: int,
) -> list[NegativeRecord]:
    """The k nearest pool claims to each post, gold excluded, best first.

    Deterministic given the stores; no seed is involved.
    """
    pool_sorted = sorted(set(pool))
    records: list[NegativeRecord] = []
    for post_id, gold in pairs:
        ranked = retrieve_topk(
            query_store.row(post_id), claim_store, k, pool=pool_sorted, exclude=(gold,)
        )
        negatives = tuple(claim_id for claim_id, _ in ranked)
        shortfall = SHORTFALL_POOL_EXHAUSTED if len(negatives) < k else None
        records.append(
            NegativeRecord(
                post_id=post_id,
                gold_claim_id=gold,
                negative_ids=negatives,
                strategy=STRATEGY_SIMILARITY,
                shortfall=shortfall,
            )
        )
    return records


def mine_topic(
    pairs: Sequence[tuple[str, str]],
    clusters: ClusterMap,
    k: int,
    seed: int = 0,
    pool: Optional[Sequence[str]] = None,
) -> list[NegativeRecord]:
    """Draws from the gold claim's topic cluster, gold excluded.

    When the cluster cannot fill k (tiny cluster, or gold itself is
    uncategorized), the remainder is drawn from the uncategorized bucket.
    Only claims in ``pool`` (when given) are eligible on either path.
    """
    allowed = set(pool) if pool is not None else None

    def eligible(label: str, exclude: set[str]) -> list[str]:
        out = [
            c
            for c, lab in clusters.label_of.items()
            if lab == label and c not in exclude
        ]
        if allowed is not None:
            out = [c for c in out if c in allowed]
        return sorted(out)

    records: list[NegativeRecord] = []
    for post_id, gold in pairs:
        rng = derive_rng(seed, f"neg:topic:{post_id}")
        gold_label = clusters.label_of.get(gold, UNCATEGORIZED)
        taken = list(_draw(rng, eligible(gold_label, {gold}), k))
        if len(taken) < k and gold_label != UNCATEGORIZED:
            backfill = eligible(UNCATEGORIZED, {gold, *taken})
            taken.extend(_draw(rng, backfill, k - len(taken)))
        negatives = tuple(sorted(taken))
        shortfall = SHORTFALL_POOL_EXHAUSTED if len(negatives) < k else None
        records.append(
            NegativeRecord(
                post_id=post_id,
                gold_claim_id=gold,
                negative_ids=negatives,
                strategy=STRATEGY_TOPIC,
                shortfall=shortfall,
            )
        )
    return records


def mine_negatives(
    corpus: Corpus,
    manifest: SplitManifest,
    config: NegativeConfig,
    query_store: Optional[EmbeddingStore] = None,
    claim_store: Optional[EmbeddingStore] = None,
    clusters: Optional[ClusterMap] = None,
) -> list[NegativeRecord]:
    """Mine negatives for every train pair under one strategy.

    The similarity strategy needs both stores; the topic strategy
    clusters the train claims itself when no clustering is supplied.
    """
    pairs = train_pairs(corpus, manifest)
    pool = train_claim_pool(corpus, manifest)
    if config.strategy == STRATEGY_RANDOM:
        return mine_random(pairs, pool, config.k, seed=config.seed)
    if config.strategy == STRATEGY_SIMILARITY:
        if query_store is None or claim_store is None:
            raise ValueError("similarity mining requires query and claim stores")
        return mine_similarity(pairs, query_store, claim_store, pool, config.k)
    if clusters is None:
        if claim_store is None:
            raise ValueError("topic mining requires a claim store or a clustering")
        clusters = cluster_claims(
            claim_store,
            pool,
            n_clusters=config.n_clusters,
            tau=config.tau,
            seed=config.seed,
            max_iter=config.max_iter,
        )
    return mine_topic(pairs, clusters, config.k, seed=config.seed, pool=pool)


# ---------------------------------------------------------------------------
# Offline serialization
# ---------------------------------------------------------------------------


def serialize_negatives(
    records: Iterable[NegativeRecord],
    path: Union[str, Path],
    config: NegativeConfig,
) -> None:
    """JSONL with one header line describing how the file was mined."""
    header = {
        "kind": "negatives",
        "strategy": config.strategy,
        "k": config.k,
        "seed": config.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "post_id": record.post_id,
                        "gold_claim_id": record.gold_claim_id,
                        "negative_ids": list(record.negative_ids),
                        "strategy": record.strategy,
                        "shortfall": record.shortfall,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_negatives(path: Union[str, Path]) -> tuple[dict, list[NegativeRecord]]:
    """Read a negatives file; returns (header, records)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first:
            raise ValueError(f"{path}: empty negatives file")
        header = json.loads(first)
        if header.get("kind") != "negatives":
            raise ValueError(f"{path}: missing negatives header line")
        records: list[NegativeRecord] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append(
                    NegativeRecord(
                        post_id=str(rec["post_id"]),
                        gold_claim_id=str(rec["gold_claim_id"]),
                        negative_ids=tuple(str(c) for c in rec["negative_ids"]),
                        strategy=str(rec["strategy"]),
                        shortfall=rec.get("shortfall"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(
                    f"{path}, line {lineno}: malformed negative record: {exc}"
                ) from exc
    return header, records
