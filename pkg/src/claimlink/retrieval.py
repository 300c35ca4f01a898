"""Exact dense retrieval over candidate pools, plus ranked-run files.

Scoring is a full dot product of the query against every pool row, with
64-bit accumulation. There is no approximate index: pools up to a few
hundred thousand rows rank faster as one matrix product than any ANN
structure amortizes, and exactness keeps runs reproducible.

Ordering is deterministic: score descending, then claim id ascending.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .corpus import Corpus, TEST, SPLITS, crosslingual_view
from .embedstore import EmbeddingStore
from .splits import SplitManifest

MULTILINGUAL = "multilingual"
CROSSLINGUAL = "crosslingual"
SETTINGS = (MULTILINGUAL, CROSSLINGUAL)

SCOPE_TEST = "test"
SCOPE_FULL = "full"
SCOPES = (SCOPE_TEST, SCOPE_FULL)

STAGE_RETRIEVE = "retrieve"
STAGE_CE = "ce_rerank"
STAGE_LLM = "llm_rerank"


@dataclass(frozen=True)
class CandidatePool:
    """The set of claims a query is ranked against."""

    claim_ids: tuple[str, ...]
    setting: str = MULTILINGUAL
    scope: str = SCOPE_FULL
    _members: frozenset = field(default_factory=frozenset, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.claim_ids)) != len(self.claim_ids):
            raise ValueError("pool claim ids must be unique")
        object.__setattr__(self, "_members", frozenset(self.claim_ids))

    def __len__(self) -> int:
        return len(self.claim_ids)

    def __contains__(self, claim_id: str) -> bool:
        return claim_id in self._members


@dataclass(frozen=True)
class RankedList:
    """One query's ranked candidates, best first."""

    post_id: str
    stage: str
    entries: tuple[tuple[str, float], ...]

    def rank_of(self, claim_id: str) -> Optional[int]:
        """1-based rank of a claim, or None if it is not in the list."""
        for position, (candidate, _) in enumerate(self.entries, start=1):
            if candidate == claim_id:
                return position
        return None


def setting_corpus(corpus: Corpus, setting: str) -> Corpus:
    if setting == MULTILINGUAL:
        return corpus
    if setting == CROSSLINGUAL:
        return crosslingual_view(corpus)
    raise ValueError(f"unknown setting {setting!r}")


def make_pool(
    corpus: Corpus,
    manifest: SplitManifest,
    setting: str = MULTILINGUAL,
    scope: str = SCOPE_FULL,
) -> CandidatePool:
    """Candidate claims for a setting and scope, in sorted id order.

    ``test`` scope keeps only claims the manifest assigns to the test
    split; ``full`` keeps every claim visible in the setting.
    """
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    view = setting_corpus(corpus, setting)
    claim_ids = sorted(view.claims)
    if scope == SCOPE_TEST:
        claim_ids = [c for c in claim_ids if manifest.split_of_claim.get(c) == TEST]
    return CandidatePool(claim_ids=tuple(claim_ids), setting=setting, scope=scope)


def eval_pairs(
    corpus: Corpus,
    manifest: SplitManifest,
    setting: str = MULTILINGUAL,
    split: str = TEST,
) -> list[tuple[str, str]]:
    """(post_id, gold_claim_id) pairs of a split within a setting, sorted."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    view = setting_corpus(corpus, setting)
    out = [
        (pair.post_id, pair.claim_id)
        for pair in view.pairs
        if manifest.split_of_post.get(pair.post_id) == split
    ]
    out.sort()
    return out


def retrieve_topk(
    query_vec: np.ndarray,
    store: EmbeddingStore,
    k: int,
    pool: Optional[Union[CandidatePool, Sequence[str]]] = None,
    exclude: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Top-k pool claims by dot product with the query, exactly.

    Rows are unit-normalized at store build time, so the dot product is
    cosine similarity. Ties break on claim id ascending.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if pool is None:
        candidate_ids = list(store.ids)
    elif isinstance(pool, CandidatePool):
        candidate_ids = list(pool.claim_ids)
    else:
        candidate_ids = list(pool)
    excluded = set(exclude)
    if excluded:
        candidate_ids = [c for c in candidate_ids if c not in excluded]
    if not candidate_ids:
        return []

    matrix = store.rows(candidate_ids).astype(np.float64)
    scores = matrix @ np.asarray(query_vec, dtype=np.float64)
    ids_arr = np.array(candidate_ids)
    order = np.lexsort((ids_arr, -scores))[: min(k, len(candidate_ids))]
    return [(str(ids_arr[i]), float(scores[i])) for i in order]


def batch_retrieve(
    post_ids: Sequence[str],
    query_store: EmbeddingStore,
    claim_store: EmbeddingStore,
    pool: CandidatePool,
    k: int,
    stage: str = STAGE_RETRIEVE,
    chunk_size: int = 256,
) -> list[RankedList]:
    """Rank every post against the pool; posts are processed in sorted order.

    Queries are scored in chunks so the score matrix stays bounded at
    ``chunk_size x |pool|`` regardless of how many posts are asked for.
    """
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    ordered_posts = sorted(post_ids)
    if len(set(ordered_posts)) != len(ordered_posts):
        raise ValueError("post ids must be unique")
    if not pool.claim_ids:
        return [RankedList(post_id=p, stage=stage, entries=()) for p in ordered_posts]

    pool_matrix = claim_store.rows(pool.claim_ids).astype(np.float64)
    ids_arr = np.array(pool.claim_ids)
    top = min(k, len(pool.claim_ids))
    results: list[RankedList] = []
    for start in range(0, len(ordered_posts), chunk_size):
        chunk = ordered_posts[start : start + chunk_size]
        queries = query_store.rows(chunk).astype(np.float64)
        scores = queries @ pool_matrix.T
        for row, post_id in enumerate(chunk):
            order = np.lexsort((ids_arr, -scores[row]))[:top]
            entries = tuple((str(ids_arr[i]), float(scores[row, i])) for i in order)
            results.append(RankedList(post_id=post_id, stage=stage, entries=entries))
    return results


# ---------------------------------------------------------------------------
# Run files
# ---------------------------------------------------------------------------


def write_run(ranked: Iterable[RankedList], path: Union[str, Path]) -> None:
    """One JSON line per query: post id, stage, and [claim_id, score] entries."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in ranked:
            record = {
                "post_id": item.post_id,
                "stage": item.stage,
                "entries": [[claim_id, score] for claim_id, score in item.entries],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_run(path: Union[str, Path]) -> list[RankedList]:
    out: list[RankedList] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                entries = tuple(
                    (str(claim_id), float(score)) for claim_id, score in record["entries"]
                )
                out.append(
                    RankedList(
                        post_id=str(record["post_id"]),
                        stage=str(record["stage"]),
                        entries=entries,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}, line {lineno}: malformed run record: {exc}") from exc
    return out
