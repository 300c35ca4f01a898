"""Ranking metrics over run files: Success@k and MRR@k.

A pair scores on the rank of its gold claim in the post's ranked list.
Averaging is per pair by default; a per-post mode keeps only each post's
best pair. Pairs whose gold claim is absent from the candidate pool can
never be found; they still score zero but are counted separately so a
degraded pool is visible instead of silently deflating the metric.

All reductions run in sorted key order with compensated summation, so a
report is bit-identical across runs and platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .retrieval import CandidatePool, RankedList

UNIT_PAIR = "pair"
UNIT_POST_BEST = "post_best"
UNITS = (UNIT_PAIR, UNIT_POST_BEST)

UNKNOWN_LANGUAGE = "und"


def pair_success_at_k(rank: Optional[int], k: int) -> float:
    """1.0 when the gold claim sits at rank <= k, else 0.0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rank is not None and rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return 1.0 if rank is not None and rank <= k else 0.0


def reciprocal_rank_at_k(rank: Optional[int], k: int) -> float:
    """1/rank when the gold claim sits at rank <= k, else 0.0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rank is not None and rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return 1.0 / rank if rank is not None and rank <= k else 0.0


@dataclass(frozen=True)
class BucketMetrics:
    count: int
    success_at_k: float
    mrr_at_k: float


@dataclass(frozen=True)
class MetricsReport:
    k: int
    unit: str
    n_units: int
    success_at_k: float
    mrr_at_k: float
    gold_unreachable: int = 0
    by_language_pair: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "unit": self.unit,
            "n_units": self.n_units,
            "success_at_k": self.success_at_k,
            "mrr_at_k": self.mrr_at_k,
            "gold_unreachable": self.gold_unreachable,
            "by_language_pair": {
                key: {
                    "count": bucket.count,
                    "success_at_k": bucket.success_at_k,
                    "mrr_at_k": bucket.mrr_at_k,
                }
                for key, bucket in sorted(self.by_language_pair.items())
            },
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        buckets = {
            key: BucketMetrics(
                count=int(value["count"]),
                success_at_k=float(value["success_at_k"]),
                mrr_at_k=float(value["mrr_at_k"]),
            )
            for key, value in payload["by_language_pair"].items()
        }
        return cls(
            k=int(payload["k"]),
            unit=str(payload["unit"]),
            n_units=int(payload["n_units"]),
            success_at_k=float(payload["success_at_k"]),
            mrr_at_k=float(payload["mrr_at_k"]),
            gold_unreachable=int(payload["gold_unreachable"]),
            by_language_pair=buckets,
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MetricsReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def evaluate_run(
    ranked: Iterable[RankedList],
    pairs: Sequence[tuple[str, str]],
    k: int = 10,
    unit: str = UNIT_PAIR,
    post_languages: Optional[Mapping[str, str]] = None,
    claim_languages: Optional[Mapping[str, str]] = None,
    pool: Optional[CandidatePool] = None,
) -> MetricsReport:
    """Score gold pairs against ranked lists.

    Every evaluated post must have a ranked list; a missing one is an
    error, not a zero, because it means the run file does not cover the
    query set it is being scored on.
    """
    if unit not in UNITS:
        raise ValueError(f"unknown unit {unit!r}")
    if not pairs:
        raise ValueError("no pairs to evaluate")
    by_post: dict[str, RankedList] = {}
    for item in ranked:
        by_post[item.post_id] = item

    post_languages = post_languages or {}
    claim_languages = claim_languages or {}

    # (language key, success, reciprocal rank) per scored unit.
    scored: list[tuple[str, float, float]] = []
    unreachable = 0

    if unit == UNIT_PAIR:
        iterable: Iterable[tuple[str, str]] = sorted(pairs)
    else:
        grouped: dict[str, list[str]] = {}
        for post_id, claim_id in sorted(pairs):
            grouped.setdefault(post_id, []).append(claim_id)
        iterable = []

    def score_pair(post_id: str, claim_id: str) -> tuple[str, float, float]:
        nonlocal unreachable
        if post_id not in by_post:
            raise ValueError(f"no ranked list for post {post_id!r}")
        if pool is not None and claim_id not in pool:
            unreachable += 1
        rank = by_post[post_id].rank_of(claim_id)
        key = "{}->{}".format(
            post_languages.get(post_id, UNKNOWN_LANGUAGE),
            claim_languages.get(claim_id, UNKNOWN_LANGUAGE),
        )
        return key, pair_success_at_k(rank, k), reciprocal_rank_at_k(rank, k)

    if unit == UNIT_PAIR:
        for post_id, claim_id in iterable:
            scored.append(score_pair(post_id, claim_id))
    else:
        for post_id in sorted(grouped):
            best: Optional[tuple[str, float, float]] = None
            for claim_id in grouped[post_id]:
                candidate = score_pair(post_id, claim_id)
                if best is None or (candidate[1], candidate[2]) > (best[1], best[2]):
                    best = candidate
            scored.append(best)

    n = len(scored)
    success = math.fsum(s for _, s, _ in scored) / n
    mrr = math.fsum(r for _, _, r in scored) / n

    buckets: dict[str, BucketMetrics] = {}
    keys = sorted({key for key, _, _ in scored})
    for key in keys:
        rows = [(s, r) for bucket_key, s, r in scored if bucket_key == key]
        buckets[key] = BucketMetrics(
            count=len(rows),
            success_at_k=math.fsum(s for s, _ in rows) / len(rows),
            mrr_at_k=math.fsum(r for _, r in rows) / len(rows),
        )

    return MetricsReport(
        k=k,
        unit=unit,
        n_units=n,
        success_at_k=success,
        mrr_at_k=mrr,
        gold_unreachable=unreachable,
        by_language_pair=buckets,
    )


def compare_runs(
    reports: Sequence[tuple[str, MetricsReport]],
    fmt: str = "text",
) -> str:
    """Side-by-side table of named reports, as aligned text or CSV."""
    if fmt not in ("text", "csv"):
        raise ValueError(f"unknown format {fmt!r}")
    rows = [
        (
            name,
            str(report.n_units),
            f"{report.success_at_k:.4f}",
            f"{report.mrr_at_k:.4f}",
            str(report.gold_unreachable),
        )
        for name, report in reports
    ]
    headers = ("run", "n", "success@k", "mrr@k", "unreachable")
    if fmt == "csv":
        lines = [",".join(headers)]
        lines.extend(",".join(row) for row in rows)
        return "\n".join(lines) + "\n"
    widths = [
        max(len(headers[col]), *(len(row[col]) for row in rows)) if rows else len(headers[col])
        for col in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"
