"""Second-stage re-ranking of retrieved candidates.

Two refiners over the head of a ranked list: a pair scorer (cross-encoder
style, one score per post/claim pair) and a listwise text model that
emits a permutation over a sliding window. Both touch only the top
``top_n`` entries and must preserve the candidate set; on any upstream
failure the current ordering is kept and the run continues.

Scores across stages are not comparable: the pair scorer emits logits,
the listwise stage emits synthetic reciprocal-position scores. Ordering
is the authoritative output; scores exist for inspection only.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from .retrieval import STAGE_CE, STAGE_LLM, RankedList

logger = logging.getLogger(__name__)

#: scorer(pairs) -> one score per (query_text, passage_text) pair.
PairScorer = Callable[[Sequence[tuple[str, str]]], Sequence[float]]
#: llm(prompt, max_tokens) -> completion text.
TextModel = Callable[[str, int], str]

_BRACKETED = re.compile(r"\[(\d+)\]")
_BARE = re.compile(r"\b(\d+)\b")


@dataclass(frozen=True)
class RerankConfig:
    top_n: int = 30
    window_size: int = 20
    stride: int = 10
    max_tokens: int = 512
    template_path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")
        if self.window_size < 2:
            raise ValueError(f"window_size must be >= 2, got {self.window_size}")
        if not 1 <= self.stride <= self.window_size:
            raise ValueError(
                f"stride must be in [1, window_size], got {self.stride}"
            )
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class RerankOutcome:
    ranked: RankedList
    total_calls: int = 0
    failed_calls: int = 0


def load_template(path: Optional[Union[str, Path]] = None) -> str:
    """Prompt template with ``{query}`` and ``{passages}`` slots."""
    if path is None:
        template = (
            resources.files("claimlink") / "templates" / "rankgpt_prompt.txt"
        ).read_text(encoding="utf-8")
    else:
        template = Path(path).read_text(encoding="utf-8")
    for slot in ("{query}", "{passages}"):
        if slot not in template:
            raise ValueError(f"prompt template missing required slot {slot}")
    return template


def parse_permutation(text: str, n: int) -> list[int]:
    """Recover a full permutation of ``range(n)`` from model output.

    Bracketed identifiers like ``[3]`` are preferred; if none appear,
    bare integers are taken instead. Identifiers are 1-based in the
    prompt. Duplicates keep their first occurrence, out-of-range values
    are dropped, and missing positions are appended in ascending order,
    so the result is always a valid permutation.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    matches = _BRACKETED.findall(text)
    if not matches:
        matches = _BARE.findall(text)
    seen: set[int] = set()
    order: list[int] = []
    for token in matches:
        value = int(token) - 1
        if 0 <= value < n and value not in seen:
            seen.add(value)
            order.append(value)
    for value in range(n):
        if value not in seen:
            order.append(value)
    return order


def rerank_cross_encoder(
    ranked: RankedList,
    post_text: str,
    claim_texts: Mapping[str, str],
    scorer: PairScorer,
    config: RerankConfig = RerankConfig(),
) -> RerankOutcome:
    """Re-order the top entries by pair scores; the tail is untouched.

    Head entries carry the scorer's scores, tail entries keep their
    retrieval scores. If the scorer fails the input ordering is returned
    unchanged.
    """
    head = list(ranked.entries[: config.top_n])
    tail = list(ranked.entries[config.top_n :])
    if not head:
        return RerankOutcome(ranked=RankedList(ranked.post_id, STAGE_CE, ranked.entries))

    pairs = [(post_text, claim_texts[claim_id]) for claim_id, _ in head]
    try:
        scores = list(scorer(pairs))
    except Exception as exc:
        logger.warning("pair scorer failed for post %s, keeping input order: %s",
                       ranked.post_id, exc)
        return RerankOutcome(
            ranked=RankedList(ranked.post_id, STAGE_CE, ranked.entries),
            total_calls=1,
            failed_calls=1,
        )
    if len(scores) != len(pairs):
        logger.warning("pair scorer returned %d scores for %d pairs on post %s, "
                       "keeping input order", len(scores), len(pairs), ranked.post_id)
        return RerankOutcome(
            ranked=RankedList(ranked.post_id, STAGE_CE, ranked.entries),
            total_calls=1,
            failed_calls=1,
        )

    rescored = [(claim_id, float(score)) for (claim_id, _), score in zip(head, scores)]
    rescored.sort(key=lambda item: (-item[1], item[0]))
    entries = tuple(rescored + tail)
    return RerankOutcome(
        ranked=RankedList(ranked.post_id, STAGE_CE, entries),
        total_calls=1,
    )


def _format_passages(claim_ids: Sequence[str], claim_texts: Mapping[str, str]) -> str:
    lines = []
    for position, claim_id in enumerate(claim_ids, start=1):
        text = " ".join(claim_texts[claim_id].split())
        lines.append(f"[{position}] {text}")
    return "\n".join(lines)


def rerank_llm(
    ranked: RankedList,
    post_text: str,
    claim_texts: Mapping[str, str],
    model: TextModel,
    config: RerankConfig = RerankConfig(),
) -> RerankOutcome:
    """Listwise re-ranking with a sliding window over the top entries.

    Windows run bottom-up: the last ``window_size`` candidates are
    permuted first, then the window slides toward the head by ``stride``
    so strong late candidates can bubble all the way up. A window whose
    model call or parse fails keeps its current order. Output scores are
    reciprocal positions over the whole list.
    """
    template = load_template(config.template_path)
    head_ids = [claim_id for claim_id, _ in ranked.entries[: config.top_n]]
    tail = list(ranked.entries[config.top_n :])
    total_calls = 0
    failed_calls = 0

    if len(head_ids) >= 2:
        start = max(0, len(head_ids) - config.window_size)
        while True:
            window = head_ids[start : start + config.window_size]
            prompt = template.replace("{query}", post_text).replace(
                "{passages}", _format_passages(window, claim_texts)
            )
            total_calls += 1
            try:
                reply = model(prompt, config.max_tokens)
                order = parse_permutation(reply, len(window))
                head_ids[start : start + config.window_size] = [window[i] for i in order]
            except Exception as exc:
                failed_calls += 1
                logger.warning("listwise window [%d:%d] failed for post %s, "
                               "keeping window order: %s",
                               start, start + config.window_size, ranked.post_id, exc)
            if start == 0:
                break
            start = max(0, start - config.stride)

    ordered_ids = head_ids + [claim_id for claim_id, _ in tail]
    entries = tuple(
        (claim_id, 1.0 / (position + 1)) for position, claim_id in enumerate(ordered_ids)
    )
    return RerankOutcome(
        ranked=RankedList(ranked.post_id, STAGE_LLM, entries),
        total_calls=total_calls,
        failed_calls=failed_calls,
    )


# ---------------------------------------------------------------------------
# HTTP adapters for the two service contracts
# ---------------------------------------------------------------------------


def http_pair_scorer(endpoint: str, timeout: float = 120.0) -> PairScorer:
    """Scorer posting ``{"pairs": [[q, p], ...]}`` and reading ``{"scores"}``."""

    def scorer(pairs: Sequence[tuple[str, str]]) -> list[float]:
        import requests

        response = requests.post(
            endpoint, json={"pairs": [[q, p] for q, p in pairs]}, timeout=timeout
        )
        response.raise_for_status()
        return [float(s) for s in response.json()["scores"]]

    return scorer


def http_text_model(endpoint: str, timeout: float = 120.0) -> TextModel:
    """Model posting ``{"prompt", "max_tokens"}`` and reading ``{"text"}``."""

    def model(prompt: str, max_tokens: int) -> str:
        import requests

        response = requests.post(
            endpoint, json={"prompt": prompt, "max_tokens": max_tokens}, timeout=timeout
        )
        response.raise_for_status()
        return str(response.json()["text"])

    return model
