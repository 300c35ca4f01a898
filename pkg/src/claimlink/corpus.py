"""Corpus ingestion and filtering for post / fact-check / pair data.

Inputs are record streams (JSON-lines or CSV with identical column
names): posts carry ``id``, ``text`` and an optional ``language``;
fact-checks carry ``id``, ``claim`` and an optional ``language``; pairs
carry ``post_id``, ``claim_id`` and ``relationship``. Ingestion keeps
only the post body and the claim field, enforces referential closure
(pairs with unknown endpoints are dropped, fact-checks without any pair
are dropped), and reports every drop by reason.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from claimlink.langid import LANGUAGE_REGISTRY, UNRESOLVED

logger = logging.getLogger(__name__)

TRAIN = "train"
DEV = "dev"
TEST = "test"
UNASSIGNED = "unassigned"
SPLITS = (TRAIN, DEV, TEST)

CLAIM_REVIEW = "claim_review"
BACKLINK = "backlink"
ALLOWED_RELATIONSHIPS = (CLAIM_REVIEW, BACKLINK)


class MalformedRecordError(ValueError):
    """A source record is missing fields or has the wrong shape."""

    def __init__(self, source: str, lineno: int, reason: str):
        super().__init__(f"{source}, line {lineno}: {reason}")
        self.source = source
        self.lineno = lineno
        self.reason = reason


class DuplicateIdError(ValueError):
    """Two records in one source share an id."""


class EmptyCorpusError(ValueError):
    """Nothing survived ingestion filtering."""


@dataclass(frozen=True)
class Post:
    """A social-media post; the query side of retrieval."""

    id: str
    text: str
    language: str = UNRESOLVED
    split: str = UNASSIGNED


@dataclass(frozen=True)
class FactCheck:
    """A fact-checked claim; the retrieval unit."""

    id: str
    claim_text: str
    language: str = UNRESOLVED
    split: str = UNASSIGNED


@dataclass(frozen=True)
class PairLink:
    """Gold association between a post and a fact-checked claim."""

    post_id: str
    claim_id: str
    relationship: str = CLAIM_REVIEW


@dataclass(frozen=True)
class Corpus:
    """Immutable bundle of posts, fact-checks, and their gold pairs."""

    posts: dict[str, Post]
    claims: dict[str, FactCheck]
    pairs: tuple[PairLink, ...]

    def gold_of_post(self) -> dict[str, set[str]]:
        """Map each post id to the set of its gold claim ids."""
        gold: dict[str, set[str]] = {}
        for pair in self.pairs:
            gold.setdefault(pair.post_id, set()).add(pair.claim_id)
        return gold

    def with_languages(
        self,
        post_languages: Optional[dict[str, str]] = None,
        claim_languages: Optional[dict[str, str]] = None,
    ) -> "Corpus":
        """Return a copy with detected languages filled in."""
        posts = {
            pid: replace(post, language=post_languages[pid]) if post_languages and pid in post_languages else post
            for pid, post in self.posts.items()
        }
        claims = {
            cid: replace(claim, language=claim_languages[cid]) if claim_languages and cid in claim_languages else claim
            for cid, claim in self.claims.items()
        }
        return Corpus(posts=posts, claims=claims, pairs=self.pairs)

    def with_splits(self, split_of_post: dict[str, str], split_of_claim: dict[str, str]) -> "Corpus":
        """Return a copy with split assignments applied."""
        posts = {
            pid: replace(post, split=split_of_post.get(pid, UNASSIGNED)) for pid, post in self.posts.items()
        }
        claims = {
            cid: replace(claim, split=split_of_claim.get(cid, UNASSIGNED)) for cid, claim in self.claims.items()
        }
        return Corpus(posts=posts, claims=claims, pairs=self.pairs)


@dataclass
class IngestReport:
    """Counts of kept and dropped records per reason."""

    kept: dict[str, int] = field(default_factory=dict)
    dropped: Counter = field(default_factory=Counter)
    language_coerced: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "kept": dict(self.kept),
            "dropped": dict(self.dropped),
            "language_coerced": dict(self.language_coerced),
        }


@dataclass
class IngestResult:
    corpus: Corpus
    report: IngestReport


Record = Union[dict, tuple[int, dict]]


def _with_lineno(source: Iterable[Record]) -> Iterator[tuple[int, dict]]:
    for i, item in enumerate(source, start=1):
        if isinstance(item, tuple):
            yield item
        else:
            yield i, item


def _clean_language(raw: Optional[str], counter: Counter, kind: str) -> str:
    if raw is None or raw == "":
        return UNRESOLVED
    code = str(raw).strip().lower()
    if code == UNRESOLVED:
        return UNRESOLVED
    if code not in LANGUAGE_REGISTRY:
        counter[f"{kind}:{code}"] += 1
        return UNRESOLVED
    return code


def ingest(
    posts_source: Iterable[Record],
    claims_source: Iterable[Record],
    pairs_source: Iterable[Record],
) -> IngestResult:
    """Build a closed corpus from raw record streams.

    Posts keep only the post-body text and fact-checks only the claim
    field, both whitespace-trimmed; blank texts are dropped. Pairs with a
    relationship other than ``claim_review``/``backlink`` or with unknown
    endpoints are dropped and counted; duplicate (post, claim) pairs
    collapse to one link, preferring ``claim_review``; fact-checks left
    without any pair are dropped. Languages outside the registry are
    coerced to ``und`` and counted.

    Raises:
        MalformedRecordError: missing/invalid field, with line number.
        DuplicateIdError: repeated id within one source.
        EmptyCorpusError: no posts, claims, or pairs survive.
    """
    report = IngestReport()

    posts: dict[str, Post] = {}
    for lineno, rec in _with_lineno(posts_source):
        if "id" not in rec or "text" not in rec:
            raise MalformedRecordError("posts", lineno, "record requires 'id' and 'text'")
        pid = str(rec["id"])
        if not pid:
            raise MalformedRecordError("posts", lineno, "empty id")
        if pid in posts:
            raise DuplicateIdError(f"duplicate post id {pid!r} (posts, line {lineno})")
        text = str(rec["text"]).strip()
        if not text:
            report.dropped["post_empty_text"] += 1
            continue
        language = _clean_language(rec.get("language"), report.language_coerced, "post")
        posts[pid] = Post(id=pid, text=text, language=language)

    claims: dict[str, FactCheck] = {}
    for lineno, rec in _with_lineno(claims_source):
        if "id" not in rec or "claim" not in rec:
            raise MalformedRecordError("claims", lineno, "record requires 'id' and 'claim'")
        cid = str(rec["id"])
        if not cid:
            raise MalformedRecordError("claims", lineno, "empty id")
        if cid in claims:
            raise DuplicateIdError(f"duplicate claim id {cid!r} (claims, line {lineno})")
        text = str(rec["claim"]).strip()
        if not text:
            report.dropped["claim_empty_text"] += 1
            continue
        language = _clean_language(rec.get("language"), report.language_coerced, "claim")
        claims[cid] = FactCheck(id=cid, claim_text=text, language=language)

    # Duplicate pairs collapse to one link, claim_review winning over backlink.
    pair_rel: dict[tuple[str, str], str] = {}
    for lineno, rec in _with_lineno(pairs_source):
        for key in ("post_id", "claim_id", "relationship"):
            if key not in rec:
                raise MalformedRecordError("pairs", lineno, f"record requires {key!r}")
        relationship = str(rec["relationship"])
        if relationship not in ALLOWED_RELATIONSHIPS:
            report.dropped["bad_relationship"] += 1
            continue
        post_id, claim_id = str(rec["post_id"]), str(rec["claim_id"])
        if post_id not in posts:
            report.dropped["unknown_post"] += 1
            continue
        if claim_id not in claims:
            report.dropped["unknown_claim"] += 1
            continue
        key = (post_id, claim_id)
        if key in pair_rel:
            report.dropped["duplicate_pair"] += 1
            if relationship == CLAIM_REVIEW:
                pair_rel[key] = CLAIM_REVIEW
            continue
        pair_rel[key] = relationship

    pairs = tuple(
        PairLink(post_id=p, claim_id=c, relationship=rel)
        for (p, c), rel in pair_rel.items()
    )

    paired_claims = {pair.claim_id for pair in pairs}
    orphan_claims = set(claims) - paired_claims
    report.dropped["orphan_claim"] += len(orphan_claims)
    claims = {cid: claim for cid, claim in claims.items() if cid in paired_claims}

    if not posts or not claims or not pairs:
        raise EmptyCorpusError(
            f"corpus empty after ingestion filtering "
            f"(posts={len(posts)}, claims={len(claims)}, pairs={len(pairs)})"
        )

    report.kept = {"posts": len(posts), "claims": len(claims), "pairs": len(pairs)}
    return IngestResult(corpus=Corpus(posts=posts, claims=claims, pairs=pairs), report=report)


@dataclass
class FilterResult:
    corpus: Corpus
    removed_languages: list[str]
    removed_und_posts: int


def filter_language_threshold(corpus: Corpus, min_posts: int = 180) -> FilterResult:
    """Drop posts from under-represented language strata.

    Posts with an unresolved language are dropped first, then every post
    whose language has fewer than ``min_posts`` posts. Fact-checks are
    kept regardless of their own language as long as they stay paired;
    closure is re-enforced afterwards.
    """
    if min_posts < 1:
        raise ValueError(f"min_posts must be >= 1, got {min_posts}")

    und_posts = [pid for pid, post in corpus.posts.items() if post.language == UNRESOLVED]

    counts = Counter(
        post.language for post in corpus.posts.values() if post.language != UNRESOLVED
    )
    removed_languages = sorted(lang for lang, n in counts.items() if n < min_posts)
    for lang in removed_languages:
        logger.warning("language %s removed: %d posts < threshold %d", lang, counts[lang], min_posts)

    keep_langs = {lang for lang in counts if lang not in set(removed_languages)}
    posts = {pid: post for pid, post in corpus.posts.items() if post.language in keep_langs}
    pairs = tuple(pair for pair in corpus.pairs if pair.post_id in posts)
    paired_claims = {pair.claim_id for pair in pairs}
    claims = {cid: claim for cid, claim in corpus.claims.items() if cid in paired_claims}

    return FilterResult(
        corpus=Corpus(posts=posts, claims=claims, pairs=pairs),
        removed_languages=removed_languages,
        removed_und_posts=len(und_posts),
    )


def crosslingual_view(corpus: Corpus) -> Corpus:
    """Restrict the corpus to pairs whose post and claim languages differ.

    Pairs where either side is unresolved are excluded (a pair cannot be
    asserted crosslingual without both languages). Posts and claims are
    restricted to those appearing in a kept pair; an empty view is valid.
    """
    kept: list[PairLink] = []
    for pair in corpus.pairs:
        post = corpus.posts[pair.post_id]
        claim = corpus.claims[pair.claim_id]
        if post.language == UNRESOLVED or claim.language == UNRESOLVED:
            continue
        if post.language != claim.language:
            kept.append(pair)

    post_ids = {pair.post_id for pair in kept}
    claim_ids = {pair.claim_id for pair in kept}
    return Corpus(
        posts={pid: corpus.posts[pid] for pid in corpus.posts if pid in post_ids},
        claims={cid: corpus.claims[cid] for cid in corpus.claims if cid in claim_ids},
        pairs=tuple(kept),
    )


# ---------------------------------------------------------------------------
# File adapters
# ---------------------------------------------------------------------------


def iter_jsonl(path: Union[str, Path]) -> Iterator[tuple[int, dict]]:
    """Yield (lineno, record) pairs from a JSON-lines file."""
    name = str(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(name, lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(rec, dict):
                raise MalformedRecordError(name, lineno, "record must be a JSON object")
            yield lineno, rec


def iter_csv(path: Union[str, Path]) -> Iterator[tuple[int, dict]]:
    """Yield (lineno, record) pairs from a CSV file with a header row."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, rec in enumerate(reader, start=2):
            yield lineno, {k: v for k, v in rec.items() if v is not None}


def read_records(path: Union[str, Path]) -> Iterator[tuple[int, dict]]:
    """Dispatch to the JSONL or CSV adapter based on file extension."""
    if str(path).endswith(".csv"):
        return iter_csv(path)
    return iter_jsonl(path)


def write_corpus(corpus: Corpus, out_dir: Union[str, Path]) -> dict[str, Path]:
    """Write posts/claims/pairs as JSON-lines into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "posts": out / "posts.jsonl",
        "claims": out / "claims.jsonl",
        "pairs": out / "pairs.jsonl",
    }
    with open(paths["posts"], "w", encoding="utf-8") as fh:
        for post in sorted(corpus.posts.values(), key=lambda p: p.id):
            fh.write(json.dumps(
                {"id": post.id, "text": post.text, "language": post.language},
                ensure_ascii=False, sort_keys=True,
            ) + "\n")
    with open(paths["claims"], "w", encoding="utf-8") as fh:
        for claim in sorted(corpus.claims.values(), key=lambda c: c.id):
            fh.write(json.dumps(
                {"id": claim.id, "claim": claim.claim_text, "language": claim.language},
                ensure_ascii=False, sort_keys=True,
            ) + "\n")
    with open(paths["pairs"], "w", encoding="utf-8") as fh:
        for pair in sorted(corpus.pairs, key=lambda p: (p.post_id, p.claim_id)):
            fh.write(json.dumps(
                {"post_id": pair.post_id, "claim_id": pair.claim_id, "relationship": pair.relationship},
                ensure_ascii=False, sort_keys=True,
            ) + "\n")
    return paths


def read_corpus(corpus_dir: Union[str, Path]) -> Corpus:
    """Load a corpus previously written by :func:`write_corpus`."""
    base = Path(corpus_dir)
    result = ingest(
        iter_jsonl(base / "posts.jsonl"),
        iter_jsonl(base / "claims.jsonl"),
        iter_jsonl(base / "pairs.jsonl"),
    )
    return result.corpus
