"""Stratified, contamination-free train/dev/test split construction.

The pair graph's connected components are the atomic unit of assignment:
a component's posts and claims always move to the same split, which is
the minimal structure guaranteeing both claim-disjointness and pair
closure. Components are assigned greedily per language stratum, largest
first, to the split with the largest remaining post deficit.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from claimlink.corpus import DEV, SPLITS, TEST, TRAIN, Corpus

logger = logging.getLogger(__name__)

RATIO_TOLERANCE = 1e-9


@dataclass
class SplitManifest:
    """Record of one split build: assignments, targets, and provenance."""

    split_of_post: dict[str, str]
    split_of_claim: dict[str, str]
    ratios: tuple[float, float, float]
    seed: int
    stratify_key: str = "post_language"
    achieved: dict[str, dict[str, float]] = field(default_factory=dict)
    small_strata: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, dict[str, int]]:
        """Post/claim counts per split."""
        out = {name: {"posts": 0, "claims": 0} for name in SPLITS}
        for split in self.split_of_post.values():
            out[split]["posts"] += 1
        for split in self.split_of_claim.values():
            out[split]["claims"] += 1
        return out

    def to_json(self) -> str:
        doc = {
            "ratios": list(self.ratios),
            "seed": self.seed,
            "stratify_key": self.stratify_key,
            "achieved": self.achieved,
            "small_strata": self.small_strata,
            "posts": self.split_of_post,
            "claims": self.split_of_claim,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        doc = json.loads(text)
        ratios = tuple(float(r) for r in doc["ratios"])
        if len(ratios) != 3:
            raise ValueError(f"manifest ratios must have 3 entries, got {len(ratios)}")
        return cls(
            split_of_post=dict(doc["posts"]),
            split_of_claim=dict(doc["claims"]),
            ratios=ratios,  # type: ignore[arg-type]
            seed=int(doc["seed"]),
            stratify_key=doc.get("stratify_key", "post_language"),
            achieved={k: dict(v) for k, v in doc.get("achieved", {}).items()},
            small_strata=list(doc.get("small_strata", [])),
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SplitManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def validate_against(self, corpus: Corpus) -> None:
        """Check pair closure and total coverage over a corpus.

        Claim-disjointness is structural (one map entry per claim); this
        verifies that every pair's endpoints share a split and that every
        post and claim is covered.
        """
        missing_posts = set(corpus.posts) - set(self.split_of_post)
        missing_claims = set(corpus.claims) - set(self.split_of_claim)
        if missing_posts or missing_claims:
            raise ValueError(
                f"manifest does not cover the corpus: {len(missing_posts)} posts, "
                f"{len(missing_claims)} claims unassigned"
            )
        for pair in corpus.pairs:
            ps = self.split_of_post[pair.post_id]
            cs = self.split_of_claim[pair.claim_id]
            if ps != cs:
                raise ValueError(
                    f"pair ({pair.post_id}, {pair.claim_id}) spans splits {ps} != {cs}"
                )


@dataclass
class _Component:
    posts: list[str]
    claims: list[str]
    language: str


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for (seed, label); same inputs, same stream."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *words])


def _connected_components(corpus: Corpus) -> list[_Component]:
    # Union-find over post and claim nodes; pairs are the edges.
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for pid in corpus.posts:
        parent[f"p:{pid}"] = f"p:{pid}"
    for cid in corpus.claims:
        parent[f"c:{cid}"] = f"c:{cid}"
    for pair in corpus.pairs:
        union(f"p:{pair.post_id}", f"c:{pair.claim_id}")

    groups: dict[str, _Component] = {}
    for pid in sorted(corpus.posts):
        comp = groups.setdefault(find(f"p:{pid}"), _Component([], [], ""))
        comp.posts.append(pid)
    for cid in sorted(corpus.claims):
        comp = groups.setdefault(find(f"c:{cid}"), _Component([], [], ""))
        comp.claims.append(cid)

    components = []
    for comp in groups.values():
        langs = sorted(
            {corpus.posts[pid].language for pid in comp.posts}
        )
        if comp.posts:
            # Majority post language; ties broken by lexicographic code.
            counts: dict[str, int] = {}
            for pid in comp.posts:
                lang = corpus.posts[pid].language
                counts[lang] = counts.get(lang, 0) + 1
            comp.language = min(counts, key=lambda lang: (-counts[lang], lang))
        else:
            # Claim-only components cannot survive ingestion closure, but
            # tolerate them rather than crash on hand-built corpora.
            comp.language = langs[0] if langs else "und"
        components.append(comp)
    components.sort(key=lambda c: (c.posts[0] if c.posts else c.claims[0]))
    return components


def build_splits(
    corpus: Corpus,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitManifest:
    """Assign every post and claim to train/dev/test.

    Deterministic given ``seed``. Components are grouped by their
    majority post language and, within each stratum, handed out largest
    first to whichever split is furthest below its target share of
    posts (ties prefer train, then dev). A stratum with fewer than three
    components cannot populate all splits and goes entirely to train,
    with a warning.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError(f"ratios must have 3 entries (train, dev, test), got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > RATIO_TOLERANCE:
        raise ValueError(f"ratios must sum to 1.0 within {RATIO_TOLERANCE}, got sum {sum(ratios)}")

    components = _connected_components(corpus)
    strata: dict[str, list[_Component]] = {}
    for comp in components:
        strata.setdefault(comp.language, []).append(comp)

    split_of_post: dict[str, str] = {}
    split_of_claim: dict[str, str] = {}
    achieved: dict[str, dict[str, float]] = {}
    small_strata: list[str] = []

    for language in sorted(strata):
        comps = strata[language]
        total_posts = sum(len(c.posts) for c in comps)

        if len(comps) < len(SPLITS):
            logger.warning(
                "stratum %s has %d component(s); too small for all splits, assigning to train",
                language, len(comps),
            )
            small_strata.append(language)
            assignment = [TRAIN] * len(comps)
        else:
            # Shuffle to break size ties per seed, then largest first.
            rng = derive_rng(seed, f"stratum:{language}")
            order = rng.permutation(len(comps))
            ranked = sorted(range(len(comps)), key=lambda i: (-len(comps[i].posts), order[i]))
            deficits = {name: ratio * total_posts for name, ratio in zip(SPLITS, ratios)}
            assignment = [TRAIN] * len(comps)
            for i in ranked:
                target = max(SPLITS, key=lambda name: (deficits[name], -SPLITS.index(name)))
                assignment[i] = target
                deficits[target] -= len(comps[i].posts)

        got = {name: 0 for name in SPLITS}
        for comp, split in zip(comps, assignment):
            got[split] += len(comp.posts)
            for pid in comp.posts:
                split_of_post[pid] = split
            for cid in comp.claims:
                split_of_claim[cid] = split
        achieved[language] = {
            name: (got[name] / total_posts if total_posts else 0.0) for name in SPLITS
        }

    manifest = SplitManifest(
        split_of_post=split_of_post,
        split_of_claim=split_of_claim,
        ratios=ratios,  # type: ignore[arg-type]
        seed=seed,
        achieved=achieved,
        small_strata=small_strata,
    )
    manifest.validate_against(corpus)
    return manifest
