"""Dataset accounting against the published MultiClaim v2 corpus.

These tests only run when MULTICLAIM_V2_DIR points at a local copy of
the dataset (posts/claims/pairs as .csv or .jsonl). Without it they
skip: the corpus is distributed under its own terms and is not bundled.
"""

import os
from pathlib import Path

import pytest

from claimlink.corpus import (
    crosslingual_view,
    filter_language_threshold,
    ingest,
    read_records,
)
from claimlink.splits import SplitManifest

DATASET_DIR = os.environ.get("MULTICLAIM_V2_DIR", "")

pytestmark = pytest.mark.skipif(
    not DATASET_DIR,
    reason="set MULTICLAIM_V2_DIR to a local MultiClaim v2 copy to run dataset accounting",
)

MULTILINGUAL = {"posts": 55_421, "claims": 52_911, "pairs": 63_913}
CROSSLINGUAL = {"posts": 7_975, "claims": 7_869, "pairs": 9_066}


def _find(stem: str) -> str:
    for suffix in (".csv", ".jsonl"):
        path = Path(DATASET_DIR) / f"{stem}{suffix}"
        if path.exists():
            return str(path)
    pytest.skip(f"{stem}.csv / {stem}.jsonl not found under {DATASET_DIR}")


@pytest.fixture(scope="module")
def filtered_corpus():
    result = ingest(
        read_records(_find("posts")),
        read_records(_find("claims")),
        read_records(_find("pairs")),
    )
    return filter_language_threshold(result.corpus, min_posts=180).corpus


def test_multilingual_counts(filtered_corpus):
    got = {
        "posts": len(filtered_corpus.posts),
        "claims": len(filtered_corpus.claims),
        "pairs": len(filtered_corpus.pairs),
    }
    assert got == MULTILINGUAL


def test_crosslingual_counts(filtered_corpus):
    view = crosslingual_view(filtered_corpus)
    got = {
        "posts": len({p.post_id for p in view.pairs}),
        "claims": len({p.claim_id for p in view.pairs}),
        "pairs": len(view.pairs),
    }
    assert got == CROSSLINGUAL


def test_published_split_ids_round_trip(tmp_path):
    source = Path(DATASET_DIR) / "manifest.json"
    if not source.exists():
        pytest.skip(f"no manifest.json under {DATASET_DIR}")
    manifest = SplitManifest.load(source)
    copy = tmp_path / "manifest.json"
    manifest.save(copy)
    reloaded = SplitManifest.load(copy)
    assert reloaded.split_of_post == manifest.split_of_post
    assert reloaded.split_of_claim == manifest.split_of_claim
    assert reloaded.ratios == manifest.ratios
