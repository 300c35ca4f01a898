from collections import Counter, defaultdict

import numpy as np
import pytest

from claimlink.corpus import SPLITS, TRAIN
from claimlink.splits import SplitManifest, build_splits, derive_rng

from conftest import build_corpus, random_corpus
from oracles import connected_components


def assert_split_hygiene(corpus, manifest):
    """Independent re-check of every split guarantee."""
    # Coverage: every post and claim assigned exactly once.
    assert set(manifest.split_of_post) == set(corpus.posts)
    assert set(manifest.split_of_claim) == set(corpus.claims)

    # Pair closure: both endpoints of every pair share a split.
    for pair in corpus.pairs:
        assert manifest.split_of_post[pair.post_id] == manifest.split_of_claim[pair.claim_id]

    # Claim-disjointness: the posts paired with one claim sit in one split.
    posts_of_claim = defaultdict(set)
    for pair in corpus.pairs:
        posts_of_claim[pair.claim_id].add(pair.post_id)
    for claim_id, post_ids in posts_of_claim.items():
        splits = {manifest.split_of_post[p] for p in post_ids}
        assert len(splits) == 1

    # Components are atomic.
    for posts, claims in connected_components(
        [(p.post_id, p.claim_id) for p in corpus.pairs]
    ):
        splits = {manifest.split_of_post[p] for p in posts}
        splits |= {manifest.split_of_claim[c] for c in claims}
        assert len(splits) == 1


def assert_fraction_error_bounded(corpus, manifest):
    """Per stratum and split, the miss vs target is at most one component."""
    comps = connected_components([(p.post_id, p.claim_id) for p in corpus.pairs])
    # Unpaired posts are singleton components of their own.
    paired_posts = {p for posts, _ in comps for p in posts}
    for pid in corpus.posts:
        if pid not in paired_posts:
            comps.append(({pid}, set()))

    def stratum_of(posts):
        counts = Counter(corpus.posts[p].language for p in posts)
        return min(counts, key=lambda lang: (-counts[lang], lang))

    by_stratum: dict[str, list[set]] = defaultdict(list)
    for posts, _ in comps:
        if posts:
            by_stratum[stratum_of(posts)].append(posts)

    for language, groups in by_stratum.items():
        if language in manifest.small_strata:
            continue
        total = sum(len(g) for g in groups)
        largest = max(len(g) for g in groups)
        got = {name: 0 for name in SPLITS}
        for group in groups:
            split = manifest.split_of_post[next(iter(group))]
            got[split] += len(group)
        for name, ratio in zip(SPLITS, manifest.ratios):
            assert abs(got[name] - ratio * total) <= largest, (
                f"stratum {language} split {name}: got {got[name]}, "
                f"target {ratio * total:.2f}, largest component {largest}"
            )


def test_ten_singleton_components_split_8_1_1():
    posts = [(f"p{i}", f"text {i}", "en") for i in range(10)]
    claims = [(f"c{i}", f"claim {i}", "en") for i in range(10)]
    pairs = [(f"p{i}", f"c{i}") for i in range(10)]
    manifest = build_splits(build_corpus(posts, claims, pairs), seed=1)
    counts = Counter(manifest.split_of_post.values())
    assert counts == {"train": 8, "dev": 1, "test": 1}


def test_shared_claim_forces_posts_together():
    posts = [(f"p{i}", f"text {i}", "en") for i in range(6)]
    claims = [("c0", "claim", "en")] + [(f"c{i}", f"claim {i}", "en") for i in range(1, 4)]
    pairs = [("p0", "c0"), ("p1", "c0"), ("p2", "c1"), ("p3", "c2"), ("p4", "c3"), ("p5", "c3")]
    manifest = build_splits(build_corpus(posts, claims, pairs), seed=0)
    assert manifest.split_of_post["p0"] == manifest.split_of_post["p1"]
    assert manifest.split_of_post["p4"] == manifest.split_of_post["p5"]


def test_small_stratum_goes_to_train(caplog):
    posts = [("p1", "a", "en"), ("p2", "b", "en"), ("px", "c", "es")]
    claims = [("c1", "x", "en"), ("c2", "y", "en"), ("cx", "z", "es")]
    pairs = [("p1", "c1"), ("p2", "c2"), ("px", "cx")]
    with caplog.at_level("WARNING"):
        manifest = build_splits(build_corpus(posts, claims, pairs), seed=0)
    assert manifest.split_of_post["px"] == TRAIN
    assert "es" in manifest.small_strata
    assert any("es" in record.message for record in caplog.records)


@pytest.mark.parametrize("bad_ratios", [(0.5, 0.5), (0.9, 0.2, 0.1), (-0.1, 0.6, 0.5)])
def test_invalid_ratios_rejected(bad_ratios, tiny_corpus):
    with pytest.raises(ValueError):
        build_splits(tiny_corpus, ratios=bad_ratios)


def test_same_seed_byte_identical():
    rng = np.random.default_rng(5)
    corpus = random_corpus(rng, max_items=400, max_languages=4)
    a = build_splits(corpus, seed=42).to_json()
    b = build_splits(corpus, seed=42).to_json()
    assert a == b


def test_different_seed_can_differ():
    posts = [(f"p{i}", f"text {i}", "en") for i in range(40)]
    claims = [(f"c{i}", f"claim {i}", "en") for i in range(40)]
    pairs = [(f"p{i}", f"c{i}") for i in range(40)]
    corpus = build_corpus(posts, claims, pairs)
    runs = {build_splits(corpus, seed=s).to_json() for s in range(5)}
    assert len(runs) > 1


def test_hygiene_on_random_corpora():
    rng = np.random.default_rng(99)
    for trial in range(15):
        corpus = random_corpus(rng, max_items=500, max_languages=6)
        manifest = build_splits(corpus, seed=trial)
        assert_split_hygiene(corpus, manifest)
        assert_fraction_error_bounded(corpus, manifest)


def test_unpaired_post_still_assigned():
    posts = [(f"p{i}", f"text {i}", "en") for i in range(5)] + [("lone", "alone", "en")]
    claims = [(f"c{i}", f"claim {i}", "en") for i in range(5)]
    pairs = [(f"p{i}", f"c{i}") for i in range(5)]
    manifest = build_splits(build_corpus(posts, claims, pairs), seed=0)
    assert "lone" in manifest.split_of_post


def test_manifest_round_trip(tmp_path, tiny_corpus):
    manifest = build_splits(tiny_corpus, seed=3)
    path = tmp_path / "manifest.json"
    manifest.save(path)
    loaded = SplitManifest.load(path)
    assert loaded.split_of_post == manifest.split_of_post
    assert loaded.split_of_claim == manifest.split_of_claim
    assert loaded.ratios == manifest.ratios
    assert loaded.seed == manifest.seed
    loaded.validate_against(tiny_corpus)


def test_validate_against_rejects_leaky_manifest(tiny_corpus):
    manifest = build_splits(tiny_corpus, seed=0)
    manifest.split_of_post["p1"] = "dev"
    manifest.split_of_claim["c1"] = "test"
    with pytest.raises(ValueError):
        manifest.validate_against(tiny_corpus)


def test_achieved_fractions_recorded():
    posts = [(f"p{i}", f"text {i}", "en") for i in range(10)]
    claims = [(f"c{i}", f"claim {i}", "en") for i in range(10)]
    pairs = [(f"p{i}", f"c{i}") for i in range(10)]
    manifest = build_splits(build_corpus(posts, claims, pairs), seed=1)
    assert manifest.achieved["en"]["train"] == pytest.approx(0.8)
    assert sum(manifest.achieved["en"].values()) == pytest.approx(1.0)


def test_derive_rng_streams_are_stable_and_distinct():
    first = derive_rng(7, "stratum:en").integers(0, 1 << 30, size=4)
    second = derive_rng(7, "stratum:en").integers(0, 1 << 30, size=4)
    other = derive_rng(7, "stratum:es").integers(0, 1 << 30, size=4)
    assert np.array_equal(first, second)
    assert not np.array_equal(first, other)
