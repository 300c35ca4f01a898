import json

import pytest

from claimlink.corpus import (
    CLAIM_REVIEW,
    BACKLINK,
    DuplicateIdError,
    EmptyCorpusError,
    MalformedRecordError,
    crosslingual_view,
    filter_language_threshold,
    ingest,
    iter_csv,
    iter_jsonl,
    read_corpus,
    write_corpus,
)

from conftest import build_corpus

POSTS = [
    {"id": "p1", "text": "first post", "language": "en"},
    {"id": "p2", "text": "segundo post", "language": "es"},
]
CLAIMS = [
    {"id": "c1", "claim": "a claim", "language": "en"},
    {"id": "c2", "claim": "otra afirmacion", "language": "es"},
]
PAIRS = [
    {"post_id": "p1", "claim_id": "c1", "relationship": CLAIM_REVIEW},
    {"post_id": "p2", "claim_id": "c2", "relationship": CLAIM_REVIEW},
]


def test_ingest_keeps_well_formed_records():
    result = ingest(POSTS, CLAIMS, PAIRS)
    assert set(result.corpus.posts) == {"p1", "p2"}
    assert set(result.corpus.claims) == {"c1", "c2"}
    assert len(result.corpus.pairs) == 2
    assert result.report.kept == {"posts": 2, "claims": 2, "pairs": 2}


def test_blank_text_dropped_and_counted():
    posts = POSTS + [{"id": "p3", "text": "   "}]
    result = ingest(posts, CLAIMS, PAIRS)
    assert "p3" not in result.corpus.posts
    assert result.report.dropped["post_empty_text"] == 1


def test_unknown_language_coerced_to_und():
    posts = [{"id": "p1", "text": "body", "language": "klingon"}] + POSTS[1:]
    result = ingest(posts, CLAIMS, PAIRS)
    assert result.corpus.posts["p1"].language == "und"
    assert result.report.language_coerced["post:klingon"] == 1


def test_duplicate_post_id_fails_fast():
    with pytest.raises(DuplicateIdError):
        ingest(POSTS + [{"id": "p1", "text": "again"}], CLAIMS, PAIRS)


def test_missing_field_names_source_and_line():
    with pytest.raises(MalformedRecordError) as err:
        ingest([{"id": "p1"}], CLAIMS, PAIRS)
    assert "posts" in str(err.value) and "line 1" in str(err.value)


def test_pair_with_unknown_endpoint_dropped():
    pairs = PAIRS + [
        {"post_id": "ghost", "claim_id": "c1", "relationship": CLAIM_REVIEW},
        {"post_id": "p1", "claim_id": "ghost", "relationship": CLAIM_REVIEW},
    ]
    result = ingest(POSTS, CLAIMS, pairs)
    assert result.report.dropped["unknown_post"] == 1
    assert result.report.dropped["unknown_claim"] == 1
    assert len(result.corpus.pairs) == 2


def test_bad_relationship_dropped():
    pairs = PAIRS + [{"post_id": "p1", "claim_id": "c2", "relationship": "retweet"}]
    result = ingest(POSTS, CLAIMS, pairs)
    assert result.report.dropped["bad_relationship"] == 1


def test_duplicate_pair_prefers_claim_review():
    pairs = [
        {"post_id": "p1", "claim_id": "c1", "relationship": BACKLINK},
        {"post_id": "p1", "claim_id": "c1", "relationship": CLAIM_REVIEW},
        {"post_id": "p2", "claim_id": "c2", "relationship": CLAIM_REVIEW},
    ]
    result = ingest(POSTS, CLAIMS, pairs)
    assert result.report.dropped["duplicate_pair"] == 1
    rel = {(p.post_id, p.claim_id): p.relationship for p in result.corpus.pairs}
    assert rel[("p1", "c1")] == CLAIM_REVIEW


def test_orphan_claims_dropped():
    claims = CLAIMS + [{"id": "c3", "claim": "never linked"}]
    result = ingest(POSTS, claims, PAIRS)
    assert "c3" not in result.corpus.claims
    assert result.report.dropped["orphan_claim"] == 1


def test_everything_filtered_raises():
    with pytest.raises(EmptyCorpusError):
        ingest(POSTS, CLAIMS, [{"post_id": "x", "claim_id": "y", "relationship": CLAIM_REVIEW}])


class TestFilterLanguageThreshold:
    def test_small_stratum_removed(self, caplog):
        posts = [(f"p{i}", f"text {i}", "en") for i in range(5)]
        posts.append(("px", "texto", "es"))
        corpus = build_corpus(
            posts, [("c1", "claim", "en")], [(p, "c1") for p, _, _ in posts]
        )
        with caplog.at_level("WARNING"):
            result = filter_language_threshold(corpus, min_posts=3)
        assert result.removed_languages == ["es"]
        assert "px" not in result.corpus.posts
        assert any("es" in record.message for record in caplog.records)

    def test_und_posts_always_dropped(self):
        corpus = build_corpus(
            [("p1", "a", "en"), ("p2", "b", "und")],
            [("c1", "claim", "en")],
            [("p1", "c1"), ("p2", "c1")],
        )
        result = filter_language_threshold(corpus, min_posts=1)
        assert result.removed_und_posts == 1
        assert set(result.corpus.posts) == {"p1"}

    def test_closure_maintained_after_filtering(self):
        corpus = build_corpus(
            [("p1", "a", "en"), ("p2", "b", "es")],
            [("c1", "x", "en"), ("c2", "y", "es")],
            [("p1", "c1"), ("p2", "c2")],
        )
        result = filter_language_threshold(corpus, min_posts=2)
        # Both strata fall below 2; nothing survives but structure is closed.
        assert set(result.corpus.claims) == {
            pair.claim_id for pair in result.corpus.pairs
        }


class TestCrosslingualView:
    def test_keeps_only_language_mismatched_pairs(self, tiny_corpus):
        view = crosslingual_view(tiny_corpus)
        assert [(p.post_id, p.claim_id) for p in view.pairs] == [("p2", "c1")]
        assert set(view.posts) == {"p2"}
        assert set(view.claims) == {"c1"}

    def test_und_pairs_excluded(self):
        corpus = build_corpus(
            [("p1", "a", "und")],
            [("c1", "x", "en")],
            [("p1", "c1")],
        )
        view = crosslingual_view(corpus)
        assert view.pairs == ()

    def test_empty_view_is_valid(self):
        corpus = build_corpus(
            [("p1", "a", "en")], [("c1", "x", "en")], [("p1", "c1")]
        )
        view = crosslingual_view(corpus)
        assert len(view.posts) == 0 and len(view.claims) == 0


def test_jsonl_round_trip(tmp_path, tiny_corpus):
    write_corpus(tiny_corpus, tmp_path)
    loaded = read_corpus(tmp_path)
    assert set(loaded.posts) == set(tiny_corpus.posts)
    assert set(loaded.claims) == set(tiny_corpus.claims)
    assert {(p.post_id, p.claim_id) for p in loaded.pairs} == {
        (p.post_id, p.claim_id) for p in tiny_corpus.pairs
    }
    assert loaded.posts["p2"].language == "es"


def test_write_corpus_is_deterministic(tmp_path, tiny_corpus):
    write_corpus(tiny_corpus, tmp_path / "a")
    write_corpus(tiny_corpus, tmp_path / "b")
    for name in ("posts.jsonl", "claims.jsonl", "pairs.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_iter_jsonl_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "p1", "text": "ok"}\nnot json\n', encoding="utf-8")
    with pytest.raises(MalformedRecordError) as err:
        list(iter_jsonl(path))
    assert "line 2" in str(err.value)


def test_iter_csv_reads_header_file(tmp_path):
    path = tmp_path / "posts.csv"
    path.write_text("id,text,language\np1,hello there,en\n", encoding="utf-8")
    records = list(iter_csv(path))
    assert records == [(2, {"id": "p1", "text": "hello there", "language": "en"})]


def test_csv_feeds_ingest(tmp_path):
    posts = tmp_path / "posts.csv"
    posts.write_text("id,text,language\np1,hello,en\n", encoding="utf-8")
    claims = tmp_path / "claims.jsonl"
    claims.write_text(json.dumps({"id": "c1", "claim": "x", "language": "en"}) + "\n")
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text(json.dumps(
        {"post_id": "p1", "claim_id": "c1", "relationship": CLAIM_REVIEW}) + "\n")
    from claimlink.corpus import read_records
    result = ingest(read_records(posts), read_records(claims), read_records(pairs))
    assert set(result.corpus.posts) == {"p1"}
