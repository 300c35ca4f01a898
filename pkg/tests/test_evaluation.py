import math

import numpy as np
import pytest

from claimlink.evaluation import (
    BucketMetrics,
    MetricsReport,
    compare_runs,
    evaluate_run,
    pair_success_at_k,
    reciprocal_rank_at_k,
)
from claimlink.retrieval import CandidatePool, RankedList

from oracles import success_and_mrr


def run_with_ranks(ranks):
    """One post per pair; gold claim is g{i}, placed at the given rank."""
    ranked, pairs = [], []
    for i, rank in enumerate(ranks):
        post, gold = f"p{i}", f"g{i}"
        entries = []
        for pos in range(1, 16):
            if rank is not None and pos == rank:
                entries.append((gold, 1.0 - pos * 0.01))
            else:
                entries.append((f"f{i}_{pos}", 1.0 - pos * 0.01))
        ranked.append(RankedList(post, "retrieve", tuple(entries)))
        pairs.append((post, gold))
    return ranked, pairs


class TestPairMetrics:
    @pytest.mark.parametrize(
        "rank,k,success,rr",
        [
            (1, 10, 1.0, 1.0),
            (10, 10, 1.0, 0.1),
            (11, 10, 0.0, 0.0),
            (None, 10, 0.0, 0.0),
            (3, 10, 1.0, 1.0 / 3.0),
            (1, 1, 1.0, 1.0),
            (2, 1, 0.0, 0.0),
        ],
    )
    def test_values(self, rank, k, success, rr):
        assert pair_success_at_k(rank, k) == success
        assert reciprocal_rank_at_k(rank, k) == pytest.approx(rr, abs=0)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            pair_success_at_k(1, 0)
        with pytest.raises(ValueError):
            reciprocal_rank_at_k(0, 10)


class TestEvaluateRun:
    def test_worked_example(self):
        # Four pairs at ranks 1, 5, 12, and absent; k=10.
        ranked, pairs = run_with_ranks([1, 5, 12, None])
        report = evaluate_run(ranked, pairs, k=10)
        assert report.success_at_k == pytest.approx(0.5, abs=0)
        assert report.mrr_at_k == pytest.approx(0.3, abs=0)
        assert report.n_units == 4

    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            ranks = [
                None if rng.random() < 0.2 else int(rng.integers(1, 16))
                for _ in range(n)
            ]
            ranked, pairs = run_with_ranks(ranks)
            report = evaluate_run(ranked, pairs, k=10)
            rank_of = {pairs[i]: ranks[i] for i in range(n)}
            want_s, want_m = success_and_mrr(rank_of, pairs, 10)
            assert report.success_at_k == pytest.approx(want_s, abs=1e-12)
            assert report.mrr_at_k == pytest.approx(want_m, abs=1e-12)

    def test_missing_ranked_list_is_an_error(self):
        ranked, pairs = run_with_ranks([1, 2])
        with pytest.raises(ValueError, match="no ranked list"):
            evaluate_run(ranked[:1], pairs, k=10)

    def test_no_pairs_is_an_error(self):
        with pytest.raises(ValueError, match="no pairs"):
            evaluate_run([], [], k=10)

    def test_unknown_unit_rejected(self):
        ranked, pairs = run_with_ranks([1])
        with pytest.raises(ValueError, match="unit"):
            evaluate_run(ranked, pairs, unit="query")

    def test_post_best_takes_best_pair(self):
        # One post with two golds at ranks 4 and 2; post_best keeps rank 2.
        entries = tuple((f"c{pos}", 1.0 - pos * 0.01) for pos in range(1, 11))
        ranked = [RankedList("p0", "retrieve", entries)]
        pairs = [("p0", "c4"), ("p0", "c2")]
        per_pair = evaluate_run(ranked, pairs, k=10, unit="pair")
        per_post = evaluate_run(ranked, pairs, k=10, unit="post_best")
        assert per_pair.n_units == 2
        assert per_post.n_units == 1
        assert per_post.mrr_at_k == pytest.approx(0.5, abs=0)
        assert per_pair.mrr_at_k == pytest.approx((0.25 + 0.5) / 2, abs=1e-15)

    def test_unreachable_counted_and_scored_zero(self):
        ranked, pairs = run_with_ranks([1, 3])
        pool = CandidatePool(claim_ids=("g0",), setting="multilingual", scope="full")
        report = evaluate_run(ranked, pairs, k=10, pool=pool)
        assert report.gold_unreachable == 1
        # g1 is outside the pool; it still contributes a zero to the mean.
        assert report.n_units == 2

    def test_language_buckets(self):
        ranked, pairs = run_with_ranks([1, 2, None])
        post_langs = {"p0": "en", "p1": "en", "p2": "de"}
        claim_langs = {"g0": "en", "g1": "fr", "g2": "de"}
        report = evaluate_run(
            ranked, pairs, k=10,
            post_languages=post_langs, claim_languages=claim_langs,
        )
        assert set(report.by_language_pair) == {"en->en", "en->fr", "de->de"}
        assert report.by_language_pair["en->en"] == BucketMetrics(1, 1.0, 1.0)
        assert report.by_language_pair["en->fr"] == BucketMetrics(1, 1.0, 0.5)
        assert report.by_language_pair["de->de"] == BucketMetrics(1, 0.0, 0.0)

    def test_buckets_weighted_mean_equals_overall(self):
        rng = np.random.default_rng(7)
        ranks = [None if rng.random() < 0.3 else int(rng.integers(1, 14)) for _ in range(60)]
        ranked, pairs = run_with_ranks(ranks)
        langs = ["en", "de", "fr", "es"]
        post_langs = {p: langs[i % 4] for i, (p, _) in enumerate(pairs)}
        claim_langs = {c: langs[(i * 2) % 4] for i, (_, c) in enumerate(pairs)}
        report = evaluate_run(
            ranked, pairs, k=10,
            post_languages=post_langs, claim_languages=claim_langs,
        )
        total = sum(b.count for b in report.by_language_pair.values())
        assert total == report.n_units
        weighted = math.fsum(
            b.count * b.success_at_k for b in report.by_language_pair.values()
        ) / total
        assert weighted == pytest.approx(report.success_at_k, abs=1e-12)

    def test_missing_language_falls_back_to_und(self):
        ranked, pairs = run_with_ranks([1])
        report = evaluate_run(ranked, pairs, k=10, post_languages={}, claim_languages={})
        assert list(report.by_language_pair) == ["und->und"]

    def test_deterministic_output(self):
        ranked, pairs = run_with_ranks([1, 4, None, 7])
        a = evaluate_run(ranked, pairs, k=10).to_json()
        b = evaluate_run(list(reversed(ranked)), list(reversed(pairs)), k=10).to_json()
        assert a == b


class TestReportSerialization:
    def test_round_trip(self, tmp_path):
        ranked, pairs = run_with_ranks([1, 5, 12, None])
        report = evaluate_run(
            ranked, pairs, k=10,
            post_languages={"p0": "en"}, claim_languages={"g0": "de"},
        )
        path = tmp_path / "metrics.json"
        report.save(path)
        assert MetricsReport.load(path) == report

    def test_json_is_stable(self):
        report = MetricsReport(
            k=10, unit="pair", n_units=2, success_at_k=0.5, mrr_at_k=0.25,
            by_language_pair={"b->b": BucketMetrics(1, 1.0, 0.5),
                              "a->a": BucketMetrics(1, 0.0, 0.0)},
        )
        text = report.to_json()
        assert text.index('"a->a"') < text.index('"b->b"')


class TestCompareRuns:
    def setup_method(self):
        ranked, pairs = run_with_ranks([1, 5, 12, None])
        self.report = evaluate_run(ranked, pairs, k=10)

    def test_text_table(self):
        out = compare_runs([("retrieve", self.report), ("rerank", self.report)])
        lines = out.splitlines()
        assert lines[0].split() == ["run", "n", "success@k", "mrr@k", "unreachable"]
        assert "retrieve" in lines[2]
        assert "0.5000" in lines[2]

    def test_csv(self):
        out = compare_runs([("a", self.report)], fmt="csv")
        assert out.splitlines()[0] == "run,n,success@k,mrr@k,unreachable"
        assert out.splitlines()[1].startswith("a,4,0.5000,0.3000")

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            compare_runs([("a", self.report)], fmt="html")
