"""Command line front end.

Thin wrappers over the library: each subcommand parses arguments, calls
one or two library functions, and prints where its output went. The
``run`` subcommand drives the whole pipeline from a TOML config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shlex
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import corpus as corpus_mod
from .corpus import read_corpus, write_corpus
from .embedstore import ProviderSpec, embed_corpus, load_store, save_store
from .evaluation import MetricsReport, compare_runs, evaluate_run
from .langid import FusionConfig, SubprocessDetector, detect_languages
from .negatives import NegativeConfig, mine_negatives, serialize_negatives
from .pipeline import (
    EXIT_CONFIG,
    EXIT_STAGE,
    ConfigError,
    load_config,
    run_pipeline,
)
from .rerank import (
    RerankConfig,
    http_pair_scorer,
    http_text_model,
    rerank_cross_encoder,
    rerank_llm,
)
from .retrieval import (
    batch_retrieve,
    eval_pairs,
    make_pool,
    read_run,
    setting_corpus,
    write_run,
)
from .splits import SplitManifest, build_splits

logger = logging.getLogger(__name__)


def _cmd_ingest(args: argparse.Namespace) -> int:
    result = corpus_mod.ingest(
        corpus_mod.read_records(args.posts),
        corpus_mod.read_records(args.claims),
        corpus_mod.read_records(args.pairs),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(result.corpus, out)
    (out / "ingest_report.json").write_text(
        json.dumps(result.report.as_dict(), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"ingested {len(result.corpus.posts)} posts, {len(result.corpus.claims)} claims, "
          f"{len(result.corpus.pairs)} pairs -> {out}")
    return 0


def _cmd_langid(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    detectors = {}
    for spec in args.detector:
        name, _, command = spec.partition("=")
        if not command:
            print(f"detector spec must look like name=command, got {spec!r}", file=sys.stderr)
            return EXIT_CONFIG
        detectors[name] = SubprocessDetector(name, shlex.split(command))
    config = FusionConfig(min_avg_score=args.min_avg_score)
    try:
        post_langs, post_summary = detect_languages(
            {p.id: p.text for p in corpus.posts.values()}, detectors, config
        )
        claim_langs, claim_summary = detect_languages(
            {c.id: c.claim_text for c in corpus.claims.values()}, detectors, config
        )
    finally:
        for detector in detectors.values():
            detector.close()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus.with_languages(post_langs, claim_langs), out)
    (out / "langid_report.json").write_text(
        json.dumps(
            {"posts": post_summary.as_dict(), "claims": claim_summary.as_dict()},
            indent=1, sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    print(f"detected languages for {post_summary.resolved + post_summary.unresolved} posts, "
          f"{claim_summary.resolved + claim_summary.unresolved} claims -> {out}")
    return 0


def _parse_ratios(raw: str) -> tuple[float, float, float]:
    parts = [float(p) for p in raw.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated numbers")
    return parts[0], parts[1], parts[2]


def _cmd_split(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    filtered = corpus_mod.filter_language_threshold(corpus, min_posts=args.min_posts)
    if args.filtered_out:
        out = Path(args.filtered_out)
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(filtered.corpus, out)
    manifest = build_splits(filtered.corpus, ratios=args.ratios, seed=args.seed)
    manifest.save(args.out)
    counts = manifest.counts()
    print(f"split {counts}, manifest -> {args.out}")
    return 0


def _provider_from_args(args: argparse.Namespace) -> ProviderSpec:
    kind, endpoint, path = args.provider, args.endpoint, args.vectors
    if kind not in ("precomputed_file", "remote_service"):
        # Shorthand: a URL means a remote service, anything else a vector file.
        if kind.startswith(("http://", "https://")):
            kind, endpoint = "remote_service", args.provider
        else:
            kind, path = "precomputed_file", args.provider
    return ProviderSpec(
        kind=kind,
        endpoint=endpoint,
        path=path,
        batch_size=args.batch_size,
        query_template=args.query_template,
        passage_template=args.passage_template,
        tag=args.tag,
    )


def _cmd_embed(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    provider = _provider_from_args(args)
    if args.role == "query":
        items = [(p.id, p.text, "query") for p in corpus.posts.values()]
    else:
        items = [(c.id, c.claim_text, "passage") for c in corpus.claims.values()]
    items.sort(key=lambda item: item[0])
    existing = load_store(args.out) if Path(args.out).exists() else None
    outcome = embed_corpus(items, provider, existing=existing)
    save_store(outcome.store, args.out)
    print(f"embedded {len(outcome.store)} items "
          f"({outcome.provider_calls} provider calls, {len(outcome.failed)} failures) "
          f"-> {args.out}")
    if outcome.failed:
        for item_id, reason in outcome.failed[:10]:
            print(f"  failed {item_id}: {reason}", file=sys.stderr)
        return EXIT_STAGE
    return 0


_SETTING_ALIASES = {"multi": "multilingual", "cross": "crosslingual"}


def _setting(raw: str) -> str:
    return _SETTING_ALIASES.get(raw, raw)


def _cmd_retrieve(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    manifest = SplitManifest.load(args.manifest)
    query_store = load_store(args.queries_store)
    claim_store = load_store(args.claims_store)
    setting = _setting(args.setting)
    pool = make_pool(corpus, manifest, setting=setting, scope=args.scope)
    view = setting_corpus(corpus, setting)
    post_ids = sorted({pair.post_id for pair in view.pairs})
    if args.split != "all":
        post_ids = [p for p in post_ids if manifest.split_of_post.get(p) == args.split]
    post_ids = [p for p in post_ids if p in query_store]
    ranked = batch_retrieve(post_ids, query_store, claim_store, pool, k=args.k)
    write_run(ranked, args.out)
    print(f"retrieved top-{args.k} for {len(ranked)} posts over {len(pool)} candidates -> {args.out}")
    return 0


def _cmd_rerank(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    ranked = read_run(args.run)
    config = RerankConfig(
        top_n=args.top_n,
        window_size=args.window_size,
        stride=args.stride,
        template_path=args.template,
    )
    post_texts = {p.id: p.text for p in corpus.posts.values()}
    claim_texts = {c.id: c.claim_text for c in corpus.claims.values()}
    out = []
    failed = 0
    for item in ranked:
        started = time.monotonic()
        if args.mode == "cross_encoder":
            outcome = rerank_cross_encoder(
                item, post_texts[item.post_id], claim_texts,
                http_pair_scorer(args.endpoint), config,
            )
        else:
            outcome = rerank_llm(
                item, post_texts[item.post_id], claim_texts,
                http_text_model(args.endpoint), config,
            )
        elapsed_ms = (time.monotonic() - started) * 1000.0
        logger.info("reranked post %s: %d calls, %d failed, %.1f ms",
                    item.post_id, outcome.total_calls, outcome.failed_calls, elapsed_ms)
        out.append(outcome.ranked)
        failed += outcome.failed_calls
    write_run(out, args.out)
    print(f"reranked {len(out)} lists ({failed} failed calls) -> {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    manifest = SplitManifest.load(args.manifest)
    setting = _setting(args.setting)
    view = setting_corpus(corpus, setting)
    if args.split == "all":
        pairs = sorted((pair.post_id, pair.claim_id) for pair in view.pairs)
    else:
        pairs = eval_pairs(corpus, manifest, setting=setting, split=args.split)
    pool = make_pool(corpus, manifest, setting=setting, scope=args.scope)
    report = evaluate_run(
        read_run(args.run),
        pairs,
        k=args.k,
        unit=args.unit,
        post_languages={p.id: p.language for p in view.posts.values()},
        claim_languages={c.id: c.language for c in view.claims.values()},
        pool=pool,
    )
    report.save(args.out)
    print(f"success@{args.k} {report.success_at_k:.4f}  mrr@{args.k} {report.mrr_at_k:.4f}  "
          f"({report.n_units} {report.unit}s, {report.gold_unreachable} unreachable) -> {args.out}")
    return 0


def _cmd_negatives(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    manifest = SplitManifest.load(args.manifest)
    config = NegativeConfig(
        strategy=args.strategy,
        k=args.k,
        seed=args.seed,
        n_clusters=args.n_clusters,
        tau=args.tau,
    )
    query_store = load_store(args.queries_store) if args.queries_store else None
    claim_store = load_store(args.claims_store) if args.claims_store else None
    records = mine_negatives(
        corpus, manifest, config, query_store=query_store, claim_store=claim_store
    )
    serialize_negatives(records, args.out, config)
    short = sum(1 for r in records if r.shortfall)
    print(f"mined {len(records)} records ({args.strategy}, k={args.k}, "
          f"{short} short) -> {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    paths = list(args.metrics)
    if args.runs:
        paths.extend(p for p in args.runs.split(",") if p)
    if not paths:
        print("no metrics files given; pass paths or --runs A,B,C", file=sys.stderr)
        return EXIT_CONFIG
    reports = [(Path(p).stem, MetricsReport.load(p)) for p in paths]
    print(compare_runs(reports, fmt=args.format), end="")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.force:
        config = dataclasses.replace(config, force=True)
    result = run_pipeline(config, dry_run=args.dry_run)
    if args.dry_run:
        for stage in result.stages_run:
            print(f"pending {stage}")
        for stage in result.stages_skipped:
            print(f"cached  {stage}")
        return result.exit_code
    if result.exit_code != 0:
        print(f"pipeline failed: {result.error}", file=sys.stderr)
        return result.exit_code
    if result.metrics is not None:
        print(f"success@{result.metrics.k} {result.metrics.success_at_k:.4f}  "
              f"mrr@{result.metrics.k} {result.metrics.mrr_at_k:.4f}")
    print(f"ran {result.stages_run or 'nothing'}, skipped {result.stages_skipped or 'nothing'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claimlink",
        description="Retrieval over previously fact-checked claims.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read raw records into a clean corpus")
    p.add_argument("--posts", required=True)
    p.add_argument("--claims", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("langid", help="detect languages with external detector commands")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--detector", action="append", default=[], metavar="NAME=COMMAND")
    p.add_argument("--min-avg", "--min-avg-score", dest="min_avg_score", type=float, default=0.5)
    p.set_defaults(func=_cmd_langid)

    p = sub.add_parser("split", help="build stratified leakage-free splits")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.add_argument("--filtered-out", default="", help="directory for the filtered corpus")
    p.add_argument("--ratios", type=_parse_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-posts", type=int, default=180)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("embed", help="embed posts or claims into a vector store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--role", choices=("query", "passage"), required=True)
    p.add_argument("--out", required=True, help="store file path")
    p.add_argument("--provider", default="precomputed_file",
                   help="precomputed_file, remote_service, or directly a URL / vector file path")
    p.add_argument("--vectors", default="", help="JSONL vector file for precomputed_file")
    p.add_argument("--endpoint", default="", help="URL for remote_service")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--query-template", default="{text}")
    p.add_argument("--passage-template", default="{text}")
    p.add_argument("--tag", default="")
    p.set_defaults(func=_cmd_embed)

    setting_choices = ("multilingual", "crosslingual", "multi", "cross")

    p = sub.add_parser("retrieve", help="rank candidates for every post")
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries-store", "--posts-store", dest="queries_store", required=True)
    p.add_argument("--claims-store", required=True)
    p.add_argument("--setting", choices=setting_choices, default="multilingual")
    p.add_argument("--scope", "--pool", dest="scope", choices=("test", "full"), default="full")
    p.add_argument("--split", choices=("train", "dev", "test", "all"), default="test")
    p.add_argument("-k", type=int, default=30)
    p.add_argument("--out", required=True, help="run file path")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("rerank", help="re-rank the head of a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("cross_encoder", "llm"), required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--top-n", type=int, default=30)
    p.add_argument("--window-size", type=int, default=20)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--template", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("eval", help="score a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--setting", choices=setting_choices, default="multilingual")
    p.add_argument("--scope", "--pool", dest="scope", choices=("test", "full"), default="full")
    p.add_argument("--split", choices=("train", "dev", "test", "all"), default="test")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--unit", choices=("pair", "post_best"), default="pair")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("negatives", help="mine training negatives from the train split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", choices=("random", "similarity", "topic"), required=True)
    p.add_argument("-k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-clusters", type=int, default=50)
    p.add_argument("--tau", type=float, default=0.35)
    p.add_argument("--queries-store", default="")
    p.add_argument("--claims-store", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_negatives)

    p = sub.add_parser("report", help="compare metrics files side by side")
    p.add_argument("metrics", nargs="*")
    p.add_argument("--runs", default="", help="comma-separated metrics files")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="run the full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
