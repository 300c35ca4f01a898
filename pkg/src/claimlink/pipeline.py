"""End-to-end experiment pipeline driven by one TOML config.

Stages run in order: ingest, optional language detection, split, embed,
retrieve, optional rerank, evaluate. Each stage writes its outputs under
the workdir and records a content digest of everything it depended on;
an unchanged digest with outputs present skips the stage, so edits to a
late stage's settings never recompute the early stages.

Exit codes: 0 on success, 2 for configuration problems, 3 for a stage
failure at runtime.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import corpus as corpus_mod
from . import negatives as negatives_mod
from .corpus import Corpus, read_corpus, write_corpus
from .embedstore import EmbeddingStore, ProviderSpec, embed_corpus, load_store, save_store
from .evaluation import UNITS, MetricsReport, evaluate_run
from .langid import FusionConfig, SubprocessDetector, detect_languages
from .rerank import (
    RerankConfig,
    http_pair_scorer,
    http_text_model,
    rerank_cross_encoder,
    rerank_llm,
)
from .retrieval import (
    SCOPES,
    SETTINGS,
    STAGE_CE,
    STAGE_LLM,
    batch_retrieve,
    eval_pairs,
    make_pool,
    read_run,
    setting_corpus,
    write_run,
)
from .splits import SplitManifest, build_splits

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

RERANK_NONE = "none"
RERANK_CE = "cross_encoder"
RERANK_LLM = "llm"
RERANK_MODES = (RERANK_NONE, RERANK_CE, RERANK_LLM)

EVAL_SPLITS = ("train", "dev", "test", "all")

ENV_PREFIX = "CLAIMLINK_"


class ConfigError(ValueError):
    """The configuration cannot produce a runnable pipeline."""


@dataclass(frozen=True)
class ExperimentConfig:
    posts_path: str
    claims_path: str
    pairs_path: str
    workdir: str
    langid_detectors: tuple[tuple[str, str], ...] = ()
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    min_posts_per_language: int = 180
    embed_provider: str = "precomputed_file"
    embed_path: str = ""
    embed_endpoint: str = ""
    embed_batch_size: int = 32
    embed_query_template: str = "{text}"
    embed_passage_template: str = "{text}"
    embed_tag: str = ""
    allow_partial_embeddings: bool = False
    setting: str = "multilingual"
    scope: str = "full"
    retrieve_depth: int = 30
    rerank_mode: str = RERANK_NONE
    rerank_endpoint: str = ""
    rerank_top_n: int = 30
    rerank_window: int = 20
    rerank_stride: int = 10
    rerank_template: str = ""
    eval_k: int = 10
    eval_unit: str = "pair"
    eval_split: str = "test"
    force: bool = False

    def __post_init__(self) -> None:
        if self.setting not in SETTINGS:
            raise ConfigError(f"retrieval.setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.scope not in SCOPES:
            raise ConfigError(f"retrieval.scope must be one of {SCOPES}, got {self.scope!r}")
        if self.rerank_mode not in RERANK_MODES:
            raise ConfigError(f"rerank.mode must be one of {RERANK_MODES}, got {self.rerank_mode!r}")
        if self.eval_unit not in UNITS:
            raise ConfigError(f"eval.unit must be one of {UNITS}, got {self.eval_unit!r}")
        if self.eval_split not in EVAL_SPLITS:
            raise ConfigError(f"eval.split must be one of {EVAL_SPLITS}, got {self.eval_split!r}")
        if self.retrieve_depth < self.eval_k:
            raise ConfigError(
                f"retrieval.depth ({self.retrieve_depth}) must be >= eval.k ({self.eval_k})"
            )
        if self.rerank_mode != RERANK_NONE and not self.rerank_endpoint:
            raise ConfigError("rerank.endpoint is required when rerank.mode is set")

    def provider_spec(self) -> ProviderSpec:
        try:
            return ProviderSpec(
                kind=self.embed_provider,
                endpoint=self.embed_endpoint,
                path=self.embed_path,
                query_template=self.embed_query_template,
                passage_template=self.embed_passage_template,
                batch_size=self.embed_batch_size,
                tag=self.embed_tag,
            )
        except ValueError as exc:
            raise ConfigError(f"embedding provider: {exc}") from exc


# TOML (section, key) -> config field.
_TOML_FIELDS = {
    ("data", "posts"): "posts_path",
    ("data", "claims"): "claims_path",
    ("data", "pairs"): "pairs_path",
    ("run", "workdir"): "workdir",
    ("run", "force"): "force",
    ("langid", "detectors"): "langid_detectors",
    ("split", "ratios"): "split_ratios",
    ("split", "seed"): "split_seed",
    ("split", "min_posts_per_language"): "min_posts_per_language",
    ("embedding", "provider"): "embed_provider",
    ("embedding", "path"): "embed_path",
    ("embedding", "endpoint"): "embed_endpoint",
    ("embedding", "batch_size"): "embed_batch_size",
    ("embedding", "query_template"): "embed_query_template",
    ("embedding", "passage_template"): "embed_passage_template",
    ("embedding", "tag"): "embed_tag",
    ("embedding", "allow_partial"): "allow_partial_embeddings",
    ("retrieval", "setting"): "setting",
    ("retrieval", "scope"): "scope",
    ("retrieval", "depth"): "retrieve_depth",
    ("rerank", "mode"): "rerank_mode",
    ("rerank", "endpoint"): "rerank_endpoint",
    ("rerank", "top_n"): "rerank_top_n",
    ("rerank", "window_size"): "rerank_window",
    ("rerank", "stride"): "rerank_stride",
    ("rerank", "template"): "rerank_template",
    ("eval", "k"): "eval_k",
    ("eval", "unit"): "eval_unit",
    ("eval", "split"): "eval_split",
}

_REQUIRED = ("posts_path", "claims_path", "pairs_path", "workdir")


def _coerce(raw: str, target_type) -> object:
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes"):
            return True
        if lowered in ("0", "false", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    # Tuple-typed fields take comma-separated values.
    return tuple(part.strip() for part in raw.split(","))


def load_config(
    path: str,
    env: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """Parse a TOML config; ``CLAIMLINK_<SECTION>__<KEY>`` env vars win."""
    env = os.environ if env is None else env
    try:
        with open(path, "rb") as fh:
            document = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    values: dict[str, object] = {}
    for section, table in document.items():
        if not isinstance(table, dict):
            raise ConfigError(f"top-level key {section!r} must be a section")
        for key, value in table.items():
            field_name = _TOML_FIELDS.get((section, key))
            if field_name is None:
                raise ConfigError(f"unknown config key [{section}] {key}")
            values[field_name] = value

    hints = {
        "split_seed": int, "min_posts_per_language": int, "embed_batch_size": int,
        "retrieve_depth": int, "rerank_top_n": int, "rerank_window": int,
        "rerank_stride": int, "eval_k": int, "force": bool,
        "allow_partial_embeddings": bool,
    }
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, _, key = name[len(ENV_PREFIX):].partition("__")
        field_name = _TOML_FIELDS.get((section.lower(), key.lower()))
        if field_name is None:
            raise ConfigError(f"unknown config override {name}")
        if field_name == "split_ratios":
            values[field_name] = tuple(float(part) for part in value.split(","))
        elif field_name == "langid_detectors":
            raise ConfigError("langid.detectors cannot be set from the environment")
        else:
            values[field_name] = _coerce(value, hints.get(field_name, str))

    missing = [name for name in _REQUIRED if name not in values]
    if missing:
        raise ConfigError(f"config is missing required keys: {', '.join(missing)}")

    if "split_ratios" in values:
        ratios = values["split_ratios"]
        try:
            values["split_ratios"] = tuple(float(r) for r in ratios)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"split.ratios must be three numbers: {exc}") from exc
    if "langid_detectors" in values:
        try:
            values["langid_detectors"] = tuple(
                (str(name), str(command)) for name, command in values["langid_detectors"]
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"langid.detectors must be [name, command] pairs: {exc}") from exc

    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Stage cache
# ---------------------------------------------------------------------------


def _digest_bytes(*chunks: bytes) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(hashlib.sha256(chunk).digest())
    return h.hexdigest()


def _digest_file(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise ConfigError(f"cannot read input file {path}: {exc}") from exc


def _config_digest(config: ExperimentConfig, fields: tuple[str, ...]) -> str:
    payload = {name: getattr(config, name) for name in fields}
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=list).encode()
    ).hexdigest()


class _Cache:
    def __init__(self, workdir: Path) -> None:
        self.path = workdir / "cache.json"
        self.entries: dict[str, str] = {}
        if self.path.exists():
            try:
                self.entries = json.loads(self.path.read_text(encoding="utf-8"))
            except (OSError, ValueError):
                self.entries = {}

    def fresh(self, stage: str, digest: str, outputs: list[Path]) -> bool:
        return self.entries.get(stage) == digest and all(p.exists() for p in outputs)

    def record(self, stage: str, digest: str) -> None:
        self.entries[stage] = digest
        self.path.write_text(
            json.dumps(self.entries, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )


@dataclass
class PipelineResult:
    exit_code: int
    stages_run: list[str] = field(default_factory=list)
    stages_skipped: list[str] = field(default_factory=list)
    metrics: Optional[MetricsReport] = None
    error: str = ""


# ---------------------------------------------------------------------------
# Stage bodies
# ---------------------------------------------------------------------------


def _stage_ingest(config: ExperimentConfig, workdir: Path) -> None:
    result = corpus_mod.ingest(
        corpus_mod.read_records(config.posts_path),
        corpus_mod.read_records(config.claims_path),
        corpus_mod.read_records(config.pairs_path),
    )
    out = workdir / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(result.corpus, out)
    (out / "ingest_report.json").write_text(
        json.dumps(result.report.as_dict(), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _stage_langid(config: ExperimentConfig, workdir: Path) -> None:
    corpus = read_corpus(workdir / "corpus")
    detectors = {
        name: SubprocessDetector(name, shlex.split(command))
        for name, command in config.langid_detectors
    }
    try:
        post_texts = {post.id: post.text for post in corpus.posts.values()}
        claim_texts = {claim.id: claim.claim_text for claim in corpus.claims.values()}
        post_langs, post_summary = detect_languages(post_texts, detectors, FusionConfig())
        claim_langs, claim_summary = detect_languages(claim_texts, detectors, FusionConfig())
    finally:
        for detector in detectors.values():
            detector.close()
    relabeled = corpus.with_languages(post_langs, claim_langs)
    out = workdir / "corpus_langid"
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(relabeled, out)
    (out / "langid_report.json").write_text(
        json.dumps(
            {"posts": post_summary.as_dict(), "claims": claim_summary.as_dict()},
            indent=1,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )


def _corpus_dir(config: ExperimentConfig, workdir: Path) -> Path:
    return workdir / ("corpus_langid" if config.langid_detectors else "corpus")


def _stage_split(config: ExperimentConfig, workdir: Path) -> None:
    corpus = read_corpus(_corpus_dir(config, workdir))
    filtered = corpus_mod.filter_language_threshold(
        corpus, min_posts=config.min_posts_per_language
    )
    out = workdir / "filtered"
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(filtered.corpus, out)
    manifest = build_splits(
        filtered.corpus, ratios=config.split_ratios, seed=config.split_seed
    )
    manifest.save(workdir / "manifest.json")


def _stage_embed(config: ExperimentConfig, workdir: Path) -> None:
    corpus = read_corpus(workdir / "filtered")
    provider = config.provider_spec()
    failures: list[tuple[str, str]] = []
    for name, items in (
        ("queries", [(p.id, p.text, "query") for p in corpus.posts.values()]),
        ("claims", [(c.id, c.claim_text, "passage") for c in corpus.claims.values()]),
    ):
        store_path = workdir / f"{name}.clnk"
        existing: Optional[EmbeddingStore] = None
        if store_path.exists():
            existing = load_store(store_path)
        items.sort(key=lambda item: item[0])
        outcome = embed_corpus(items, provider, existing=existing)
        save_store(outcome.store, store_path)
        failures.extend(outcome.failed)
    (workdir / "embed_report.json").write_text(
        json.dumps({"failed": sorted(failures)}, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    if failures and not config.allow_partial_embeddings:
        raise RuntimeError(
            f"{len(failures)} items failed to embed; "
            "set embedding.allow_partial to continue anyway"
        )


def _query_posts(config: ExperimentConfig, corpus: Corpus, manifest: SplitManifest) -> list[str]:
    view = setting_corpus(corpus, config.setting)
    post_ids = sorted({pair.post_id for pair in view.pairs})
    if config.eval_split == "all":
        return post_ids
    return [
        p for p in post_ids if manifest.split_of_post.get(p) == config.eval_split
    ]


def _stage_retrieve(config: ExperimentConfig, workdir: Path) -> None:
    corpus = read_corpus(workdir / "filtered")
    manifest = SplitManifest.load(workdir / "manifest.json")
    claim_store = load_store(workdir / "claims.clnk")
    query_store = load_store(workdir / "queries.clnk")
    pool = make_pool(corpus, manifest, setting=config.setting, scope=config.scope)
    queries = _query_posts(config, corpus, manifest)
    queries = [q for q in queries if q in query_store]
    runs_dir = workdir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    ranked = batch_retrieve(
        queries, query_store, claim_store, pool, k=config.retrieve_depth
    )
    write_run(ranked, runs_dir / "retrieve.jsonl")
    (workdir / "pool.json").write_text(
        json.dumps(
            {"setting": pool.setting, "scope": pool.scope, "claim_ids": list(pool.claim_ids)},
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )


def _stage_rerank(config: ExperimentConfig, workdir: Path) -> None:
    corpus = read_corpus(workdir / "filtered")
    ranked = read_run(workdir / "runs" / "retrieve.jsonl")
    rerank_config = RerankConfig(
        top_n=config.rerank_top_n,
        window_size=config.rerank_window,
        stride=config.rerank_stride,
        template_path=config.rerank_template or None,
    )
    claim_texts = {c.id: c.claim_text for c in corpus.claims.values()}
    post_texts = {p.id: p.text for p in corpus.posts.values()}
    out: list = []
    total_failed = 0
    if config.rerank_mode == RERANK_CE:
        scorer = http_pair_scorer(config.rerank_endpoint)
        stage_name = STAGE_CE
        for item in ranked:
            outcome = rerank_cross_encoder(
                item, post_texts[item.post_id], claim_texts, scorer, rerank_config
            )
            out.append(outcome.ranked)
            total_failed += outcome.failed_calls
    else:
        model = http_text_model(config.rerank_endpoint)
        stage_name = STAGE_LLM
        for item in ranked:
            outcome = rerank_llm(
                item, post_texts[item.post_id], claim_texts, model, rerank_config
            )
            out.append(outcome.ranked)
            total_failed += outcome.failed_calls
    write_run(out, workdir / "runs" / f"{stage_name}.jsonl")
    if total_failed:
        logger.warning("rerank stage completed with %d failed calls", total_failed)


def _final_run_path(config: ExperimentConfig, workdir: Path) -> Path:
    if config.rerank_mode == RERANK_CE:
        return workdir / "runs" / f"{STAGE_CE}.jsonl"
    if config.rerank_mode == RERANK_LLM:
        return workdir / "runs" / f"{STAGE_LLM}.jsonl"
    return workdir / "runs" / "retrieve.jsonl"


def _stage_eval(config: ExperimentConfig, workdir: Path) -> MetricsReport:
    corpus = read_corpus(workdir / "filtered")
    manifest = SplitManifest.load(workdir / "manifest.json")
    view = setting_corpus(corpus, config.setting)
    if config.eval_split == "all":
        pairs = sorted((pair.post_id, pair.claim_id) for pair in view.pairs)
    else:
        pairs = eval_pairs(corpus, manifest, setting=config.setting, split=config.eval_split)
    pool_payload = json.loads((workdir / "pool.json").read_text(encoding="utf-8"))
    pool = make_pool(corpus, manifest, setting=config.setting, scope=config.scope)
    if list(pool.claim_ids) != pool_payload["claim_ids"]:
        raise RuntimeError("candidate pool changed since retrieval; re-run with force")
    ranked = read_run(_final_run_path(config, workdir))
    report = evaluate_run(
        ranked,
        pairs,
        k=config.eval_k,
        unit=config.eval_unit,
        post_languages={p.id: p.language for p in view.posts.values()},
        claim_languages={c.id: c.language for c in view.claims.values()},
        pool=pool,
    )
    report.save(workdir / "metrics.json")
    return report


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _stage_plan(config: ExperimentConfig, workdir: Path) -> list[tuple[str, str, list[Path]]]:
    """(stage name, dependency digest, output paths) in execution order."""
    plan: list[tuple[str, str, list[Path]]] = []
    ingest_digest = _digest_bytes(
        _digest_file(config.posts_path).encode(),
        _digest_file(config.claims_path).encode(),
        _digest_file(config.pairs_path).encode(),
    )
    corpus_out = workdir / "corpus"
    plan.append(("ingest", ingest_digest, [corpus_out / "posts.jsonl"]))
    upstream = ingest_digest

    if config.langid_detectors:
        langid_digest = _digest_bytes(
            upstream.encode(), _config_digest(config, ("langid_detectors",)).encode()
        )
        plan.append(("langid", langid_digest, [workdir / "corpus_langid" / "posts.jsonl"]))
        upstream = langid_digest

    split_digest = _digest_bytes(
        upstream.encode(),
        _config_digest(
            config, ("split_ratios", "split_seed", "min_posts_per_language")
        ).encode(),
    )
    plan.append(
        ("split", split_digest, [workdir / "manifest.json", workdir / "filtered" / "posts.jsonl"])
    )

    embed_fields = (
        "embed_provider", "embed_path", "embed_endpoint", "embed_batch_size",
        "embed_query_template", "embed_passage_template", "embed_tag",
        "allow_partial_embeddings",
    )
    embed_digest_parts = [split_digest.encode(), _config_digest(config, embed_fields).encode()]
    if config.embed_provider == "precomputed_file" and config.embed_path:
        embed_digest_parts.append(_digest_file(config.embed_path).encode())
    embed_digest = _digest_bytes(*embed_digest_parts)
    plan.append(("embed", embed_digest, [workdir / "queries.clnk", workdir / "claims.clnk"]))

    retrieve_digest = _digest_bytes(
        embed_digest.encode(),
        _config_digest(config, ("setting", "scope", "retrieve_depth", "eval_split")).encode(),
    )
    plan.append(
        ("retrieve", retrieve_digest, [workdir / "runs" / "retrieve.jsonl", workdir / "pool.json"])
    )
    upstream = retrieve_digest

    if config.rerank_mode != RERANK_NONE:
        rerank_digest = _digest_bytes(
            upstream.encode(),
            _config_digest(
                config,
                ("rerank_mode", "rerank_endpoint", "rerank_top_n", "rerank_window",
                 "rerank_stride", "rerank_template"),
            ).encode(),
        )
        plan.append(("rerank", rerank_digest, [_final_run_path(config, workdir)]))
        upstream = rerank_digest

    eval_digest = _digest_bytes(
        upstream.encode(), _config_digest(config, ("eval_k", "eval_unit", "eval_split")).encode()
    )
    plan.append(("eval", eval_digest, [workdir / "metrics.json"]))
    return plan


_STAGE_BODIES = {
    "ingest": _stage_ingest,
    "langid": _stage_langid,
    "split": _stage_split,
    "embed": _stage_embed,
    "retrieve": _stage_retrieve,
    "rerank": _stage_rerank,
}


def run_pipeline(config: ExperimentConfig, dry_run: bool = False) -> PipelineResult:
    """Execute the configured pipeline; see module docstring for stages.

    ``dry_run`` only reports which stages would run versus be skipped.
    """
    try:
        workdir = Path(config.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        plan = _stage_plan(config, workdir)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return PipelineResult(exit_code=EXIT_CONFIG, error=str(exc))

    cache = _Cache(workdir)
    result = PipelineResult(exit_code=EXIT_OK)
    invalidated = False
    for stage, digest, outputs in plan:
        cached = not config.force and not invalidated and cache.fresh(stage, digest, outputs)
        if dry_run:
            logger.info("plan: %s %s", stage, "cached" if cached else "pending")
            (result.stages_skipped if cached else result.stages_run).append(stage)
            continue
        if cached:
            logger.info("stage %s: up to date, skipping", stage)
            result.stages_skipped.append(stage)
            continue
        invalidated = True
        logger.info("stage %s: running", stage)
        try:
            if stage == "eval":
                result.metrics = _stage_eval(config, workdir)
            else:
                _STAGE_BODIES[stage](config, workdir)
        except ConfigError as exc:
            logger.error("stage %s configuration error: %s", stage, exc)
            return PipelineResult(
                exit_code=EXIT_CONFIG,
                stages_run=result.stages_run,
                stages_skipped=result.stages_skipped,
                error=f"{stage}: {exc}",
            )
        except Exception as exc:
            logger.exception("stage %s failed", stage)
            return PipelineResult(
                exit_code=EXIT_STAGE,
                stages_run=result.stages_run,
                stages_skipped=result.stages_skipped,
                error=f"{stage}: {exc}",
            )
        cache.record(stage, digest)
        result.stages_run.append(stage)

    if not dry_run and result.metrics is None and "eval" in result.stages_skipped:
        result.metrics = MetricsReport.load(workdir / "metrics.json")
    return result
