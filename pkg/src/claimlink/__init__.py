"""claimlink: retrieval of previously fact-checked claims.

Given a social-media post, rank a corpus of fact-checked claims so the
correct one surfaces as high as possible, in both multilingual and
crosslingual settings. The package covers the whole experimental loop:
corpus ingestion and contamination-free splits, language identification
by detector fusion, embedding storage, exact dense retrieval,
cross-encoder and LLM listwise re-ranking, hard-negative mining, and
ranking metrics.
"""

from claimlink.corpus import (
    Corpus,
    FactCheck,
    IngestReport,
    PairLink,
    Post,
    crosslingual_view,
    filter_language_threshold,
    ingest,
)
from claimlink.embedstore import (
    EmbeddingStore,
    ProviderSpec,
    cosine,
    embed_corpus,
    load_store,
    save_store,
)
from claimlink.evaluation import (
    MetricsReport,
    compare_runs,
    evaluate_run,
    pair_success_at_k,
    reciprocal_rank_at_k,
)
from claimlink.langid import (
    LANGUAGE_REGISTRY,
    DetectorVote,
    FusionConfig,
    fuse,
    normalize_votes,
    resolve_outliers,
)
from claimlink.negatives import (
    ClusterMap,
    NegativeConfig,
    NegativeRecord,
    cluster_claims,
    load_negatives,
    mine_negatives,
    mine_random,
    mine_similarity,
    mine_topic,
    serialize_negatives,
)
from claimlink.pipeline import ExperimentConfig, load_config, run_pipeline
from claimlink.rerank import (
    RerankConfig,
    parse_permutation,
    rerank_cross_encoder,
    rerank_llm,
)
from claimlink.retrieval import (
    CandidatePool,
    RankedList,
    batch_retrieve,
    eval_pairs,
    make_pool,
    read_run,
    retrieve_topk,
    write_run,
)
from claimlink.splits import SplitManifest, build_splits

__version__ = "0.1.0"

__all__ = [
    "CandidatePool",
    "ClusterMap",
    "Corpus",
    "DetectorVote",
    "EmbeddingStore",
    "ExperimentConfig",
    "FactCheck",
    "FusionConfig",
    "IngestReport",
    "LANGUAGE_REGISTRY",
    "MetricsReport",
    "NegativeConfig",
    "NegativeRecord",
    "PairLink",
    "Post",
    "ProviderSpec",
    "RankedList",
    "RerankConfig",
    "SplitManifest",
    "batch_retrieve",
    "build_splits",
    "cluster_claims",
    "compare_runs",
    "cosine",
    "crosslingual_view",
    "embed_corpus",
    "eval_pairs",
    "evaluate_run",
    "filter_language_threshold",
    "fuse",
    "ingest",
    "load_config",
    "load_negatives",
    "load_store",
    "make_pool",
    "mine_negatives",
    "mine_random",
    "mine_similarity",
    "mine_topic",
    "normalize_votes",
    "pair_success_at_k",
    "parse_permutation",
    "read_run",
    "reciprocal_rank_at_k",
    "rerank_cross_encoder",
    "rerank_llm",
    "resolve_outliers",
    "retrieve_topk",
    "run_pipeline",
    "save_store",
    "serialize_negatives",
    "write_run",
]
