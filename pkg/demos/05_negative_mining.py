"""
Mining hard negatives for contrastive fine-tuning
=================================================

Three strategies, all restricted to the train split so no dev or test
claim can leak into training data: random draws, nearest neighbors by
embedding, and same-topic draws from a claim clustering.
"""

import numpy as np

from claimlink import (
    EmbeddingStore,
    NegativeConfig,
    build_splits,
    cluster_claims,
    ingest,
    load_negatives,
    mine_negatives,
    serialize_negatives,
)

rng = np.random.default_rng(3)

n = 40
posts = [{"id": f"p{i:02d}", "text": f"post {i}", "language": "en"} for i in range(n)]
claims = [{"id": f"c{i:02d}", "claim": f"claim {i}", "language": "en"} for i in range(n)]
pairs = [
    {"post_id": f"p{i:02d}", "claim_id": f"c{i:02d}", "relationship": "claim_review"}
    for i in range(n)
]
corpus = ingest(posts, claims, pairs).corpus
manifest = build_splits(corpus, ratios=(0.7, 0.15, 0.15), seed=0)

# Claims fall into two planted topics: directions 0 and 1 with noise.
vectors = np.zeros((n, 8), dtype=np.float32)
for i in range(n):
    vectors[i, i % 2] = 1.0
    vectors[i] += 0.1 * rng.standard_normal(8).astype(np.float32)
claim_store = EmbeddingStore.from_vectors([c["id"] for c in claims], vectors, "demo")
query_store = EmbeddingStore.from_vectors(
    [p["id"] for p in posts], vectors.copy(), "demo"
)

for strategy in ("random", "similarity", "topic"):
    config = NegativeConfig(strategy=strategy, k=3, seed=1, n_clusters=2, tau=0.3)
    records = mine_negatives(
        corpus, manifest, config, query_store=query_store, claim_store=claim_store
    )
    sample = records[0]
    print(f"{strategy:>10}: {len(records)} records; first post {sample.post_id} "
          f"gold {sample.gold_claim_id} negatives {list(sample.negative_ids)}")

# The topic strategy draws from the gold claim's cluster. Inspect the
# clustering itself to see why its negatives look the way they do.
train_claims = sorted(
    c for c, s in manifest.split_of_claim.items() if s == "train"
)
clusters = cluster_claims(claim_store, train_claims, n_clusters=2, tau=0.3, seed=1)
for label in clusters.labels():
    print(f"cluster {label}: {len(clusters.members(label))} claims")

# Mined records serialize to JSONL with a header describing the run.
config = NegativeConfig(strategy="similarity", k=3)
records = mine_negatives(
    corpus, manifest, config, query_store=query_store, claim_store=claim_store
)
serialize_negatives(records, "/tmp/negatives_demo.jsonl", config)
header, loaded = load_negatives("/tmp/negatives_demo.jsonl")
print("serialized:", header, f"({len(loaded)} records back)")
