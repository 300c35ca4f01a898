"""
Dense retrieval over an embedding store, scored with S@k and MRR@k
==================================================================

Vectors here are synthetic; in a real run they come from an embedding
service or a precomputed file through embed_corpus.
"""

import numpy as np

from claimlink import (
    EmbeddingStore,
    RankedList,
    evaluate_run,
    load_store,
    retrieve_topk,
    save_store,
)

rng = np.random.default_rng(0)

# 200 claims in a 32-dimensional space. from_vectors unit-normalizes
# rows, so the dot product below is cosine similarity.
claim_ids = [f"c{i:03d}" for i in range(200)]
claim_store = EmbeddingStore.from_vectors(
    claim_ids,
    rng.standard_normal((200, 32)).astype(np.float32),
    provider_tag="demo-random",
)

# A query near claim c007: its vector plus a nudge of noise.
query = claim_store.row("c007") + 0.1 * rng.standard_normal(32).astype(np.float32)

top = retrieve_topk(query, claim_store, k=5)
print("top 5 for the nudged query:")
for claim_id, score in top:
    print(f"  {claim_id}  cosine {score:.4f}")

# Stores round-trip through a checksummed binary file.
save_store(claim_store, "/tmp/claims_demo.clnk")
reloaded = load_store("/tmp/claims_demo.clnk")
print("store round-trip ok:", reloaded.ids == claim_store.ids)

# Scoring: each gold pair contributes success (gold in top k) and
# reciprocal rank. Build two posts, one easy and one hopeless.
runs = [
    RankedList("post_a", "retrieve", tuple(retrieve_topk(query, claim_store, k=10))),
    RankedList("post_b", "retrieve", tuple(retrieve_topk(-query, claim_store, k=10))),
]
report = evaluate_run(runs, [("post_a", "c007"), ("post_b", "c007")], k=10)
print(f"S@10 {report.success_at_k:.2f}  MRR@10 {report.mrr_at_k:.2f} "
      f"over {report.n_units} pairs")
