"""
Ingesting a corpus and building contamination-free splits
=========================================================
"""

from claimlink import build_splits, filter_language_threshold, ingest

# A corpus is three record streams: posts, fact-checked claims, and the
# gold pairs connecting them. Records that arrive malformed (no id, blank
# text) are dropped and counted rather than crashing the run.
posts = [
    {"id": f"p{i}", "text": f"someone claims thing number {i}", "language": "en"}
    for i in range(8)
]
posts += [
    {"id": f"q{i}", "text": f"jemand behauptet sache {i}", "language": "de"}
    for i in range(8)
]
posts.append({"id": "broken", "text": ""})  # dropped: blank text

claims = [
    {"id": f"c{i}", "claim": f"thing number {i} is false", "language": "en"}
    for i in range(16)
]

pairs = [
    {"post_id": f"p{i}", "claim_id": f"c{i}", "relationship": "claim_review"}
    for i in range(8)
]
pairs += [
    {"post_id": f"q{i}", "claim_id": f"c{i + 8}", "relationship": "claim_review"}
    for i in range(8)
]
# Two posts sharing one claim end up in the same split, always.
pairs.append({"post_id": "p0", "claim_id": "c1", "relationship": "backlink"})

result = ingest(posts, claims, pairs)
print("ingested:", len(result.corpus.posts), "posts,",
      len(result.corpus.claims), "claims,", len(result.corpus.pairs), "pairs")
print("dropped on the way in:", result.report.as_dict())

# Language thresholding removes under-represented post languages. The
# real threshold is 180 posts; this toy corpus uses 5.
filtered = filter_language_threshold(result.corpus, min_posts=5).corpus

# Splits are assigned per connected component of the pair graph, so a
# claim never appears in two splits and every pair stays inside one.
manifest = build_splits(filtered, ratios=(0.6, 0.2, 0.2), seed=7)
print("split sizes:", manifest.counts())

# p0 reviews both c0 and c1; the shared claim welds p0, p1, c0, c1 into
# one component and they travel together.
for item in ("p0", "p1"):
    print(item, "->", manifest.split_of_post[item])
for item in ("c0", "c1"):
    print(item, "->", manifest.split_of_claim[item])

# The manifest is plain JSON and byte-stable for a given (corpus, seed).
again = build_splits(filtered, ratios=(0.6, 0.2, 0.2), seed=7)
print("re-run identical:", manifest.to_json() == again.to_json())
