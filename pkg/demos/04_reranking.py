# Re-ranking the head of a retrieval run.
#
# Two interchangeable strategies: a pair scorer (cross-encoder style)
# that rescores (post, claim) pairs one by one, and a listwise text
# model that is shown a numbered window and answers with an ordering
# like "[2] > [1] > [3]". Production uses HTTP clients; here both are
# plain callables, which is all the interface asks for.

from claimlink import RankedList, RerankConfig, rerank_cross_encoder, rerank_llm

# A retrieval run that got it wrong: the truly relevant claim sits at
# rank 9 of 12.
entries = tuple((f"c{i:02d}", 1.0 - i * 0.05) for i in range(12))
run = RankedList("post_1", "retrieve", entries)
claim_texts = {cid: f"claim {cid} about something" for cid, _ in entries}
claim_texts["c08"] = "claim c08, the one actually matching the post"
post_text = "a post about the one actually matching"

print("before:", [cid for cid, _ in run.entries[:5]])


def overlap_scorer(pairs):
    # Counts shared words; a stand-in for a cross-encoder model.
    out = []
    for post, claim in pairs:
        shared = set(post.split()) & set(claim.split())
        out.append(float(len(shared)))
    return out


config = RerankConfig(top_n=10, window_size=5, stride=3)
ce = rerank_cross_encoder(run, post_text, claim_texts, overlap_scorer, config)
print("cross-encoder:", [cid for cid, _ in ce.ranked.entries[:5]],
      f"({ce.total_calls} calls)")


def toy_listwise_model(prompt, max_tokens):
    # Rank window items by word overlap with the query line, then emit
    # the bracketed permutation the parser expects.
    lines = [l for l in prompt.splitlines() if l.startswith("[")]
    query = next(l for l in prompt.splitlines() if "matching" in l)
    scored = []
    for line in lines:
        idx = int(line[1:line.index("]")])
        overlap = len(set(line.split()) & set(query.split()))
        scored.append((-overlap, idx))
    return " > ".join(f"[{idx}]" for _, idx in sorted(scored))


llm = rerank_llm(run, post_text, claim_texts, toy_listwise_model, config)
print("listwise:     ", [cid for cid, _ in llm.ranked.entries[:5]],
      f"({llm.total_calls} window calls)")

# A model that fails mid-run degrades gracefully: the affected window
# keeps its current order and the failure is counted.
def flaky_model(prompt, max_tokens):
    raise TimeoutError("model busy")


fallback = rerank_llm(run, post_text, claim_texts, flaky_model, config)
print("all calls failed -> order preserved:",
      [cid for cid, _ in fallback.ranked.entries[:3]],
      f"({fallback.failed_calls} failures)")
