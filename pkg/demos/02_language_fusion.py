# Fusing several language detectors into one verdict per text.
#
# Each detector reports (language, raw score) votes. Scores above 1 are
# normalized by that detector's own maximum, languages backed by a
# single detector are discarded, surviving averages below 0.5 are
# discarded, and the best remaining average wins.

from claimlink import FusionConfig, fuse, normalize_votes, resolve_outliers

config = FusionConfig()  # min_avg_score=0.5, min_vote_count=2

# Three detectors agree on English; one stray Spanish vote is filtered
# out because nobody seconds it.
raw = [
    ("fastText", "en", 0.9),
    ("cld3", "en", 0.8),
    ("polyglot", "en", 0.7),
    ("langdetect", "es", 0.6),
]
print("agreement case:", fuse(normalize_votes(raw), config))

# A detector with unbounded scores gets rescaled by its own maximum.
raw = [("custom", "de", 4.0), ("custom", "en", 2.0), ("cld3", "de", 0.8)]
votes = normalize_votes(raw)
print("rescaled votes:", [(v.detector, v.language, v.score) for v in votes])
print("fused:", fuse(votes, config))

# Two weak votes for French average 0.475 and miss the 0.5 floor.
raw = [("d1", "fr", 0.5), ("d2", "fr", 0.45)]
print("below threshold:", fuse(normalize_votes(raw), config))

# After fusing a whole corpus, rare languages get flagged for review and
# can be overridden by hand. Latin is a classic misdetection.
assignments = {f"t{i}": "en" for i in range(30)}
assignments["t30"] = "la"
assignments["t31"] = "la"
report = resolve_outliers(
    assignments, rare_threshold=10, override={"t30": "en", "t31": "en"}
)
print("rare languages flagged:", report.rare_languages)
print("after override:", report.assignments["t30"], report.assignments["t31"])
