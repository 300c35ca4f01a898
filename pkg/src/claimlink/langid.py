"""Language identification by fusing the votes of several detectors.

No detector is implemented here: detectors are external adapters that map
a text to a list of ``(language, raw_score)`` votes, either as in-process
callables or as subprocesses speaking a JSON-lines protocol. This module
normalizes their raw scores, fuses the votes into a single language per
text, and supports a manual-review pass for rare languages.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

logger = logging.getLogger(__name__)

#: Codes a resolved language may take (BCP-47-style lowercase two-letter).
LANGUAGE_REGISTRY = frozenset(
    {
        "af", "ar", "as", "az", "bg", "bn", "bs", "ca", "cs", "da",
        "de", "el", "en", "es", "fa", "fi", "fr", "hi", "hr", "hu",
        "id", "it", "kk", "ko", "mk", "ml", "ms", "my", "ne", "nl",
        "no", "pa", "pl", "pt", "ro", "ru", "si", "sk", "sl", "sr",
        "te", "th", "tl", "tr", "uk", "ur", "zh",
    }
)

#: Sentinel for texts whose language could not be resolved.
UNRESOLVED = "und"

#: Signature of an in-process detector: text -> [(language, raw_score)].
DetectorFn = Callable[[str], Sequence[tuple[str, float]]]


@dataclass(frozen=True)
class DetectorVote:
    """One detector's normalized vote for one language."""

    detector: str
    language: str
    score: float


@dataclass(frozen=True)
class FusionConfig:
    """Thresholds applied when fusing votes into one language."""

    min_avg_score: float = 0.5
    min_vote_count: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_avg_score <= 1.0:
            raise ValueError(f"min_avg_score must be in [0, 1], got {self.min_avg_score}")
        if self.min_vote_count < 1:
            raise ValueError(f"min_vote_count must be >= 1, got {self.min_vote_count}")


def normalize_votes(raw: Iterable[tuple[str, str, float]]) -> list[DetectorVote]:
    """Normalize raw detector scores into [0, 1] votes.

    Per detector: scores already within [0, 1] pass through unchanged
    (probability-style detectors); otherwise every score is divided by the
    detector's maximum raw score for this text. Detectors whose scores are
    all zero contribute no votes. Duplicate (detector, language) entries
    collapse to the highest raw score.

    Raises:
        ValueError: on a non-finite or negative raw score.
    """
    by_detector: dict[str, dict[str, float]] = {}
    for detector, language, score in raw:
        score = float(score)
        if not math.isfinite(score) or score < 0.0:
            raise ValueError(
                f"raw score for detector {detector!r} language {language!r} "
                f"must be finite and non-negative, got {score}"
            )
        langs = by_detector.setdefault(detector, {})
        if language not in langs or score > langs[language]:
            langs[language] = score

    votes: list[DetectorVote] = []
    for detector, langs in by_detector.items():
        peak = max(langs.values())
        if peak == 0.0:
            logger.debug("detector %s returned all-zero scores; dropped", detector)
            continue
        scale = 1.0 if peak <= 1.0 else peak
        for language, score in langs.items():
            votes.append(DetectorVote(detector, language, score / scale))
    return votes


def fuse(votes: Sequence[DetectorVote], cfg: FusionConfig = FusionConfig()) -> Optional[str]:
    """Combine normalized votes into one language, or ``None``.

    Languages voted for by fewer than ``min_vote_count`` detectors are
    discarded first; the survivors' scores are averaged over the detectors
    that voted for them; averages below ``min_avg_score`` are discarded;
    the highest remaining average wins, ties broken by lexicographic
    language code.
    """
    count: Counter[str] = Counter()
    total: dict[str, float] = {}
    for vote in votes:
        count[vote.language] += 1
        total[vote.language] = total.get(vote.language, 0.0) + vote.score

    best: Optional[str] = None
    best_avg = -1.0
    for language, n in count.items():
        if n < cfg.min_vote_count:
            continue
        avg = total[language] / n
        if avg < cfg.min_avg_score:
            continue
        if avg > best_avg or (avg == best_avg and (best is None or language < best)):
            best, best_avg = language, avg
    return best


@dataclass
class OutlierReport:
    """Outcome of the rare-language review pass."""

    assignments: dict[str, str]
    rare_languages: dict[str, int]
    overrides_applied: int = 0


def resolve_outliers(
    assignments: Mapping[str, str],
    rare_threshold: int = 10,
    override: Optional[Mapping[str, str]] = None,
) -> OutlierReport:
    """Surface rare language assignments for review and apply corrections.

    Languages whose global frequency is below ``rare_threshold`` are
    listed in the report; ``override`` maps text ids to corrected codes
    and is applied verbatim.

    Raises:
        ValueError: if an override targets an id absent from
            ``assignments`` or a code outside the registry.
    """
    override = dict(override or {})
    unknown_ids = set(override) - set(assignments)
    if unknown_ids:
        raise ValueError(f"override ids not present in assignments: {sorted(unknown_ids)}")
    bad_codes = {code for code in override.values() if code not in LANGUAGE_REGISTRY}
    if bad_codes:
        raise ValueError(
            f"override languages outside the {len(LANGUAGE_REGISTRY)}-code registry: "
            f"{sorted(bad_codes)}"
        )

    freq = Counter(assignments.values())
    rare = {lang: n for lang, n in sorted(freq.items()) if n < rare_threshold and lang != UNRESOLVED}

    resolved = dict(assignments)
    resolved.update(override)
    return OutlierReport(assignments=resolved, rare_languages=rare, overrides_applied=len(override))


# ---------------------------------------------------------------------------
# Detector adapters
# ---------------------------------------------------------------------------


class SubprocessDetector:
    """Adapter for a detector command speaking the JSON-lines protocol.

    The command reads one ``{"text": ...}`` object per stdin line and must
    answer with one line containing ``[{"language": ..., "raw_score": ...}]``.
    """

    def __init__(self, name: str, command: Sequence[str]):
        self.name = name
        self.command = list(command)
        self._proc: Optional[subprocess.Popen] = None

    def _ensure_running(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def __call__(self, text: str) -> list[tuple[str, float]]:
        proc = self._ensure_running()
        assert proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(json.dumps({"text": text}, ensure_ascii=False) + "\n")
        proc.stdin.flush()
        line = proc.stdout.readline()
        if not line:
            raise RuntimeError(f"detector {self.name!r} closed its stdout")
        return [(item["language"], float(item["raw_score"])) for item in json.loads(line)]

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()  # type: ignore[union-attr]
            self._proc.wait(timeout=10)
        self._proc = None


@dataclass
class LangidSummary:
    """Counts from a bulk detection run."""

    resolved: int = 0
    unresolved: int = 0
    out_of_registry: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "resolved": self.resolved,
            "unresolved": self.unresolved,
            "out_of_registry": dict(sorted(self.out_of_registry.items())),
        }


def detect_languages(
    texts: Mapping[str, str],
    detectors: Mapping[str, DetectorFn],
    cfg: FusionConfig = FusionConfig(),
) -> tuple[dict[str, str], LangidSummary]:
    """Run every detector on every text and fuse the votes.

    Returns an id -> language map (``und`` where fusion fails or the fused
    code falls outside the registry) plus run counts.
    """
    summary = LangidSummary()
    out: dict[str, str] = {}
    for text_id, text in texts.items():
        raw: list[tuple[str, str, float]] = []
        for name, detector in detectors.items():
            for language, score in detector(text):
                raw.append((name, language, score))
        fused = fuse(normalize_votes(raw), cfg)
        if fused is None:
            out[text_id] = UNRESOLVED
            summary.unresolved += 1
        elif fused not in LANGUAGE_REGISTRY:
            out[text_id] = UNRESOLVED
            summary.unresolved += 1
            summary.out_of_registry[fused] += 1
        else:
            out[text_id] = fused
            summary.resolved += 1
    return out, summary
