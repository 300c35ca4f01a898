import numpy as np
import pytest

from claimlink.corpus import Corpus, FactCheck, PairLink, Post

REGISTRY_SAMPLE = [
    "en", "es", "pt", "fr", "de", "ar", "hi", "tr", "it", "pl",
    "nl", "ro", "cs", "hu", "el",
]


def build_corpus(posts, claims, pairs):
    """Corpus from (id, text, lang) triples and (post, claim) pairs."""
    return Corpus(
        posts={pid: Post(id=pid, text=text, language=lang) for pid, text, lang in posts},
        claims={cid: FactCheck(id=cid, claim_text=text, language=lang) for cid, text, lang in claims},
        pairs=tuple(PairLink(post_id=p, claim_id=c) for p, c in pairs),
    )


def random_corpus(rng: np.random.Generator, max_items: int = 2000, max_languages: int = 15):
    """Random well-formed corpus: every post paired, pair graph arbitrary."""
    n_languages = int(rng.integers(1, max_languages + 1))
    languages = REGISTRY_SAMPLE[:n_languages]
    n_claims = int(rng.integers(1, max(2, max_items // 2)))
    n_posts = int(rng.integers(1, max(2, max_items - n_claims)))

    claims = [
        (f"c{i:05d}", f"claim text {i}", languages[int(rng.integers(0, n_languages))])
        for i in range(n_claims)
    ]
    posts = [
        (f"p{i:05d}", f"post text {i}", languages[int(rng.integers(0, n_languages))])
        for i in range(n_posts)
    ]
    pairs = set()
    for pid, _, _ in posts:
        pairs.add((pid, claims[int(rng.integers(0, n_claims))][0]))
        # A second gold now and then makes components merge.
        if rng.random() < 0.15:
            pairs.add((pid, claims[int(rng.integers(0, n_claims))][0]))
    paired = {c for _, c in pairs}
    claims = [c for c in claims if c[0] in paired]
    return build_corpus(posts, claims, sorted(pairs))


@pytest.fixture
def tiny_corpus():
    """Two components over two languages; enough for closure checks."""
    return build_corpus(
        posts=[
            ("p1", "the earth is flat says athlete", "en"),
            ("p2", "la tierra es plana", "es"),
            ("p3", "vaccines contain chips", "en"),
        ],
        claims=[
            ("c1", "the earth is not flat", "en"),
            ("c2", "vaccines do not contain chips", "en"),
        ],
        pairs=[("p1", "c1"), ("p2", "c1"), ("p3", "c2")],
    )


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    matrix = rng.standard_normal((n, dim))
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (matrix / norms).astype(np.float32)
