"""Embedding storage, the on-disk store format, and embedding providers.

Stores hold one unit-normalized float32 row per item id, so retrieval
reduces to dot products. Providers are pluggable: a precomputed vector
file, or a remote service speaking a small JSON contract. No encoder
model runs in-process.

Store file layout (all integers little-endian): magic ``CLNK``, version
u32, dim u32, count u64, provider tag (u32 length + UTF-8 bytes), ids
block (u32 length + UTF-8 bytes each), payload of count x dim float32,
trailing CRC-32 of the payload.
"""

from __future__ import annotations

import json
import logging
import struct
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"CLNK"
FORMAT_VERSION = 1
NORM_TOLERANCE = 1e-4

ROLE_QUERY = "query"
ROLE_PASSAGE = "passage"


class StoreFormatError(ValueError):
    """The file does not match the store format or fails its checksum."""


@dataclass(frozen=True)
class EmbeddingStore:
    """Id-addressed matrix of embedding vectors.

    The matrix is float32 with one row per id; ``normalized`` reports
    whether every row is unit length within tolerance.
    """

    ids: tuple[str, ...]
    matrix: np.ndarray
    provider_tag: str = ""
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {matrix.shape}")
        if matrix.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids but {matrix.shape[0]} matrix rows")
        object.__setattr__(self, "matrix", matrix)
        index = {item_id: i for i, item_id in enumerate(self.ids)}
        if len(index) != len(self.ids):
            raise ValueError("store ids must be unique")
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def normalized(self) -> bool:
        if len(self.ids) == 0:
            return True
        norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= NORM_TOLERANCE))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def row(self, item_id: str) -> np.ndarray:
        """Vector for one id; KeyError if absent."""
        return self.matrix[self._index[item_id]]

    def rows(self, item_ids: Sequence[str]) -> np.ndarray:
        """Sub-matrix for the given ids, in the given order."""
        try:
            idx = [self._index[item_id] for item_id in item_ids]
        except KeyError as exc:
            raise KeyError(f"id not in store: {exc.args[0]!r}") from exc
        return self.matrix[idx]

    @classmethod
    def from_vectors(
        cls,
        ids: Sequence[str],
        vectors: np.ndarray,
        provider_tag: str = "",
        normalize: bool = True,
    ) -> "EmbeddingStore":
        """Build a store, L2-normalizing each row by default."""
        matrix = np.asarray(vectors, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {matrix.shape}")
        if normalize and matrix.shape[0]:
            matrix = normalize_rows(matrix)
        return cls(ids=tuple(ids), matrix=matrix, provider_tag=provider_tag)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero rows are rejected."""
    matrix = np.asarray(matrix, dtype=np.float32)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argmax(norms == 0.0))
        raise ValueError(f"cannot normalize zero-norm vector at row {bad}")
    return (matrix.astype(np.float64) / norms[:, None]).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with 64-bit accumulation."""
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    if a64.shape != b64.shape:
        raise ValueError(f"dimension mismatch: {a64.shape} vs {b64.shape}")
    if not (np.all(np.isfinite(a64)) and np.all(np.isfinite(b64))):
        raise ValueError("vectors must be finite")
    na, nb = np.linalg.norm(a64), np.linalg.norm(b64)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero-norm vector")
    return float(np.dot(a64, b64) / (na * nb))


# ---------------------------------------------------------------------------
# Binary store format
# ---------------------------------------------------------------------------


def save_store(store: EmbeddingStore, path: Union[str, Path]) -> None:
    """Write a store to disk; ``load_store`` restores it bit-for-bit."""
    payload = np.ascontiguousarray(store.matrix, dtype="<f4").tobytes()
    tag = store.provider_tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, store.dim, len(store.ids)))
        fh.write(struct.pack("<I", len(tag)))
        fh.write(tag)
        for item_id in store.ids:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_store(path: Union[str, Path]) -> EmbeddingStore:
    """Read a store file, verifying structure and payload checksum."""
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    offset = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal offset
        if offset + n > len(blob):
            raise StoreFormatError(
                f"{path}: truncated {what}: expected {n} bytes at offset {offset}, "
                f"only {len(blob) - offset} available"
            )
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise StoreFormatError(f"{path}: bad magic bytes, not a store file")
    version, dim, count = struct.unpack("<IIQ", take(16, "header"))
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"{path}: unsupported format version {version}")

    (tag_len,) = struct.unpack("<I", take(4, "provider tag length"))
    provider_tag = bytes(take(tag_len, "provider tag")).decode("utf-8")

    ids = []
    for i in range(count):
        (id_len,) = struct.unpack("<I", take(4, f"id length #{i}"))
        ids.append(bytes(take(id_len, f"id #{i}")).decode("utf-8"))

    payload_len = count * dim * 4
    remaining = len(blob) - offset - 4
    if remaining != payload_len:
        raise StoreFormatError(
            f"{path}: payload length mismatch: header implies {payload_len} bytes, "
            f"found {max(remaining, 0)}"
        )
    payload = bytes(take(payload_len, "payload"))
    (expected_crc,) = struct.unpack("<I", take(4, "checksum"))
    actual_crc = zlib.crc32(payload) & 0xFFFFFFFF
    if actual_crc != expected_crc:
        raise StoreFormatError(
            f"{path}: payload checksum mismatch: expected {expected_crc:#010x}, "
            f"computed {actual_crc:#010x}"
        )

    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    return EmbeddingStore(ids=tuple(ids), matrix=matrix, provider_tag=provider_tag)


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProviderSpec:
    """Where embeddings come from and how texts are rendered.

    ``kind`` is ``precomputed_file`` (``path`` points at a JSONL file of
    ``{"id", "vector"}`` records) or ``remote_service`` (``endpoint``
    accepts ``{"texts": [...], "role": ...}`` and answers ``{"dim": ...,
    "vectors": [[...]]}`` in order). Role templates wrap each text before
    embedding; instruct-style encoders set prefixes here.
    """

    kind: str
    endpoint: str = ""
    path: str = ""
    query_template: str = "{text}"
    passage_template: str = "{text}"
    batch_size: int = 32
    max_parallel_requests: int = 4
    max_retries: int = 3
    tag: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("precomputed_file", "remote_service"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "precomputed_file" and not self.path:
            raise ValueError("precomputed_file provider requires a path")
        if self.kind == "remote_service" and not self.endpoint:
            raise ValueError("remote_service provider requires an endpoint")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        for name, template in (("query_template", self.query_template),
                               ("passage_template", self.passage_template)):
            if template.count("{text}") != 1:
                raise ValueError(f"{name} must contain the {{text}} slot exactly once")
        if not self.tag:
            object.__setattr__(self, "tag", self.path or self.endpoint)

    def render(self, text: str, role: str) -> str:
        template = self.query_template if role == ROLE_QUERY else self.passage_template
        return template.replace("{text}", text)


#: transport(endpoint, payload) -> parsed response dict.
Transport = Callable[[str, dict], dict]


def _requests_transport(endpoint: str, payload: dict) -> dict:
    import requests

    response = requests.post(endpoint, json=payload, timeout=120)
    response.raise_for_status()
    return response.json()


@dataclass
class EmbedOutcome:
    store: EmbeddingStore
    failed: list[tuple[str, str]] = field(default_factory=list)
    provider_calls: int = 0


def _load_precomputed(path: str) -> dict[str, np.ndarray]:
    vectors: dict[str, np.ndarray] = {}
    dim: Optional[int] = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vector"], dtype=np.float32)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"{path}, line {lineno}: vector dim {vec.shape[0]} != {dim}"
                )
            vectors[str(rec["id"])] = vec
    return vectors


def embed_corpus(
    texts: Iterable[tuple[str, str, str]],
    provider: ProviderSpec,
    existing: Optional[EmbeddingStore] = None,
    transport: Optional[Transport] = None,
) -> EmbedOutcome:
    """Embed ``(id, text, role)`` items and return a normalized store.

    Items whose id is already present in ``existing`` (built with the
    same provider tag) are carried over without any provider call, so
    re-running on unchanged inputs is free. Remote batches are retried a
    bounded number of times; a batch that keeps failing marks its items
    as failed and the run continues. A dimension change mid-run fails
    fast.
    """
    items = [(str(i), t, r) for i, t, r in texts]
    for item_id, text, role in items:
        if not text.strip():
            raise ValueError(f"empty text for id {item_id!r}")
        if role not in (ROLE_QUERY, ROLE_PASSAGE):
            raise ValueError(f"role for id {item_id!r} must be query or passage, got {role!r}")
    seen: set[str] = set()
    for item_id, _, _ in items:
        if item_id in seen:
            raise ValueError(f"duplicate id in embedding input: {item_id!r}")
        seen.add(item_id)

    carried: dict[str, np.ndarray] = {}
    if existing is not None and existing.provider_tag == provider.tag:
        carried = {i: existing.row(i) for i in existing.ids}
    todo = [(i, t, r) for i, t, r in items if i not in carried]

    outcome_vectors: dict[str, np.ndarray] = {}
    failed: list[tuple[str, str]] = []
    calls = 0
    dim: Optional[int] = None
    if carried:
        dim = next(iter(carried.values())).shape[0]

    if provider.kind == "precomputed_file":
        table = _load_precomputed(provider.path)
        for item_id, _, _ in todo:
            vec = table.get(item_id)
            if vec is None:
                failed.append((item_id, "id not found in precomputed file"))
                continue
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"provider dimension drift: id {item_id!r} has dim {vec.shape[0]}, "
                    f"expected {dim}"
                )
            outcome_vectors[item_id] = vec
    else:
        send = transport or _requests_transport
        batches: list[list[tuple[str, str, str]]] = []
        for role in (ROLE_QUERY, ROLE_PASSAGE):
            role_items = [item for item in todo if item[2] == role]
            for i in range(0, len(role_items), provider.batch_size):
                batches.append(role_items[i : i + provider.batch_size])

        def run_batch(batch: list[tuple[str, str, str]]) -> tuple[list[tuple[str, str, str]], Optional[dict], Optional[str]]:
            payload = {
                "texts": [provider.render(text, role) for _, text, role in batch],
                "role": batch[0][2],
            }
            last_error = ""
            for attempt in range(provider.max_retries):
                try:
                    return batch, send(provider.endpoint, payload), None
                except Exception as exc:
                    last_error = str(exc)
                    logger.warning(
                        "embedding batch of %d failed (attempt %d/%d): %s",
                        len(batch), attempt + 1, provider.max_retries, last_error,
                    )
                    time.sleep(min(0.1 * 2**attempt, 2.0))
            return batch, None, last_error

        workers = max(1, provider.max_parallel_requests)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_batch, batches))
        # Results joined by id, so output is schedule-independent.
        for batch, response, error in results:
            calls += 1
            if response is None:
                failed.extend((item_id, f"provider error: {error}") for item_id, _, _ in batch)
                continue
            got_dim = int(response["dim"])
            if dim is None:
                dim = got_dim
            elif got_dim != dim:
                raise ValueError(
                    f"provider dimension drift: response dim {got_dim}, expected {dim}"
                )
            vectors = response["vectors"]
            if len(vectors) != len(batch):
                failed.extend((item_id, "provider returned wrong vector count") for item_id, _, _ in batch)
                continue
            for (item_id, _, _), vec in zip(batch, vectors):
                outcome_vectors[item_id] = np.asarray(vec, dtype=np.float32)

    ordered_ids = [i for i in (existing.ids if carried else ()) ] + [
        i for i, _, _ in items if i in outcome_vectors
    ]
    if not ordered_ids:
        matrix = np.zeros((0, dim or 0), dtype=np.float32)
        store = EmbeddingStore(ids=(), matrix=matrix, provider_tag=provider.tag)
        return EmbedOutcome(store=store, failed=failed, provider_calls=calls)

    # Carried rows are already normalized; renormalizing would perturb
    # their low bits and break byte-stable re-runs.
    rows = [
        carried[i] if i in carried else normalize_rows(outcome_vectors[i][None, :])[0]
        for i in ordered_ids
    ]
    matrix = np.stack(rows).astype(np.float32)
    store = EmbeddingStore(ids=tuple(ordered_ids), matrix=matrix, provider_tag=provider.tag)
    return EmbedOutcome(store=store, failed=failed, provider_calls=calls)
