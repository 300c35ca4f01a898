import json
import struct
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from claimlink.embedstore import (
    EmbeddingStore,
    ProviderSpec,
    StoreFormatError,
    cosine,
    embed_corpus,
    load_store,
    normalize_rows,
    save_store,
)

from conftest import unit_rows


class TestStoreBasics:
    def test_from_vectors_normalizes(self):
        store = EmbeddingStore.from_vectors(["a", "b"], np.array([[3.0, 4.0], [0.0, 2.0]]))
        assert store.normalized
        assert store.row("a") == pytest.approx([0.6, 0.8])

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingStore.from_vectors(["a"], np.zeros((1, 4)))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingStore(ids=("a", "a"), matrix=np.ones((2, 2), dtype=np.float32))

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingStore(ids=("a",), matrix=np.ones((2, 2), dtype=np.float32))

    def test_rows_preserves_requested_order(self):
        store = EmbeddingStore.from_vectors(["a", "b", "c"], np.eye(3))
        sub = store.rows(["c", "a"])
        assert np.array_equal(sub, store.matrix[[2, 0]])

    def test_unknown_id_named_in_error(self):
        store = EmbeddingStore.from_vectors(["a"], np.ones((1, 2)))
        with pytest.raises(KeyError, match="ghost"):
            store.rows(["ghost"])

    def test_normalized_reflects_content(self):
        raw = EmbeddingStore(ids=("a",), matrix=np.array([[3.0, 4.0]], dtype=np.float32))
        assert not raw.normalized
        assert EmbeddingStore.from_vectors(["a"], np.array([[3.0, 4.0]])).normalized


class TestCosine:
    def test_known_value(self):
        assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(
            1.0 / np.sqrt(2.0)
        )

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine(np.zeros(3), np.ones(3))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cosine(np.ones(3), np.ones(4))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            cosine(np.array([np.nan, 1.0]), np.ones(2))

    def test_accumulates_in_float64(self):
        # Catastrophic float32 cancellation would lose this tiny component.
        a = np.array([1.0, 1e-4], dtype=np.float32)
        b = np.array([-1.0, 1e-4], dtype=np.float32)
        expected = np.dot(a.astype(np.float64), b.astype(np.float64)) / (
            np.linalg.norm(a.astype(np.float64)) * np.linalg.norm(b.astype(np.float64))
        )
        assert cosine(a, b) == pytest.approx(float(expected), rel=1e-12)


class TestBinaryFormat:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        store = EmbeddingStore(
            ids=("a", "b", "cafeé"),
            matrix=unit_rows(rng, 3, 17),
            provider_tag="test-provider",
        )
        path = tmp_path / "store.clnk"
        save_store(store, path)
        loaded = load_store(path)
        assert loaded.ids == store.ids
        assert loaded.provider_tag == "test-provider"
        assert loaded.matrix.tobytes() == store.matrix.tobytes()
        assert loaded.normalized

    def test_empty_store_round_trips(self, tmp_path):
        store = EmbeddingStore(ids=(), matrix=np.zeros((0, 8), dtype=np.float32))
        path = tmp_path / "empty.clnk"
        save_store(store, path)
        loaded = load_store(path)
        assert loaded.ids == () and loaded.dim == 8

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.clnk"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(StoreFormatError, match="magic"):
            load_store(path)

    def test_unsupported_version_rejected(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "v9.clnk"
        save_store(EmbeddingStore(ids=("a",), matrix=unit_rows(rng, 1, 4)), path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 4, 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(StoreFormatError, match="version 9"):
            load_store(path)

    def test_corrupted_payload_fails_checksum(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "corrupt.clnk"
        save_store(EmbeddingStore(ids=("a", "b"), matrix=unit_rows(rng, 2, 8)), path)
        blob = bytearray(path.read_bytes())
        blob[-10] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(StoreFormatError, match="checksum"):
            load_store(path)

    def test_truncation_reports_byte_counts(self, tmp_path):
        rng = np.random.default_rng(2)
        path = tmp_path / "trunc.clnk"
        save_store(EmbeddingStore(ids=("a", "b"), matrix=unit_rows(rng, 2, 8)), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-20])
        with pytest.raises(StoreFormatError, match=r"\d+"):
            load_store(path)


def precomputed_file(tmp_path, vectors):
    path = tmp_path / "vectors.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, vec in vectors.items():
            fh.write(json.dumps({"id": item_id, "vector": list(vec)}) + "\n")
    return str(path)


class TestPrecomputedProvider:
    def test_embeds_from_file(self, tmp_path):
        path = precomputed_file(tmp_path, {"a": [1.0, 0.0], "b": [3.0, 4.0]})
        provider = ProviderSpec(kind="precomputed_file", path=path)
        outcome = embed_corpus(
            [("a", "text a", "query"), ("b", "text b", "passage")], provider
        )
        assert outcome.failed == []
        assert outcome.store.ids == ("a", "b")
        assert outcome.store.normalized
        assert outcome.store.row("b") == pytest.approx([0.6, 0.8])

    def test_missing_id_goes_to_failures(self, tmp_path):
        path = precomputed_file(tmp_path, {"a": [1.0, 0.0]})
        provider = ProviderSpec(kind="precomputed_file", path=path)
        outcome = embed_corpus(
            [("a", "text", "query"), ("ghost", "text", "query")], provider
        )
        assert outcome.store.ids == ("a",)
        assert outcome.failed == [("ghost", "id not found in precomputed file")]

    def test_dimension_drift_in_file_fails(self, tmp_path):
        path = tmp_path / "vectors.jsonl"
        path.write_text(
            json.dumps({"id": "a", "vector": [1.0, 0.0]}) + "\n"
            + json.dumps({"id": "b", "vector": [1.0, 0.0, 0.0]}) + "\n"
        )
        provider = ProviderSpec(kind="precomputed_file", path=str(path))
        with pytest.raises(ValueError, match="dim"):
            embed_corpus([("a", "t", "query"), ("b", "t", "query")], provider)


class FakeTransport:
    """Deterministic embedding service: hash-free, role-aware, call-counted."""

    def __init__(self, dim=4, fail_batches=0, drift_after=None):
        self.dim = dim
        self.calls = 0
        self.payloads = []
        self.fail_batches = fail_batches
        self.drift_after = drift_after

    def __call__(self, endpoint, payload):
        self.calls += 1
        self.payloads.append(payload)
        if self.fail_batches > 0:
            self.fail_batches -= 1
            raise ConnectionError("transient")
        dim = self.dim
        if self.drift_after is not None and self.calls > self.drift_after:
            dim = self.dim + 1
        vectors = []
        for text in payload["texts"]:
            vec = [float(len(text) % 7 + 1)] + [0.0] * (dim - 1)
            vectors.append(vec)
        return {"dim": dim, "vectors": vectors}


def remote_provider(**overrides):
    defaults = dict(
        kind="remote_service",
        endpoint="http://embedder.test/v1",
        batch_size=2,
        max_parallel_requests=1,
        max_retries=2,
        tag="fake",
    )
    defaults.update(overrides)
    return ProviderSpec(**defaults)


class TestRemoteProvider:
    def test_batches_by_role(self):
        transport = FakeTransport()
        items = [
            ("q1", "alpha", "query"),
            ("p1", "beta", "passage"),
            ("q2", "gamma", "query"),
            ("q3", "delta", "query"),
        ]
        outcome = embed_corpus(items, remote_provider(), transport=transport)
        assert outcome.failed == []
        # 3 queries at batch_size 2 -> 2 calls; 1 passage -> 1 call.
        assert transport.calls == 3
        roles = [p["role"] for p in transport.payloads]
        assert roles.count("query") == 2 and roles.count("passage") == 1
        for payload in transport.payloads:
            assert all(isinstance(t, str) for t in payload["texts"])

    def test_templates_rendered_per_role(self):
        transport = FakeTransport()
        provider = remote_provider(
            query_template="query: {text}", passage_template="passage: {text}"
        )
        embed_corpus(
            [("q1", "alpha", "query"), ("p1", "beta", "passage")],
            provider,
            transport=transport,
        )
        sent = [t for payload in transport.payloads for t in payload["texts"]]
        assert "query: alpha" in sent and "passage: beta" in sent

    def test_retry_then_success(self):
        transport = FakeTransport(fail_batches=1)
        outcome = embed_corpus(
            [("a", "text", "query")], remote_provider(), transport=transport
        )
        assert outcome.failed == []
        assert transport.calls == 2

    def test_persistent_failure_marks_items_failed(self):
        transport = FakeTransport(fail_batches=99)
        outcome = embed_corpus(
            [("a", "text", "query"), ("b", "other", "query"), ("c", "third", "query")],
            remote_provider(),
            transport=transport,
        )
        failed_ids = sorted(i for i, _ in outcome.failed)
        assert failed_ids == ["a", "b", "c"]
        assert outcome.store.ids == ()

    def test_dimension_drift_fails_fast(self):
        transport = FakeTransport(drift_after=1)
        with pytest.raises(ValueError, match="drift"):
            embed_corpus(
                [("a", "one", "query"), ("b", "two", "query"),
                 ("c", "three", "query"), ("d", "four", "query")],
                remote_provider(),
                transport=transport,
            )

    def test_rerun_with_existing_store_makes_zero_calls(self):
        transport = FakeTransport()
        items = [("a", "one", "query"), ("b", "two", "query")]
        first = embed_corpus(items, remote_provider(), transport=transport)
        assert transport.calls > 0

        again = FakeTransport()
        second = embed_corpus(
            items, remote_provider(), existing=first.store, transport=again
        )
        assert again.calls == 0
        assert second.provider_calls == 0
        assert second.store.ids == first.store.ids
        assert second.store.matrix.tobytes() == first.store.matrix.tobytes()

    def test_existing_store_with_other_tag_ignored(self):
        transport = FakeTransport()
        items = [("a", "one", "query")]
        first = embed_corpus(items, remote_provider(), transport=transport)
        other = remote_provider(tag="different-model")
        again = FakeTransport()
        embed_corpus(items, other, existing=first.store, transport=again)
        assert again.calls == 1

    def test_new_items_extend_existing_store(self):
        transport = FakeTransport()
        first = embed_corpus([("a", "one", "query")], remote_provider(), transport=transport)
        second = embed_corpus(
            [("a", "one", "query"), ("b", "two", "query")],
            remote_provider(),
            existing=first.store,
            transport=transport,
        )
        assert second.store.ids == ("a", "b")

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError, match="empty text"):
            embed_corpus([("a", "  ", "query")], remote_provider(), transport=FakeTransport())

    def test_duplicate_input_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            embed_corpus(
                [("a", "x", "query"), ("a", "y", "query")],
                remote_provider(),
                transport=FakeTransport(),
            )


class TestProviderSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ProviderSpec(kind="magic")

    def test_precomputed_requires_path(self):
        with pytest.raises(ValueError):
            ProviderSpec(kind="precomputed_file")

    def test_remote_requires_endpoint(self):
        with pytest.raises(ValueError):
            ProviderSpec(kind="remote_service")

    @pytest.mark.parametrize("template", ["no slot", "{text} and {text}"])
    def test_template_slot_count_enforced(self, template):
        with pytest.raises(ValueError, match="slot"):
            ProviderSpec(kind="precomputed_file", path="x", query_template=template)

    def test_batch_size_positive(self):
        with pytest.raises(ValueError):
            ProviderSpec(kind="precomputed_file", path="x", batch_size=0)

    def test_tag_defaults_to_source(self):
        spec = ProviderSpec(kind="precomputed_file", path="vectors.jsonl")
        assert spec.tag == "vectors.jsonl"


class EmbedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        vectors = [[float(len(t)), 1.0] for t in payload["texts"]]
        body = json.dumps({"dim": 2, "vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def test_remote_provider_over_real_http():
    server = HTTPServer(("127.0.0.1", 0), EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        endpoint = f"http://127.0.0.1:{server.server_port}/embed"
        provider = ProviderSpec(kind="remote_service", endpoint=endpoint, tag="live")
        outcome = embed_corpus(
            [("a", "hello", "query"), ("b", "bonjour", "passage")], provider
        )
        assert outcome.failed == []
        assert outcome.store.ids == ("a", "b")
        assert outcome.store.normalized
    finally:
        server.shutdown()
        thread.join(timeout=5)


def test_normalize_rows_unit_norm():
    rng = np.random.default_rng(11)
    rows = normalize_rows(rng.standard_normal((20, 9)).astype(np.float32))
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-6)
