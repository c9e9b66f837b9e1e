import json

import httpx
import numpy as np
import pytest

from wmbench.features import (API_KEY_ENV, EmbeddingClient, EmbeddingDimensionError,
                              EmbeddingError, EmbeddingFixtures, FeatureConfig,
                              RetryableEmbeddingError, embed_hashed_ngrams, embed_texts, text_key)


def test_hashed_deterministic_and_unit_norm():
    cfg = FeatureConfig()
    a = embed_hashed_ngrams("the quiet river visits a small village .", cfg)
    b = embed_hashed_ngrams("the quiet river visits a small village .", cfg)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (1536,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


def test_hashed_distinct_texts_far_apart():
    cfg = FeatureConfig(dim=64)
    a, b = embed_hashed_ngrams("a a a", cfg), embed_hashed_ngrams("b b b", cfg)
    assert float(a @ b) < 0.5


def test_hashed_seed_changes_embedding():
    text = "one two three four"
    a = embed_hashed_ngrams(text, FeatureConfig(dim=256, hash_seed=0))
    b = embed_hashed_ngrams(text, FeatureConfig(dim=256, hash_seed=1))
    assert not np.array_equal(a, b)


def test_hashed_empty_raises():
    with pytest.raises(ValueError):
        embed_hashed_ngrams("   ")


def test_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(dim=4)
    with pytest.raises(ValueError):
        FeatureConfig(source="bert")


def test_embed_texts_stack():
    X = embed_texts(["a b", "c d e"], FeatureConfig(dim=32))
    assert X.shape == (2, 32)
    with pytest.raises(ValueError):
        embed_texts(["a"], FeatureConfig(source="external"))


def _transport(dim, calls, fail_first=0):
    def handler(request):
        calls.append(json.loads(request.content))
        if len(calls) <= fail_first:
            return httpx.Response(503)
        body = json.loads(request.content)
        vec = [float(len(body["input"]) + i) for i in range(dim)]
        return httpx.Response(200, json={"embedding": vec})
    return httpx.MockTransport(handler)


def test_record_then_replay(tmp_path):
    calls = []
    store = EmbeddingFixtures(tmp_path / "emb.jsonl")
    live = EmbeddingClient("http://embed.test/v1", dim=8, mode="record", fixtures=store,
                           http_client=httpx.Client(transport=_transport(8, calls)))
    vec = live.embed("hello world")
    assert calls == [{"input": "hello world", "model": "text-embedding-ada-002"}]
    replay = EmbeddingClient(dim=8, mode="replay", fixtures=EmbeddingFixtures(tmp_path / "emb.jsonl"))
    np.testing.assert_array_equal(replay.embed("hello world"), vec)
    line = json.loads((tmp_path / "emb.jsonl").read_text().splitlines()[0])
    assert line["key"] == text_key("hello world")


def test_replay_missing_fixture_raises(tmp_path):
    client = EmbeddingClient(dim=8, mode="replay", fixtures=EmbeddingFixtures(tmp_path / "e.jsonl"))
    with pytest.raises(EmbeddingError):
        client.embed("never seen")


def test_dimension_mismatch(tmp_path):
    client = EmbeddingClient("http://embed.test", dim=16, mode="live",
                             http_client=httpx.Client(transport=_transport(8, [])))
    with pytest.raises(EmbeddingDimensionError):
        client.embed("text")


def test_retries_then_succeeds_and_sends_key(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sekrit")
    seen = []

    def handler(request):
        seen.append(request.headers.get("authorization"))
        if len(seen) < 3:
            return httpx.Response(500)
        return httpx.Response(200, json={"embedding": [0.0] * 8})

    client = EmbeddingClient("http://embed.test", dim=8, mode="live", max_retries=3,
                             http_client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert client.embed("x").shape == (8,)
    assert seen == ["Bearer sekrit"] * 3


def test_retries_exhausted():
    client = EmbeddingClient("http://embed.test", dim=8, mode="live", max_retries=1,
                             http_client=httpx.Client(transport=_transport(8, [], fail_first=10)))
    with pytest.raises(RetryableEmbeddingError):
        client.embed("x")


def test_embed_many_preserves_order(tmp_path):
    store = EmbeddingFixtures(tmp_path / "e.jsonl")
    for i, t in enumerate(["a", "bb", "ccc"]):
        store.put(t, [float(i)] * 8)
    client = EmbeddingClient(dim=8, mode="replay", fixtures=store)
    X = embed_texts(["ccc", "a", "bb"], FeatureConfig(source="external", dim=8), client)
    np.testing.assert_array_equal(X[:, 0], [2.0, 0.0, 1.0])
