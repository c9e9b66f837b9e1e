"""Fixed-length text vectors for the black-box classifier.

``embed_hashed_ngrams`` is the offline default. ``EmbeddingClient`` talks to
an external embedding service and can record/replay responses keyed by the
SHA-256 of the input text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .token_model import tokenize

logger = logging.getLogger(__name__)

DEFAULT_DIM = 1536
API_KEY_ENV = "WMBENCH_EMBEDDING_API_KEY"


class EmbeddingError(RuntimeError):
    pass


class RetryableEmbeddingError(EmbeddingError):
    """Network or auth failure; the request may succeed later."""


class EmbeddingDimensionError(EmbeddingError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    source: str = "hashed_ngram"
    dim: int = DEFAULT_DIM
    ngram_orders: tuple[int, ...] = (1, 2, 3)
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 8:
            raise ValueError("dim must be >= 8")
        if self.source not in ("hashed_ngram", "external"):
            raise ValueError(f"unknown feature source {self.source!r}")
        if not self.ngram_orders or min(self.ngram_orders) < 1:
            raise ValueError("ngram_orders must be positive")


def _bucket(gram: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8,
                             key=seed.to_bytes(8, "little", signed=False)).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 1) % dim, (1.0 if h & 1 else -1.0)


def embed_hashed_ngrams(text: str, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """L2-normalised signed feature hashing of word n-gram counts."""
    words = tokenize(text)
    if not words:
        raise ValueError("empty text")
    vec = np.zeros(config.dim)
    for n in config.ngram_orders:
        for i in range(len(words) - n + 1):
            idx, sign = _bucket(" ".join(words[i:i + n]), config.dim, config.hash_seed)
            vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm == 0:
        # every n-gram cancelled out; fall back to an unsigned count
        for n in config.ngram_orders:
            for i in range(len(words) - n + 1):
                idx, _ = _bucket(" ".join(words[i:i + n]), config.dim, config.hash_seed)
                vec[idx] += 1.0
        norm = np.linalg.norm(vec)
    return vec / norm


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingFixtures:
    """Line-delimited ``{"key": sha256(text), "embedding": [...]}`` store."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._store: dict[str, list[float]] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._store[rec["key"]] = rec["embedding"]

    def get(self, text: str) -> list[float] | None:
        return self._store.get(text_key(text))

    def put(self, text: str, embedding: Sequence[float]) -> None:
        key = text_key(text)
        if key in self._store:
            return
        values = [float(v) for v in embedding]
        self._store[key] = values
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "embedding": values}) + "\n")


class EmbeddingClient:
    """Client for ``POST {input, model} -> {embedding: [float]}``.

    ``mode`` is one of ``replay`` (fixtures only), ``record`` (live call,
    fixture written) or ``live``. Credentials come from ``API_KEY_ENV`` and
    are only ever sent as a request header.
    """

    def __init__(self, endpoint: str | None = None, model: str = "text-embedding-ada-002",
                 dim: int = DEFAULT_DIM, mode: str = "replay",
                 fixtures: EmbeddingFixtures | None = None, timeout: float = 30.0,
                 max_retries: int = 3, max_in_flight: int = 4, http_client=None):
        if mode not in ("replay", "record", "live"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("replay", "record") and fixtures is None:
            raise ValueError(f"mode {mode!r} needs a fixture store")
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.mode = mode
        self.fixtures = fixtures
        self.timeout = timeout
        self.max_retries = max_retries
        self.max_in_flight = max_in_flight
        self._http = http_client

    def _post(self, text: str) -> list[float]:
        import httpx

        if self.endpoint is None:
            raise RetryableEmbeddingError("no embedding endpoint configured")
        if self._http is None:
            self._http = httpx.Client(timeout=self.timeout)
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._http.post(self.endpoint, json={"input": text, "model": self.model},
                                       headers=headers)
                resp.raise_for_status()
                return resp.json()["embedding"]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last = exc
                if attempt < self.max_retries:
                    time.sleep(min(0.1 * 2 ** attempt, 2.0))
        raise RetryableEmbeddingError(f"embedding request failed: {last}")

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("empty text")
        values = self.fixtures.get(text) if self.fixtures is not None else None
        if values is None:
            if self.mode == "replay":
                raise EmbeddingError(f"no fixture for text hash {text_key(text)[:12]}")
            values = self._post(text)
            if len(values) == self.dim and self.mode == "record":
                self.fixtures.put(text, values)
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EmbeddingDimensionError(f"expected {self.dim} dims, got {vec.shape}")
        if not np.isfinite(vec).all():
            raise EmbeddingError("non-finite embedding")
        return vec

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return np.stack(list(pool.map(self.embed, texts)))


def embed_external(text: str, client: EmbeddingClient) -> np.ndarray:
    return client.embed(text)


def embed_texts(texts: Sequence[str], config: FeatureConfig,
                client: EmbeddingClient | None = None) -> np.ndarray:
    if config.source == "external":
        if client is None:
            raise ValueError("external features need an EmbeddingClient")
        return client.embed_many(texts)
    return np.stack([embed_hashed_ngrams(t, config) for t in texts])
