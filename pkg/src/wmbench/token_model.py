"""Next-token distributions for watermark experiments.

A small additive-smoothed n-gram model stands in for a real LLM, and
``HTTPModelAdapter`` / ``FixtureModelAdapter`` let an external model serve
probability vectors over the same minimal request/response contract.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace split."""
    return text.lower().split()


class Vocabulary:
    """Ordered set of distinct token strings with a stable id mapping."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if len(tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be distinct")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, corpus: Iterable[Sequence[str]]) -> "Vocabulary":
        # frequency-descending, ties alphabetical; stable across runs
        counts = Counter(tok for seq in corpus for tok in seq)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ordered)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def encode(self, tokens: Sequence[str], skip_unknown: bool = False) -> list[int]:
        if skip_unknown:
            return [self._index[t] for t in tokens if t in self._index]
        return [self.id(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def check_distribution(probs: np.ndarray, vocab_size: int | None = None) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError("distribution must be a 1-D vector")
    if vocab_size is not None and probs.shape[0] != vocab_size:
        raise ValueError(f"distribution has length {probs.shape[0]}, expected {vocab_size}")
    if np.isnan(probs).any() or (probs < 0).any():
        raise ValueError("distribution has NaN or negative entries")
    total = probs.sum()
    if total <= 0:
        raise ValueError("degenerate distribution (all zero)")
    if abs(total - 1.0) > 1e-9:
        probs = probs / total
    return probs


class LanguageModel(Protocol):
    vocab: Vocabulary

    def next_distribution(self, context: Sequence[int]) -> np.ndarray: ...


@dataclass
class NGramModel:
    """Additive-smoothed n-gram model over a fixed vocabulary.

    ``counts`` maps a context tuple of ``order - 1`` token ids to a dense
    count vector over the vocabulary. Contexts that were never observed
    (including contexts shorter than ``order - 1``) get the pure smoothing
    mass, i.e. the uniform distribution.
    """

    vocab: Vocabulary
    order: int
    alpha: float = DEFAULT_ALPHA
    counts: dict[tuple[int, ...], np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        V = self.vocab.size
        self._uniform = np.full(V, 1.0 / V)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        V = self.vocab.size
        for t in context:
            if not 0 <= int(t) < V:
                raise ValueError(f"token id {t} outside vocabulary of size {V}")
        width = self.order - 1
        if width == 0:
            key: tuple[int, ...] = ()
        elif len(context) < width:
            return self._uniform.copy()
        else:
            key = tuple(int(t) for t in context[len(context) - width:])
        cached = self._cache.get(key)
        if cached is None:
            row = self.counts.get(key)
            if row is None:
                cached = self._uniform
            else:
                smoothed = row + self.alpha
                cached = smoothed / smoothed.sum()
            self._cache[key] = cached
        return cached.copy()


def train_ngram(corpus: Sequence[Sequence[str]], order: int, alpha: float = DEFAULT_ALPHA,
                vocab: Vocabulary | None = None) -> NGramModel:
    """Count n-grams in ``corpus`` (a list of token sequences).

    Only n-grams fully inside one sequence are counted; there is no
    padding at sequence boundaries.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    corpus = [list(seq) for seq in corpus if len(seq) > 0]
    if not corpus:
        raise ValueError("empty corpus")
    if vocab is None:
        vocab = Vocabulary.from_corpus(corpus)
    V = vocab.size
    counts: dict[tuple[int, ...], np.ndarray] = defaultdict(lambda: np.zeros(V))
    for seq in corpus:
        ids = vocab.encode(seq)
        for i in range(order - 1, len(ids)):
            counts[tuple(ids[i - order + 1:i])][ids[i]] += 1
    return NGramModel(vocab=vocab, order=order, alpha=alpha, counts=dict(counts))


def next_distribution(model: LanguageModel, context: Sequence[int]) -> np.ndarray:
    return model.next_distribution(context)


def sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one token id; consumes exactly one uniform."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.sum() <= 0:
        raise ValueError("degenerate distribution (all zero)")
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(probs) - 1)
    # never land on a zero-probability slot through rounding at the tail
    while probs[idx] == 0:
        idx -= 1
    return idx


def apply_temperature(probs: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if temperature == 1.0:
        return probs
    with np.errstate(divide="ignore"):
        logp = np.log(probs) / temperature
    logp -= logp.max()
    out = np.exp(logp)
    return out / out.sum()


class Sampler(Protocol):
    """Chooses the next token given the model distribution.

    ``context`` is the full token history (prompt plus generated so far)
    and ``step`` is the index of the token being generated.
    """

    def __call__(self, probs: np.ndarray, context: Sequence[int], step: int,
                 rng: np.random.Generator) -> int: ...


def plain_sampler(probs: np.ndarray, context: Sequence[int], step: int,
                  rng: np.random.Generator) -> int:
    return sample(probs, rng)


def generate(model: LanguageModel, prompt: Sequence[int], length: int,
             sampler: Sampler = plain_sampler, rng: np.random.Generator | int | None = None,
             temperature: float = 1.0) -> list[int]:
    """Return ``length`` new token ids continuing ``prompt``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    context = [int(t) for t in prompt]
    out: list[int] = []
    for step in range(length):
        probs = apply_temperature(model.next_distribution(context), temperature)
        tok = int(sampler(probs, context, step, rng))
        context.append(tok)
        out.append(tok)
    return out


# -----------------------------------------------------------------------------
# External model adapter

class ModelAdapterError(RuntimeError):
    pass


def context_key(context: Sequence[int]) -> str:
    payload = json.dumps([int(t) for t in context], separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


class FixtureModelAdapter:
    """Replays recorded ``{"key", "context", "probs"}`` lines."""

    def __init__(self, vocab: Vocabulary, path: str | Path):
        self.vocab = vocab
        self.path = Path(path)
        self._records: dict[str, np.ndarray] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._records[rec["key"]] = np.asarray(rec["probs"], dtype=np.float64)

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        key = context_key(context)
        try:
            probs = self._records[key]
        except KeyError:
            raise ModelAdapterError(f"no fixture for context hash {key[:12]}") from None
        return check_distribution(probs.copy(), self.vocab.size)

    def record(self, context: Sequence[int], probs: np.ndarray) -> None:
        key = context_key(context)
        if key in self._records:
            return
        probs = np.asarray(probs, dtype=np.float64)
        self._records[key] = probs
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            rec = {"key": key, "context": [int(t) for t in context], "probs": probs.tolist()}
            fh.write(json.dumps(rec) + "\n")


class HTTPModelAdapter:
    """POSTs ``{"context": [int], "top_k": int|null}`` and reads ``{"probs": [float]}``.

    When ``fixtures`` is given every live response is recorded there.
    """

    def __init__(self, vocab: Vocabulary, endpoint: str, timeout: float = 30.0,
                 max_retries: int = 3, top_k: int | None = None,
                 fixtures: FixtureModelAdapter | None = None, client=None):
        import httpx

        self.vocab = vocab
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self.top_k = top_k
        self.fixtures = fixtures
        self._client = client or httpx.Client(timeout=timeout)

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        import httpx

        body = {"context": [int(t) for t in context], "top_k": self.top_k}
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(self.endpoint, json=body, timeout=self.timeout)
                resp.raise_for_status()
                probs = np.asarray(resp.json()["probs"], dtype=np.float64)
                break
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_exc = exc
                logger.warning("model request failed (attempt %d): %s", attempt + 1, exc)
                if attempt < self.max_retries:
                    time.sleep(min(0.1 * 2 ** attempt, 2.0))
        else:
            raise ModelAdapterError(f"model endpoint failed after retries: {last_exc}")
        probs = check_distribution(probs, self.vocab.size)
        if self.fixtures is not None:
            self.fixtures.record(context, probs)
        return probs
