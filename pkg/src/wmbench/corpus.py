"""Deterministic English-like text for offline runs and tests."""

from __future__ import annotations

import numpy as np

_DET = ["the", "a", "every", "this", "that", "some", "one", "each", "our", "their"]
_ADJ = ["quiet", "bright", "old", "small", "large", "green", "careful", "distant", "early",
        "simple", "curious", "heavy", "gentle", "narrow", "modern", "local", "rural", "busy",
        "ancient", "warm", "cold", "rapid", "steady", "hidden", "open", "public", "famous",
        "strange", "common", "northern"]
_NOUN = ["river", "house", "teacher", "market", "engine", "village", "garden", "report",
         "student", "road", "forest", "council", "doctor", "machine", "letter", "farmer",
         "city", "valley", "painter", "station", "museum", "harbor", "bridge", "library",
         "storm", "window", "kitchen", "mountain", "company", "journal", "island", "festival",
         "season", "question", "history", "network", "family", "program", "picture", "border"]
_VERB = ["visits", "builds", "describes", "follows", "opens", "reaches", "finds", "crosses",
         "supports", "changes", "protects", "studies", "watches", "remembers", "leaves",
         "carries", "moves", "names", "joins", "answers", "improves", "shows", "plans",
         "closes", "measures", "records", "shares", "explores"]
_ADV = ["slowly", "quickly", "often", "rarely", "again", "later", "together", "finally",
        "carefully", "usually", "still", "soon"]
_PREP = ["near", "behind", "across", "under", "beside", "beyond", "through", "around",
         "along", "inside"]
_CONJ = ["and", "but", "while", "because", "although", "so"]


def _noun_phrase(rng: np.random.Generator) -> list[str]:
    words = [_DET[rng.integers(len(_DET))]]
    if rng.random() < 0.6:
        words.append(_ADJ[rng.integers(len(_ADJ))])
    words.append(_NOUN[rng.integers(len(_NOUN))])
    if rng.random() < 0.3:
        words += [_PREP[rng.integers(len(_PREP))], _DET[rng.integers(len(_DET))],
                  _NOUN[rng.integers(len(_NOUN))]]
    return words


def _clause(rng: np.random.Generator) -> list[str]:
    words = _noun_phrase(rng)
    if rng.random() < 0.3:
        words.append(_ADV[rng.integers(len(_ADV))])
    words.append(_VERB[rng.integers(len(_VERB))])
    words += _noun_phrase(rng)
    return words


def synthetic_sentence(rng: np.random.Generator) -> str:
    words = _clause(rng)
    if rng.random() < 0.4:
        words += [_CONJ[rng.integers(len(_CONJ))]] + _clause(rng)
    return " ".join(words) + " ."


def synthetic_corpus(n_bytes: int = 120_000, seed: int = 0,
                     sentences_per_doc: int = 6) -> list[str]:
    """Documents of a few sentences each, totalling at least ``n_bytes`` of text."""
    rng = np.random.default_rng(seed)
    docs: list[str] = []
    total = 0
    while total < n_bytes:
        doc = " ".join(synthetic_sentence(rng) for _ in range(sentences_per_doc))
        docs.append(doc)
        total += len(doc.encode("utf-8")) + 1
    return docs
