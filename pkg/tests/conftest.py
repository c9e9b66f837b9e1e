import numpy as np
import pytest

from wmbench.corpus import synthetic_corpus
from wmbench.token_model import NGramModel, Vocabulary, tokenize, train_ngram


@pytest.fixture(scope="session")
def corpus_docs():
    return synthetic_corpus(120_000, seed=0)


@pytest.fixture(scope="session")
def toy_model(corpus_docs):
    return train_ngram([tokenize(d) for d in corpus_docs], order=3, alpha=0.1)


@pytest.fixture
def tiny_model():
    """Order-2 model over five tokens with a hand-set transition table."""
    vocab = Vocabulary(["a", "b", "c", "d", "e"])
    rng = np.random.default_rng(7)
    counts = {(i,): rng.integers(1, 20, size=5).astype(float) for i in range(5)}
    return NGramModel(vocab=vocab, order=2, alpha=0.5, counts=counts)
