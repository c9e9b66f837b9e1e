"""Distortion-free exponential-minimum-sampling watermark (EXP-edit).

Generation picks ``argmax_k xi[k] ** (1 / p_k)`` with ``xi`` the current row
of a keyed uniform matrix. Detection aligns the token sequence against the
key rows with a Levenshtein-style DP and calibrates the cost with a
permutation test over fresh keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .token_model import LanguageModel, apply_temperature
from .watermark_soft import key_id

XI_EPS = 1e-12


@dataclass(frozen=True)
class KeySequence:
    key: int
    n: int
    vocab_size: int
    xi: np.ndarray = field(repr=False, compare=False)

    def row(self, index: int) -> np.ndarray:
        """Cyclic row lookup."""
        return self.xi[index % self.n]


def _uniform_open(rng: np.random.Generator, shape) -> np.ndarray:
    return np.clip(rng.random(shape), XI_EPS, 1 - XI_EPS)


def key_sequence(key: int = 42, n: int = 256, vocab_size: int = 2) -> KeySequence:
    if n < 1:
        raise ValueError("n must be >= 1")
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    rng = np.random.default_rng(int(key))
    return KeySequence(key=int(key), n=n, vocab_size=vocab_size,
                       xi=_uniform_open(rng, (n, vocab_size)))


def exp_sample(probs: np.ndarray, xi_row: np.ndarray) -> int:
    """``argmax_k log(xi_k) / p_k`` over tokens with ``p_k > 0``."""
    probs = np.asarray(probs, dtype=np.float64)
    support = probs > 0
    if not support.any():
        raise ValueError("degenerate distribution (all zero)")
    xi = np.clip(np.asarray(xi_row, dtype=np.float64), XI_EPS, 1 - XI_EPS)
    score = np.full(probs.shape, -np.inf)
    score[support] = np.log(xi[support]) / probs[support]
    return int(np.argmax(score))


class ExpSampler:
    """Sampler hook for ``token_model.generate``; ignores the rng."""

    def __init__(self, keyseq: KeySequence, start_offset: int = 0):
        self.keyseq = keyseq
        self.start_offset = start_offset

    def __call__(self, probs, context, step, rng) -> int:
        return exp_sample(probs, self.keyseq.row(self.start_offset + step))


def generate_watermarked(model: LanguageModel, prompt: Sequence[int], length: int,
                         keyseq: KeySequence, start_offset: int = 0,
                         temperature: float = 1.0) -> list[int]:
    if length < 1:
        raise ValueError("length must be >= 1")
    context = [int(t) for t in prompt]
    out: list[int] = []
    for i in range(length):
        probs = apply_temperature(model.next_distribution(context), temperature)
        tok = exp_sample(probs, keyseq.row(start_offset + i))
        context.append(tok)
        out.append(tok)
    return out


# -----------------------------------------------------------------------------
# Alignment

def cost_matrix(tokens: Sequence[int], xi: np.ndarray) -> np.ndarray:
    """``C[i, r] = log(1 - xi[r, tokens[i]])``; watermark-favoured cells are very negative."""
    cols = np.clip(xi[:, np.asarray(tokens, dtype=np.int64)], XI_EPS, 1 - XI_EPS)
    return np.log1p(-cols).T.copy()


@numba.njit(cache=True)
def _align(cost: np.ndarray, rows: np.ndarray, penalty: float) -> float:
    # global alignment of m tokens against the key rows listed in ``rows``
    m = cost.shape[0]
    L = rows.shape[0]
    prev = np.empty(L + 1)
    cur = np.empty(L + 1)
    for j in range(L + 1):
        prev[j] = j * penalty if j > 0 else 0.0
    for i in range(1, m + 1):
        cur[0] = i * penalty
        for j in range(1, L + 1):
            best = prev[j - 1] + cost[i - 1, rows[j - 1]]
            d = prev[j] + penalty
            if d < best:
                best = d
            ins = cur[j - 1] + penalty
            if ins < best:
                best = ins
            cur[j] = best
        for j in range(L + 1):
            prev[j] = cur[j]
    return prev[L]


@numba.njit(cache=True)
def _min_over_offsets(cost: np.ndarray, n: int, penalty: float) -> float:
    m = cost.shape[0]
    best = np.inf
    rows = np.empty(m, dtype=np.int64)
    for s in range(n):
        for j in range(m):
            rows[j] = (s + j) % n
        c = _align(cost, rows, penalty)
        if c < best:
            best = c
    return best


def align_rows(tokens: Sequence[int], xi_rows: np.ndarray, edit_penalty: float = 1.0) -> float:
    """Minimum-cost global alignment of ``tokens`` against the rows of ``xi_rows`` in order."""
    if len(tokens) == 0:
        raise ValueError("empty token sequence")
    cost = cost_matrix(tokens, xi_rows)
    return float(_align(cost, np.arange(xi_rows.shape[0], dtype=np.int64), float(edit_penalty)))


def _cyclic_cost(tokens: np.ndarray, xi: np.ndarray, edit_penalty: float) -> float:
    return float(_min_over_offsets(cost_matrix(tokens, xi), xi.shape[0], float(edit_penalty)))


def alignment_cost(tokens: Sequence[int], keyseq: KeySequence, edit_penalty: float = 1.0) -> float:
    """Minimum alignment cost over all ``n`` cyclic start offsets.

    For each offset ``s`` the tokens are aligned against the ``m`` key rows
    ``s, s+1, ..., s+m-1 (mod n)``; substitutions cost
    ``log(1 - xi[row, token])`` and insertions/deletions cost ``edit_penalty``.
    """
    if len(tokens) == 0:
        raise ValueError("empty token sequence")
    return _cyclic_cost(np.asarray(tokens, dtype=np.int64), keyseq.xi, edit_penalty)


@dataclass(frozen=True)
class AlignmentReport:
    observed_cost: float
    null_costs: list[float]
    p_value: float
    n_resamples: int
    n: int
    key_id: str

    def to_record(self) -> dict:
        return {
            "observed_cost": self.observed_cost,
            "p_value": self.p_value,
            "n_resamples": self.n_resamples,
            "n": self.n,
            "key_id": self.key_id,
        }


def permutation_p_value(observed: float, null_costs: Sequence[float]) -> float:
    null = np.asarray(null_costs, dtype=np.float64)
    return float((1 + np.count_nonzero(null <= observed)) / (1 + len(null)))


def detect_permutation(tokens: Sequence[int], keyseq: KeySequence, n_resamples: int = 99,
                       edit_penalty: float = 1.0, seed: int = 0) -> AlignmentReport:
    """Permutation test of the alignment cost against fresh random keys.

    Entries of a fresh key are i.i.d. uniform, so only the columns for tokens
    that occur in ``tokens`` are drawn; the null cost is identically
    distributed to one computed on a full ``n x |V|`` matrix.
    """
    if n_resamples < 99:
        raise ValueError("n_resamples must be >= 99")
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("empty token sequence")
    if tokens.min() < 0 or tokens.max() >= keyseq.vocab_size:
        raise ValueError("token id outside key vocabulary")
    observed = _cyclic_cost(tokens, keyseq.xi, edit_penalty)
    uniq, remapped = np.unique(tokens, return_inverse=True)
    children = np.random.SeedSequence(int(seed)).spawn(n_resamples)
    null = []
    for child in children:
        xi = _uniform_open(np.random.default_rng(child), (keyseq.n, uniq.size))
        null.append(_cyclic_cost(remapped, xi, edit_penalty))
    return AlignmentReport(observed_cost=observed, null_costs=null,
                           p_value=permutation_p_value(observed, null),
                           n_resamples=n_resamples, n=keyseq.n, key_id=key_id(keyseq.key))
