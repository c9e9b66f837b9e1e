"""Green-list soft watermark: keyed vocabulary partition, logit bias, z-test."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .token_model import LanguageModel, sample

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_CANDIDATE_SALT = np.uint64(0xD6E8FEB86659FD93)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array (wraps mod 2**64)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def key_id(key: int) -> str:
    """Short non-reversible label for a secret key, safe to put in reports."""
    return hashlib.sha256(f"wmbench-key:{int(key)}".encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SoftWatermarkConfig:
    gamma: float = 0.25
    delta: float = 4.0
    key: int = 15485863
    context_width: int = 4
    scheme: str = "selfhash"
    dedup: bool = False
    z_threshold: float = 4.0

    def __post_init__(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.context_width < 1:
            raise ValueError("context_width must be >= 1")
        if self.scheme not in ("selfhash", "lefthash"):
            raise ValueError(f"unknown seeding scheme {self.scheme!r}")

    @property
    def threshold64(self) -> np.uint64:
        return np.uint64(int(self.gamma * 2.0 ** 64) & MASK64)


def _window_seed(config: SoftWatermarkConfig, window: Sequence[int]) -> np.uint64:
    # SelfHash anchors on the window token with the smallest keyed hash (a plain
    # min over ids would nearly always pick the most frequent token);
    # LeftHash anchors on the immediately preceding token.
    key = np.uint64(config.key & MASK64)
    ids = np.asarray(window, dtype=np.uint64)
    hashed = splitmix64(ids ^ key)
    if config.scheme == "selfhash":
        return key ^ hashed.min()
    return key ^ hashed[-1]


def green_mask(config: SoftWatermarkConfig, window: Sequence[int], vocab_size: int) -> np.ndarray:
    """Boolean green mask over all candidates for one context window.

    Under SelfHash each candidate's membership is seeded by the candidate
    itself as well as the window, so the mask is evaluated candidate by
    candidate (vectorised here). LeftHash ignores the candidate in the seed
    and permutes the vocabulary instead.
    """
    window = [int(t) for t in window][-config.context_width:]
    if not window:
        raise ValueError("empty context window")
    seed = _window_seed(config, window)
    cand = np.arange(vocab_size, dtype=np.uint64)
    if config.scheme == "selfhash":
        h = splitmix64(seed ^ splitmix64(cand ^ _CANDIDATE_SALT))
        return h < config.threshold64
    # LeftHash: exactly floor(gamma * V) green tokens chosen by a seeded permutation
    rng = np.random.default_rng(int(seed))
    mask = np.zeros(vocab_size, dtype=bool)
    mask[rng.permutation(vocab_size)[: int(config.gamma * vocab_size)]] = True
    return mask


def is_green(config: SoftWatermarkConfig, window: Sequence[int], candidate: int,
             vocab_size: int | None = None) -> bool:
    if config.scheme == "lefthash":
        if vocab_size is None:
            raise ValueError("lefthash membership needs vocab_size")
        return bool(green_mask(config, window, vocab_size)[candidate])
    window = [int(t) for t in window][-config.context_width:]
    if not window:
        raise ValueError("empty context window")
    seed = _window_seed(config, window)
    c = np.array([candidate], dtype=np.uint64)
    h = splitmix64(seed ^ splitmix64(c ^ _CANDIDATE_SALT))
    return bool(h[0] < config.threshold64)


def apply_bias(logits: np.ndarray, mask: np.ndarray, delta: float) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise ValueError("NaN logit")
    if np.isposinf(logits).any():
        raise ValueError("+inf logit")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ValueError("mask and logits differ in shape")
    return logits + delta * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def biased_distribution(probs: np.ndarray, context: Sequence[int],
                        config: SoftWatermarkConfig) -> np.ndarray:
    if len(context) == 0 or config.delta == 0:
        return probs
    mask = green_mask(config, context, len(probs))
    with np.errstate(divide="ignore"):
        logits = np.log(probs)
    return softmax(apply_bias(logits, mask, config.delta))


class SoftWatermarkSampler:
    """Sampler hook for ``token_model.generate``."""

    def __init__(self, config: SoftWatermarkConfig):
        self.config = config

    def __call__(self, probs: np.ndarray, context: Sequence[int], step: int,
                 rng: np.random.Generator) -> int:
        return sample(biased_distribution(probs, context, self.config), rng)


def watermarked_sample(model: LanguageModel, context: Sequence[int],
                       config: SoftWatermarkConfig, rng: np.random.Generator) -> int:
    probs = model.next_distribution(context)
    return sample(biased_distribution(probs, context, config), rng)


@dataclass(frozen=True)
class DetectionReport:
    T: int
    green_count: int
    z: float
    p_value: float
    threshold: float
    gamma: float
    delta: float
    key_id: str

    @property
    def detected(self) -> bool:
        return self.z >= self.threshold

    def to_record(self) -> dict:
        return {
            "T": self.T,
            "green_count": self.green_count,
            "z": self.z,
            "p_value": self.p_value,
            "gamma": self.gamma,
            "delta": self.delta,
            "key_id": self.key_id,
        }


def z_score(green_count: int, T: int, gamma: float) -> float:
    return (green_count - gamma * T) / math.sqrt(T * gamma * (1 - gamma))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2))


def detect_z(tokens: Sequence[int], config: SoftWatermarkConfig,
             vocab_size: int | None = None) -> DetectionReport:
    """Count green tokens and compute the one-sided z-test.

    The first ``context_width`` tokens lack a full window and are not
    scored. With ``config.dedup`` each (window, token) pair counts once.
    """
    h = config.context_width
    tokens = [int(t) for t in tokens]
    if len(tokens) < h + 1:
        raise ValueError(f"need at least {h + 1} tokens, got {len(tokens)}")
    seen: set[tuple[int, ...]] = set()
    T = green = 0
    for i in range(h, len(tokens)):
        window = tokens[i - h:i]
        if config.dedup:
            key = (*window, tokens[i])
            if key in seen:
                continue
            seen.add(key)
        T += 1
        green += is_green(config, window, tokens[i], vocab_size)
    z = z_score(green, T, config.gamma)
    return DetectionReport(T=T, green_count=green, z=z, p_value=normal_sf(z),
                           threshold=config.z_threshold, gamma=config.gamma,
                           delta=config.delta, key_id=key_id(config.key))
