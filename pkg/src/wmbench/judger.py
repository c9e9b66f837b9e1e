"""LLM-judger harness: prompts, order randomisation, verdict parsing, aggregation."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .token_model import tokenize

logger = logging.getLogger(__name__)

CATEGORIES = (
    "Relevance to the prompt",
    "Depth of detail",
    "Clarity of writing",
    "Coherence and logical flow",
    "Originality and insight",
    "Use of specific examples",
    "Accuracy of information",
)
TEMPLATES = ("categorical", "simple")

UNWATERMARKED, WATERMARKED, TIE = "U", "W", "T"
OUTCOMES = (UNWATERMARKED, WATERMARKED, TIE)

API_KEY_ENV = "WMBENCH_JUDGER_API_KEY"

_MARKER = re.compile(r"\[\[([ABC])\]\]")
_SCORES = re.compile(r"\s*:\s*(\d+(?:\s*,\s*\d+)*)")
_SLOTS = re.compile(r"\{(prompt|answer_a|answer_b)\}")


class UnparseableVerdict(ValueError):
    pass


class JudgerClientError(RuntimeError):
    """Transient client failure (network, rate limit)."""


def load_template(name: str) -> str:
    if name not in TEMPLATES:
        raise ValueError(f"unknown template {name!r}")
    return resources.files("wmbench").joinpath("templates", f"{name}.txt").read_text("utf-8")


@dataclass(frozen=True)
class JudgerPrompt:
    template: str
    text: str


def build_prompt(template: str, source_prompt: str, completion_a: str,
                 completion_b: str) -> JudgerPrompt:
    fields = {"prompt": source_prompt, "answer_a": completion_a, "answer_b": completion_b}
    for name, value in fields.items():
        if value is None or not str(value).strip():
            raise ValueError(f"missing {name}")
    text = _SLOTS.sub(lambda m: fields[m.group(1)], load_template(template))
    return JudgerPrompt(template, text)


# -----------------------------------------------------------------------------
# Order randomisation

@dataclass(frozen=True)
class PairPresentation:
    pair_id: str
    watermarked_is_a: bool
    seed: int

    @property
    def assignment(self) -> str:
        return "A=watermarked" if self.watermarked_is_a else "A=unwatermarked"

    def answers(self, unwatermarked: str, watermarked: str) -> tuple[str, str]:
        if self.watermarked_is_a:
            return watermarked, unwatermarked
        return unwatermarked, watermarked

    def outcome(self, choice: str) -> str:
        """Map an A/B/C choice back to U/W/T."""
        if choice == "C":
            return TIE
        if choice not in ("A", "B"):
            raise ValueError(f"bad choice {choice!r}")
        chose_a = choice == "A"
        return WATERMARKED if chose_a == self.watermarked_is_a else UNWATERMARKED

    def side_of(self, outcome: str) -> str:
        if outcome == WATERMARKED:
            return "A" if self.watermarked_is_a else "B"
        if outcome == UNWATERMARKED:
            return "B" if self.watermarked_is_a else "A"
        raise ValueError("tie has no side")


def randomize_pair(pair_id: str, seed: int) -> PairPresentation:
    digest = hashlib.sha256(f"order:{seed}:{pair_id}".encode()).digest()
    return PairPresentation(pair_id, bool(digest[0] & 1), seed)


# -----------------------------------------------------------------------------
# Parsing

@dataclass(frozen=True)
class Verdict:
    choice: str
    scores: tuple[int, ...] | None
    raw: str = ""
    side_scores: Mapping[str, tuple[int, ...]] | None = None

    def __eq__(self, other):
        if not isinstance(other, Verdict):
            return NotImplemented
        return (self.choice, self.scores, _freeze(self.side_scores)) == \
            (other.choice, other.scores, _freeze(other.side_scores))

    def __hash__(self):
        return hash((self.choice, self.scores, _freeze(self.side_scores)))


def _freeze(side):
    return None if side is None else tuple(sorted(side.items()))


def _side_scores(raw: str) -> dict[str, tuple[int, ...]] | None:
    a = [int(x) for x in re.findall(r"LLM A\s*:\s*([1-5])\b", raw)]
    b = [int(x) for x in re.findall(r"LLM B\s*:\s*([1-5])\b", raw)]
    if len(a) == len(b) == len(CATEGORIES):
        return {"A": tuple(a), "B": tuple(b)}
    return None


def parse_verdict(raw: str, template: str = "categorical") -> Verdict:
    """Take the last ``[[A]]``/``[[B]]``/``[[C]]`` marker in ``raw``.

    For the categorical template an A/B marker must be followed by exactly
    seven comma-separated scores in 1..5. Per-criterion ``LLM A: n`` /
    ``LLM B: n`` lines, when all fourteen are present, are kept as
    ``side_scores``.
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}")
    markers = list(_MARKER.finditer(raw or ""))
    if not markers:
        raise UnparseableVerdict("no verdict marker")
    last = markers[-1]
    choice = last.group(1)
    if template == "simple":
        return Verdict(choice, None, raw)
    if choice == "C":
        return Verdict(choice, None, raw, _side_scores(raw))
    m = _SCORES.match(raw, last.end())
    if not m:
        raise UnparseableVerdict("verdict has no score list")
    scores = tuple(int(s) for s in m.group(1).split(","))
    if len(scores) != len(CATEGORIES):
        raise UnparseableVerdict(f"expected {len(CATEGORIES)} scores, got {len(scores)}")
    if any(not 1 <= s <= 5 for s in scores):
        raise UnparseableVerdict("score outside 1..5")
    return Verdict(choice, scores, raw, _side_scores(raw))


def render_response(verdict: Verdict, template: str = "categorical") -> str:
    """Canonical judger response text for ``verdict``."""
    lines = []
    if verdict.choice == "C":
        lines.append("In my assessment, neither response is superior.")
    else:
        lines.append(f"In my assessment, the superior response is from LLM {verdict.choice}.")
    lines.append("")
    if template == "categorical" and verdict.side_scores:
        for i, name in enumerate(CATEGORIES):
            lines.append(f"{i + 1}. {name}:")
            lines.append(f"   - LLM A: {verdict.side_scores['A'][i]}")
            lines.append(f"   - LLM B: {verdict.side_scores['B'][i]}")
            lines.append("")
    lines.append("Based on the evaluation above, my verdict is:")
    lines.append("")
    if template == "categorical" and verdict.choice != "C":
        lines.append(f"[[{verdict.choice}]]: " + ", ".join(str(s) for s in verdict.scores))
    else:
        lines.append(f"[[{verdict.choice}]]")
    return "\n".join(lines)


# -----------------------------------------------------------------------------
# Clients

class JudgerClient(Protocol):
    def complete(self, messages: list[dict], temperature: float = 0.0) -> str: ...


def prompt_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class FixtureJudgerClient:
    """Replays ``{"key": sha256(prompt), "responses": [...]}`` lines.

    Successive calls with the same prompt walk through ``responses``; the
    last one repeats once exhausted.
    """

    def __init__(self, records: Mapping[str, Sequence[str]] | None = None,
                 path: str | Path | None = None):
        self._records: dict[str, list[str]] = {k: list(v) for k, v in (records or {}).items()}
        if path is not None and Path(path).exists():
            with Path(path).open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._records[rec["key"]] = list(rec["responses"])
        self._calls: dict[str, int] = {}

    def complete(self, messages: list[dict], temperature: float = 0.0) -> str:
        key = prompt_key(messages[-1]["content"])
        if key not in self._records:
            raise KeyError(f"no judger fixture for prompt hash {key[:12]}")
        i = self._calls.get(key, 0)
        self._calls[key] = i + 1
        responses = self._records[key]
        return responses[min(i, len(responses) - 1)]


class ChatCompletionClient:
    """OpenAI-style ``POST {model, messages, temperature}`` client."""

    def __init__(self, endpoint: str, model: str = "gpt-3.5-turbo", timeout: float = 60.0,
                 http_client=None):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self._http = http_client

    def complete(self, messages: list[dict], temperature: float = 0.0) -> str:
        import httpx

        if self._http is None:
            self._http = httpx.Client(timeout=self.timeout)
        headers = {}
        if os.environ.get(API_KEY_ENV):
            headers["Authorization"] = f"Bearer {os.environ[API_KEY_ENV]}"
        try:
            resp = self._http.post(self.endpoint, headers=headers, json={
                "model": self.model, "messages": messages, "temperature": temperature})
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise JudgerClientError(str(exc)) from exc


class RecordingJudgerClient:
    """Wraps a live client and appends every exchange to a fixture file."""

    def __init__(self, inner: JudgerClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._log: dict[str, list[str]] = {}

    def complete(self, messages: list[dict], temperature: float = 0.0) -> str:
        text = self.inner.complete(messages, temperature)
        key = prompt_key(messages[-1]["content"])
        self._log.setdefault(key, []).append(text)
        return text

    def flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8") as fh:
            for key in sorted(self._log):
                fh.write(json.dumps({"key": key, "responses": self._log[key]}) + "\n")


def _split_rendered(text: str) -> tuple[str, str, str]:
    head, _, rest = text.partition("\n[Prompt]\n")
    prompt, _, rest = rest.partition("\n\n[LLM A’s Answer]\n")
    answer_a, _, answer_b = rest.partition("\n\n[LLM B’s Answer]\n")
    return prompt, answer_a, answer_b.rstrip("\n")


def _heuristic_scores(prompt: str, answer: str) -> tuple[int, ...]:
    words = tokenize(answer)
    if not words:
        return (1,) * len(CATEGORIES)
    uniq = len(set(words)) / len(words)
    bigrams = list(zip(words, words[1:]))
    fresh = len(set(bigrams)) / max(1, len(bigrams))
    pwords = set(tokenize(prompt))
    overlap = sum(w in pwords for w in words) / len(words)
    mean_len = sum(map(len, words)) / len(words)

    def likert(x: float) -> int:
        return int(min(5, max(1, round(1 + 4 * x))))

    return (
        likert(min(1.0, 3 * overlap)),
        likert(min(1.0, len(words) / 150)),
        likert(min(1.0, mean_len / 6)),
        likert(fresh ** 2),
        likert(uniq),
        likert(min(1.0, 2 * uniq * fresh - 0.5)),
        likert(0.5 + 0.5 * min(1.0, 3 * overlap)),
    )


class HeuristicJudgerClient:
    """Offline deterministic stand-in for an LLM judger.

    Scores both answers on crude lexical statistics and writes the response
    in the same grammar a real judger is asked to use.
    """

    def complete(self, messages: list[dict], temperature: float = 0.0) -> str:
        text = messages[-1]["content"]
        template = "categorical" if "Criteria:" in text else "simple"
        prompt, answer_a, answer_b = _split_rendered(text)
        sa, sb = _heuristic_scores(prompt, answer_a), _heuristic_scores(prompt, answer_b)
        diff = sum(sa) - sum(sb)
        choice = "A" if diff > 0 else "B" if diff < 0 else "C"
        winner = sa if choice == "A" else sb
        verdict = Verdict(choice, None if choice == "C" else winner,
                          side_scores={"A": sa, "B": sb})
        return render_response(verdict, template)


# -----------------------------------------------------------------------------
# Judging

@dataclass
class JudgedPair:
    pair_id: str
    template: str
    presentation: PairPresentation
    outcome: str | None
    verdict: Verdict | None
    retries: int
    tag: str = ""

    @property
    def judgeable(self) -> bool:
        return self.outcome is not None

    def category_scores(self) -> "CategoryScores | None":
        v = self.verdict
        if v is None or not v.side_scores:
            return None
        p = self.presentation
        u_side = "B" if p.watermarked_is_a else "A"
        w_side = "A" if p.watermarked_is_a else "B"
        return CategoryScores(tuple(v.side_scores[u_side]), tuple(v.side_scores[w_side]))

    def to_record(self) -> dict:
        rec = {
            "pair_id": self.pair_id,
            "tag": self.tag,
            "template": self.template,
            "assignment": self.presentation.assignment,
            "choice": self.verdict.choice if self.verdict else None,
            "outcome": self.outcome,
            "retries": self.retries,
        }
        if self.verdict is not None and self.verdict.scores is not None:
            rec["scores"] = list(self.verdict.scores)
        cs = self.category_scores()
        if cs is not None:
            rec["unwatermarked_scores"] = list(cs.unwatermarked)
            rec["watermarked_scores"] = list(cs.watermarked)
        return rec


def _call_with_backoff(client: JudgerClient, messages: list[dict], temperature: float,
                       attempts: int, backoff: float) -> str:
    for i in range(attempts):
        try:
            return client.complete(messages, temperature)
        except JudgerClientError as exc:
            if i == attempts - 1:
                raise
            logger.warning("judger client error (%s); backing off", exc)
            time.sleep(backoff * 2 ** i)
    raise AssertionError("unreachable")


def judge_pair(presentation: PairPresentation, prompt: str, unwatermarked: str,
               watermarked: str, client: JudgerClient, template: str = "categorical",
               max_retries: int = 3, retry_temperature: float = 1.0,
               client_attempts: int = 3, backoff: float = 0.5, tag: str = "") -> JudgedPair:
    """Judge one pair; unparseable responses are re-sampled up to ``max_retries`` times."""
    answer_a, answer_b = presentation.answers(unwatermarked, watermarked)
    jp = build_prompt(template, prompt, answer_a, answer_b)
    messages = [{"role": "user", "content": jp.text}]
    for attempt in range(max_retries + 1):
        temperature = 0.0 if attempt == 0 else retry_temperature
        raw = _call_with_backoff(client, messages, temperature, client_attempts, backoff)
        try:
            verdict = parse_verdict(raw, template)
        except UnparseableVerdict as exc:
            logger.info("pair %s: unparseable verdict (%s)", presentation.pair_id, exc)
            continue
        return JudgedPair(presentation.pair_id, template, presentation,
                          presentation.outcome(verdict.choice), verdict, attempt, tag)
    logger.warning("pair %s: unjudgeable after %d retries", presentation.pair_id, max_retries)
    return JudgedPair(presentation.pair_id, template, presentation, None, None, max_retries, tag)


def judge_many(items: Sequence[dict], client: JudgerClient, template: str = "categorical",
               seed: int = 0, max_retries: int = 3, max_in_flight: int = 4,
               backoff: float = 0.5) -> list[JudgedPair]:
    """Judge ``{"id", "prompt", "unwatermarked", "watermarked", "tag"}`` items; order preserved."""
    def one(item):
        return judge_pair(randomize_pair(item["id"], seed), item["prompt"],
                          item["unwatermarked"], item["watermarked"], client, template,
                          max_retries=max_retries, backoff=backoff, tag=item.get("tag", ""))

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, items))


# -----------------------------------------------------------------------------
# Aggregation

def aggregate_preferences(outcomes: Sequence[str]) -> dict:
    """Percent of U / W / T outcomes (one decimal); unjudgeable ``None`` entries are counted apart."""
    judged = [o for o in outcomes if o is not None]
    if not judged:
        raise ValueError("no verdicts to aggregate")
    bad = set(judged) - set(OUTCOMES)
    if bad:
        raise ValueError(f"unknown outcomes {bad}")
    n = len(judged)
    counts = {o: judged.count(o) for o in OUTCOMES}
    return {
        "pct_unwatermarked": round(100 * counts[UNWATERMARKED] / n, 1),
        "pct_watermarked": round(100 * counts[WATERMARKED] / n, 1),
        "pct_tie": round(100 * counts[TIE] / n, 1),
        "n": n,
        "unjudgeable": len(outcomes) - n,
    }


def aggregate_by_tag(judged: Sequence[JudgedPair]) -> dict[str, dict]:
    if not judged:
        raise ValueError("no verdicts to aggregate")
    out = {}
    for tag in sorted({j.tag for j in judged}):
        out[tag] = aggregate_preferences([j.outcome for j in judged if j.tag == tag])
    out["overall"] = aggregate_preferences([j.outcome for j in judged])
    return out


@dataclass(frozen=True)
class CategoryScores:
    unwatermarked: tuple[int, ...]
    watermarked: tuple[int, ...]


def category_analysis(category_scores: Sequence[CategoryScores | None],
                      outcomes: Sequence[str]) -> list[dict]:
    """Per category: mean (U - W) score difference split by overall winner,
    and a tally treating the higher category score as that category's vote."""
    if len(category_scores) != len(outcomes):
        raise ValueError("scores and outcomes differ in length")
    if not category_scores:
        raise ValueError("no samples")
    if any(cs is None for cs in category_scores):
        raise ValueError("missing category scores")
    rows = []
    for c, name in enumerate(CATEGORIES):
        diffs = {o: [] for o in OUTCOMES}
        tally = {o: 0 for o in OUTCOMES}
        for cs, outcome in zip(category_scores, outcomes):
            d = cs.unwatermarked[c] - cs.watermarked[c]
            if outcome in diffs:
                diffs[outcome].append(d)
            tally[UNWATERMARKED if d > 0 else WATERMARKED if d < 0 else TIE] += 1
        all_d = [cs.unwatermarked[c] - cs.watermarked[c] for cs in category_scores]
        rows.append({
            "category": name,
            "mean_diff": sum(all_d) / len(all_d),
            "mean_diff_when_U": _mean(diffs[UNWATERMARKED]),
            "mean_diff_when_W": _mean(diffs[WATERMARKED]),
            "mean_diff_when_T": _mean(diffs[TIE]),
            "wins_U": tally[UNWATERMARKED],
            "wins_W": tally[WATERMARKED],
            "ties": tally[TIE],
        })
    return rows


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def judger_agreement(verdict_sets: Mapping[str, Mapping[str, str]]) -> dict[str, dict[str, float]]:
    """Pairwise percent of pairs with the same U/W/T outcome."""
    names = list(verdict_sets)
    if not names:
        raise ValueError("no judgers")
    ids = set(verdict_sets[names[0]])
    for name in names[1:]:
        if set(verdict_sets[name]) != ids:
            raise ValueError(f"pair ids of {name!r} differ from {names[0]!r}")
    if not ids:
        raise ValueError("no pairs")
    matrix: dict[str, dict[str, float]] = {}
    for a in names:
        matrix[a] = {}
        for b in names:
            same = sum(verdict_sets[a][i] == verdict_sets[b][i] for i in ids)
            matrix[a][b] = 100.0 * same / len(ids)
    return matrix
