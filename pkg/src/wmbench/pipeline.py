"""End-to-end orchestration: ingest, generate, detect, classify, judge, report.

All artifacts are UTF-8 JSON-lines files in a working directory:

    documents.jsonl   {id, tag, source, text}
    pairs.jsonl       {id, tag, doc_id, prompt, unwatermarked, watermarked,
                       unwatermarked_ids, watermarked_ids, scheme, params, seed}
    timings.jsonl     {pair_id, unwatermarked_seconds, watermarked_seconds}
    detection.jsonl   {pair_id, tag, side, scheme, ...report fields}
    metrics.json      classifier Metrics record (+ run info)
    model.npz         MLP weights W0..W4 / b0..b4 (or logistic w / b)
    verdicts.jsonl    {pair_id, tag, template, assignment, choice, outcome, retries, scores?}
    judging.json      preference aggregates and per-category analysis
    sweep.json/.csv   strength sweep rows

Seeds fan out from the master seed by ``derive_seed(master, *labels)``
(SHA-256 of the joined labels): ``("generate", doc_id)`` per pair,
``("offset", doc_id)`` for the EXP key start, ``("detect", pair_id, side)``
per permutation test, ``("folds",)`` for cross-validation and ``("judge",)``
for presentation order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Iterable, Literal, Sequence, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field

from . import classifier as clf
from . import judger as jdg
from .corpus import synthetic_corpus
from .features import EmbeddingClient, EmbeddingFixtures, FeatureConfig, embed_texts
from .token_model import (FixtureModelAdapter, HTTPModelAdapter, LanguageModel, Vocabulary,
                          generate, plain_sampler, tokenize, train_ngram)
from .watermark_exp import ExpSampler, detect_permutation, key_sequence
from .watermark_soft import SoftWatermarkConfig, SoftWatermarkSampler, detect_z, key_id

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Config

class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Spec):
    kind: Literal["ngram", "http", "fixture"] = "ngram"
    order: int = 3
    alpha: float = 0.1
    corpus: list[str] = []
    vocab: str | None = None
    endpoint: str | None = None
    fixtures: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    top_k: int | None = None


class SoftSpec(_Spec):
    scheme: Literal["soft"] = "soft"
    gamma: float = 0.25
    delta: float = 4.0
    key: int = 15485863
    context_width: int = 4
    seeding: Literal["selfhash", "lefthash"] = "selfhash"
    dedup: bool = False

    def to_config(self) -> SoftWatermarkConfig:
        return SoftWatermarkConfig(gamma=self.gamma, delta=self.delta, key=self.key,
                                   context_width=self.context_width, scheme=self.seeding,
                                   dedup=self.dedup)


class ExpSpec(_Spec):
    scheme: Literal["exp"] = "exp"
    n: int = 256
    key: int = 42
    edit_penalty: float = 1.0
    n_resamples: int = 99


WatermarkSpec = Annotated[Union[SoftSpec, ExpSpec], Field(discriminator="scheme")]


class GenerationSpec(_Spec):
    length: int = 200
    temperature: float = 1.0
    max_prompt_words: int = 50


class JudgerSpec(_Spec):
    template: Literal["categorical", "simple"] = "categorical"
    client: Literal["heuristic", "fixture", "chat"] = "heuristic"
    fixtures: str | None = None
    endpoint: str | None = None
    model: str = "gpt-3.5-turbo"
    max_retries: int = 3
    max_in_flight: int = 4
    backoff: float = 0.5


class FeatureSpec(_Spec):
    source: Literal["hashed_ngram", "external"] = "hashed_ngram"
    dim: int = 1536
    ngram_orders: list[int] = [1, 2, 3]
    hash_seed: int = 0
    endpoint: str | None = None
    model: str = "text-embedding-ada-002"
    fixtures: str | None = None
    mode: Literal["replay", "record", "live"] = "replay"

    def to_config(self) -> FeatureConfig:
        return FeatureConfig(self.source, self.dim, tuple(self.ngram_orders), self.hash_seed)


class ClassifierSpec(_Spec):
    model: Literal["mlp", "logistic"] = "mlp"
    mode: Literal["pooled", "cross_tag"] = "pooled"
    train_tag: str | None = None
    k: int = 5
    grid: bool = False
    learning_rate: float = 2e-4
    weight_decay: float = 2e-3
    batch_size: int = 50
    shuffle: bool = True
    epochs: int = 150
    hidden: list[int] = list(clf.HIDDEN)
    l2: float = 1e-2

    def train_config(self) -> clf.TrainConfig:
        return clf.TrainConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                               batch_size=self.batch_size, shuffle=self.shuffle,
                               epochs=self.epochs, hidden=tuple(self.hidden))


class ExperimentConfig(_Spec):
    seed: int = 0
    model: ModelSpec = ModelSpec()
    watermark: WatermarkSpec = SoftSpec()
    generation: GenerationSpec = GenerationSpec()
    judger: JudgerSpec = JudgerSpec()
    features: FeatureSpec = FeatureSpec()
    classifier: ClassifierSpec = ClassifierSpec()
    sweep_deltas: list[float] = [2.0, 4.0, 8.0]

    def fingerprint(self) -> str:
        core = {"seed": self.seed, "model": self.model.model_dump(),
                "watermark": self.watermark.model_dump(),
                "generation": self.generation.model_dump()}
        return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return ExperimentConfig.model_validate(data or {})


def derive_seed(master: int, *labels) -> int:
    payload = "/".join([str(master), *(str(x) for x in labels)])
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "little") >> 1


# -----------------------------------------------------------------------------
# Persistence

def write_jsonl(path: str | Path, records: Iterable[dict], append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                          encoding="utf-8")


# -----------------------------------------------------------------------------
# Documents

def splice_prompt(text: str, max_words: int = 50) -> str:
    words = text.split()
    if not words:
        raise ValueError("empty document")
    return " ".join(words[:max_words])


@dataclass(frozen=True)
class Document:
    id: str
    tag: str
    source: str
    text: str

    def to_record(self) -> dict:
        return {"id": self.id, "tag": self.tag, "source": self.source, "text": self.text}


def _read_documents(path: Path) -> list[str]:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read corpus file {path}: {exc}") from exc
    if path.suffix == ".jsonl":
        return [json.loads(line)["text"] for line in raw.splitlines() if line.strip()]
    return [line.strip() for line in raw.splitlines() if line.strip()]


def ingest(paths: Sequence[str | Path], tag: str, store: str | Path | None = None
           ) -> list[Document]:
    """One document per non-empty line (``.txt``) or per record (``.jsonl`` with ``text``).

    Ids hash (tag, file name, line index, text), so re-ingesting a file adds
    nothing new to ``store``.
    """
    docs = []
    for p in paths:
        p = Path(p)
        for i, text in enumerate(_read_documents(p)):
            h = hashlib.sha256(f"{tag}\x00{p.name}\x00{i}\x00{text}".encode()).hexdigest()[:16]
            docs.append(Document(h, tag, p.name, text))
    if store is not None:
        existing = {r["id"] for r in read_jsonl(store)}
        fresh = [d for d in docs if d.id not in existing]
        write_jsonl(store, (d.to_record() for d in fresh), append=True)
    return docs


def load_documents(path: str | Path) -> list[Document]:
    return [Document(r["id"], r["tag"], r["source"], r["text"]) for r in read_jsonl(path)]


def write_synthetic_corpus(path: str | Path, n_bytes: int = 120_000, seed: int = 0) -> Path:
    path = Path(path)
    path.write_text("\n".join(synthetic_corpus(n_bytes, seed)) + "\n", encoding="utf-8")
    return path


# -----------------------------------------------------------------------------
# Generation

@dataclass
class GenerationPair:
    id: str
    tag: str
    doc_id: str
    prompt: str
    unwatermarked: str
    watermarked: str
    unwatermarked_ids: list[int]
    watermarked_ids: list[int]
    scheme: str
    params: dict
    seed: int
    unwatermarked_seconds: float = 0.0
    watermarked_seconds: float = 0.0

    def to_record(self) -> dict:
        return {
            "id": self.id, "tag": self.tag, "doc_id": self.doc_id, "prompt": self.prompt,
            "unwatermarked": self.unwatermarked, "watermarked": self.watermarked,
            "unwatermarked_ids": self.unwatermarked_ids, "watermarked_ids": self.watermarked_ids,
            "scheme": self.scheme, "params": self.params, "seed": self.seed,
        }

    def timing_record(self) -> dict:
        return {"pair_id": self.id, "unwatermarked_seconds": self.unwatermarked_seconds,
                "watermarked_seconds": self.watermarked_seconds}

    @classmethod
    def from_record(cls, rec: dict) -> "GenerationPair":
        return cls(rec["id"], rec["tag"], rec["doc_id"], rec["prompt"], rec["unwatermarked"],
                   rec["watermarked"], rec["unwatermarked_ids"], rec["watermarked_ids"],
                   rec["scheme"], rec["params"], rec["seed"])


def _load_vocab(path: str) -> Vocabulary:
    return Vocabulary([t for t in Path(path).read_text(encoding="utf-8").splitlines() if t])


def build_model(spec: ModelSpec, documents: Sequence[Document]) -> LanguageModel:
    if spec.kind == "ngram":
        texts = [d.text for d in documents]
        for p in spec.corpus:
            texts += _read_documents(Path(p))
        return train_ngram([tokenize(t) for t in texts], spec.order, spec.alpha)
    if spec.vocab is None:
        raise ValueError(f"model kind {spec.kind!r} needs a vocab file")
    vocab = _load_vocab(spec.vocab)
    if spec.kind == "fixture":
        if spec.fixtures is None:
            raise ValueError("fixture model needs a fixtures path")
        return FixtureModelAdapter(vocab, spec.fixtures)
    if spec.endpoint is None:
        raise ValueError("http model needs an endpoint")
    fixtures = FixtureModelAdapter(vocab, spec.fixtures) if spec.fixtures else None
    return HTTPModelAdapter(vocab, spec.endpoint, spec.timeout, spec.max_retries, spec.top_k,
                            fixtures)


def _watermark_params(wm, vocab_size: int) -> dict:
    params = wm.model_dump()
    params.pop("key")
    params["key_id"] = key_id(wm.key)
    params["vocab_size"] = vocab_size
    return params


def run_generation(config: ExperimentConfig, documents: Sequence[Document],
                   model: LanguageModel | None = None) -> list[GenerationPair]:
    """One (unwatermarked, watermarked) pair per document, same prompt and seed."""
    if model is None:
        model = build_model(config.model, documents)
    vocab = model.vocab
    wm = config.watermark
    gen = config.generation
    fp = config.fingerprint()
    keyseq = key_sequence(wm.key, wm.n, vocab.size) if wm.scheme == "exp" else None
    params = _watermark_params(wm, vocab.size)
    pairs = []
    for doc in documents:
        try:
            prompt = splice_prompt(doc.text, gen.max_prompt_words)
            prompt_ids = vocab.encode(tokenize(prompt), skip_unknown=True)
            seed = derive_seed(config.seed, "generate", doc.id)
            t0 = time.perf_counter()
            plain = generate(model, prompt_ids, gen.length, plain_sampler, seed, gen.temperature)
            t1 = time.perf_counter()
            if keyseq is not None:
                sampler = ExpSampler(keyseq, derive_seed(config.seed, "offset", doc.id) % wm.n)
            else:
                sampler = SoftWatermarkSampler(wm.to_config())
            marked = generate(model, prompt_ids, gen.length, sampler, seed, gen.temperature)
            t2 = time.perf_counter()
        except Exception as exc:  # noqa: BLE001 - a failing document must not sink the run
            logger.warning("skipping document %s: %s", doc.id, exc)
            continue
        pair_id = hashlib.sha256(f"{fp}:{doc.id}".encode()).hexdigest()[:16]
        pairs.append(GenerationPair(
            id=pair_id, tag=doc.tag, doc_id=doc.id, prompt=prompt,
            unwatermarked=" ".join(vocab.decode(plain)), watermarked=" ".join(vocab.decode(marked)),
            unwatermarked_ids=plain, watermarked_ids=marked, scheme=wm.scheme, params=params,
            seed=seed, unwatermarked_seconds=t1 - t0, watermarked_seconds=t2 - t1))
    return pairs


def save_pairs(pairs: Sequence[GenerationPair], workdir: str | Path) -> int:
    """Append pairs whose ids are not yet stored; returns how many were added."""
    workdir = Path(workdir)
    existing = {r["id"] for r in read_jsonl(workdir / "pairs.jsonl")}
    fresh = [p for p in pairs if p.id not in existing]
    write_jsonl(workdir / "pairs.jsonl", (p.to_record() for p in fresh), append=True)
    write_jsonl(workdir / "timings.jsonl", (p.timing_record() for p in fresh), append=True)
    return len(fresh)


def load_pairs(workdir: str | Path) -> list[GenerationPair]:
    return [GenerationPair.from_record(r) for r in read_jsonl(Path(workdir) / "pairs.jsonl")]


# -----------------------------------------------------------------------------
# Detection

def run_detection(pairs: Sequence[GenerationPair], config: ExperimentConfig) -> list[dict]:
    wm = config.watermark
    rows = []
    for pair in pairs:
        for side, ids in (("unwatermarked", pair.unwatermarked_ids),
                          ("watermarked", pair.watermarked_ids)):
            row = {"pair_id": pair.id, "tag": pair.tag, "side": side, "scheme": wm.scheme}
            if wm.scheme == "soft":
                row.update(detect_z(ids, wm.to_config()).to_record())
            else:
                keyseq = key_sequence(wm.key, wm.n, pair.params["vocab_size"])
                rep = detect_permutation(ids, keyseq, wm.n_resamples, wm.edit_penalty,
                                         seed=derive_seed(config.seed, "detect", pair.id, side))
                row.update(rep.to_record())
            rows.append(row)
    return rows


def detection_summary(rows: Sequence[dict]) -> list[dict]:
    out = []
    for side in ("unwatermarked", "watermarked"):
        sel = [r for r in rows if r["side"] == side]
        if not sel:
            continue
        if sel[0]["scheme"] == "soft":
            zs = [r["z"] for r in sel]
            out.append({"side": side, "n": len(sel), "mean_z": statistics.fmean(zs),
                        "median_z": statistics.median(zs),
                        "frac_z_ge_4": sum(z >= 4 for z in zs) / len(zs)})
        else:
            ps = [r["p_value"] for r in sel]
            out.append({"side": side, "n": len(sel), "median_p": statistics.median(ps),
                        "frac_p_le_0.05": sum(p <= 0.05 for p in ps) / len(ps)})
    return out


# -----------------------------------------------------------------------------
# Classification

@dataclass
class ClassifierRun:
    metrics: clf.Metrics
    model: object
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    best_config: clf.TrainConfig | None = None


def labeled_texts(pairs: Sequence[GenerationPair]) -> tuple[list[str], np.ndarray, list[str], list[str]]:
    texts, labels, ids, tags = [], [], [], []
    for p in pairs:
        for label, text in ((0, p.unwatermarked), (1, p.watermarked)):
            texts.append(text)
            labels.append(label)
            ids.append(f"{p.id}:{label}")
            tags.append(p.tag)
    return texts, np.asarray(labels, dtype=np.float64), ids, tags


def _embedding_client(spec: FeatureSpec) -> EmbeddingClient | None:
    if spec.source != "external":
        return None
    fixtures = EmbeddingFixtures(spec.fixtures) if spec.fixtures else None
    return EmbeddingClient(spec.endpoint, spec.model, spec.dim, spec.mode, fixtures)


def run_classifier(pairs: Sequence[GenerationPair], config: ExperimentConfig) -> ClassifierRun:
    spec = config.classifier
    texts, y, ids, tags = labeled_texts(pairs)
    X = embed_texts(texts, config.features.to_config(), _embedding_client(config.features))
    fold_seed = derive_seed(config.seed, "folds")
    train_cfg = spec.train_config()
    best = None
    if spec.model == "mlp" and spec.grid:
        best = clf.grid_search(X, y, base=train_cfg, k=spec.k, seed=fold_seed).best
        train_cfg = best

    if spec.mode == "pooled":
        if spec.model == "mlp":
            metrics = clf.kfold_evaluate(X, y, train_cfg, k=spec.k, seed=fold_seed)
            model = clf.train(X, y, train_cfg, seed=fold_seed).params
        else:
            metrics = clf.logistic_evaluate(X, y, spec.l2, k=spec.k, seed=fold_seed)
            model = clf.logistic_train(X, y, spec.l2)
        return ClassifierRun(metrics, model, ids, ids, best)

    distinct = sorted(set(tags))
    if len(distinct) < 2:
        raise ValueError("cross-tag mode needs at least two dataset tags")
    train_tag = spec.train_tag or distinct[0]
    if train_tag not in distinct:
        raise ValueError(f"train tag {train_tag!r} not present")
    tr = np.array([t == train_tag for t in tags])
    train_ids = [i for i, m in zip(ids, tr) if m]
    test_ids = [i for i, m in zip(ids, tr) if not m]
    assert not set(train_ids) & set(test_ids)
    if spec.model == "mlp":
        model = clf.train(X[tr], y[tr], train_cfg, seed=fold_seed).params
        probs = clf.forward(model, X[~tr])
    else:
        model = clf.logistic_train(X[tr], y[tr], spec.l2)
        probs = model.predict_proba(X[~tr])
    metrics = clf.compute_metrics(probs, y[~tr])
    return ClassifierRun(metrics, model, train_ids, test_ids, best)


def save_classifier(run: ClassifierRun, config: ExperimentConfig, workdir: str | Path) -> None:
    workdir = Path(workdir)
    rec = run.metrics.to_record()
    rec.update({"model": config.classifier.model, "mode": config.classifier.mode,
                "train_tag": config.classifier.train_tag, "n_train": len(run.train_ids),
                "n_test": len(run.test_ids)})
    if run.best_config is not None:
        rec["best_learning_rate"] = run.best_config.learning_rate
        rec["best_weight_decay"] = run.best_config.weight_decay
        rec["best_batch_size"] = run.best_config.batch_size
        rec["best_shuffle"] = run.best_config.shuffle
    write_json(workdir / "metrics.json", rec)
    if isinstance(run.model, clf.MLPParams):
        run.model.save(workdir / "model.npz")
    else:
        np.savez(workdir / "model.npz", w=run.model.weights, b=np.array([run.model.bias]))


# -----------------------------------------------------------------------------
# Judging

def build_judger_client(spec: JudgerSpec):
    if spec.client == "heuristic":
        return jdg.HeuristicJudgerClient()
    if spec.client == "fixture":
        if not spec.fixtures:
            raise ValueError("fixture judger needs a fixtures path")
        return jdg.FixtureJudgerClient(path=spec.fixtures)
    if not spec.endpoint:
        raise ValueError("chat judger needs an endpoint")
    client = jdg.ChatCompletionClient(spec.endpoint, spec.model)
    if spec.fixtures:
        return jdg.RecordingJudgerClient(client, spec.fixtures)
    return client


@dataclass
class JudgingRun:
    judged: list[jdg.JudgedPair]
    skipped: int
    preferences: dict
    categories: list[dict] | None


def run_judging(pairs: Sequence[GenerationPair], config: ExperimentConfig,
                client=None) -> JudgingRun:
    spec = config.judger
    client = client or build_judger_client(spec)
    items, skipped = [], 0
    for p in pairs:
        if not (p.prompt.strip() and p.unwatermarked.strip() and p.watermarked.strip()):
            skipped += 1
            continue
        items.append({"id": p.id, "prompt": p.prompt, "unwatermarked": p.unwatermarked,
                      "watermarked": p.watermarked, "tag": p.tag})
    if skipped:
        logger.warning("skipped %d pairs with a missing completion", skipped)
    judged = jdg.judge_many(items, client, spec.template, seed=derive_seed(config.seed, "judge"),
                            max_retries=spec.max_retries, max_in_flight=spec.max_in_flight,
                            backoff=spec.backoff)
    if isinstance(client, jdg.RecordingJudgerClient):
        client.flush()
    usable = [j for j in judged if j.judgeable]
    prefs = jdg.aggregate_by_tag(judged) if usable else {}
    cats = None
    scored = [(j.category_scores(), j.outcome) for j in usable]
    if scored and all(cs is not None for cs, _ in scored):
        cats = jdg.category_analysis([cs for cs, _ in scored], [o for _, o in scored])
    return JudgingRun(judged, skipped, prefs, cats)


def save_judging(run: JudgingRun, workdir: str | Path) -> None:
    workdir = Path(workdir)
    write_jsonl(workdir / "verdicts.jsonl", (j.to_record() for j in run.judged))
    write_json(workdir / "judging.json", {
        "preferences": run.preferences, "categories": run.categories, "skipped": run.skipped,
        "unjudgeable": sum(not j.judgeable for j in run.judged)})


# -----------------------------------------------------------------------------
# Strength sweep

def run_sweep(config: ExperimentConfig, documents: Sequence[Document],
              deltas: Sequence[float] | None = None) -> list[dict]:
    if config.watermark.scheme != "soft":
        raise ValueError("the strength sweep varies delta and needs the soft watermark")
    deltas = list(deltas or config.sweep_deltas)
    model = build_model(config.model, documents)
    rows = []
    for delta in deltas:
        cfg = config.model_copy(update={"watermark": config.watermark.model_copy(
            update={"delta": float(delta)})})
        pairs = run_generation(cfg, documents, model)
        det = detection_summary(run_detection(pairs, cfg))
        mlp = run_classifier(pairs, cfg.model_copy(update={"classifier": cfg.classifier.model_copy(
            update={"model": "mlp", "mode": "pooled"})}))
        logit = run_classifier(pairs, cfg.model_copy(update={"classifier": cfg.classifier.model_copy(
            update={"model": "logistic", "mode": "pooled"})}))
        judging = run_judging(pairs, cfg)
        overall = judging.preferences.get("overall", {})
        wm_det = next(d for d in det if d["side"] == "watermarked")
        rows.append({
            "delta": float(delta), "n_pairs": len(pairs),
            "mean_z_watermarked": wm_det["mean_z"],
            "mlp_accuracy": mlp.metrics.accuracy, "mlp_auc": mlp.metrics.auc,
            "logistic_accuracy": logit.metrics.accuracy,
            "judger_pct_unwatermarked": overall.get("pct_unwatermarked"),
        })
    return rows


# -----------------------------------------------------------------------------
# Report

def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return "nan" if x != x else f"{x:.4f}"
    return str(x)


def _table(rows: Sequence[dict], columns: Sequence[str]) -> list[str]:
    out = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for r in rows:
        out.append("| " + " | ".join(_fmt(r.get(c)) for c in columns) + " |")
    return out


def _write_csv(path: Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    lines = [",".join(columns)] + [",".join(_fmt(r.get(c)) for c in columns) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def report(workdir: str | Path, include_timing: bool = False) -> dict:
    """Render ``report.md``, ``summary.json`` and plot-ready CSVs from whatever
    artifacts exist in ``workdir``; absent inputs are listed as gaps."""
    workdir = Path(workdir)
    summary: dict = {"sections": [], "missing": []}
    md = ["# Watermark evaluation report", ""]

    pairs = read_jsonl(workdir / "pairs.jsonl")
    if pairs:
        by_tag: dict[str, int] = {}
        for p in pairs:
            by_tag[p["tag"]] = by_tag.get(p["tag"], 0) + 1
        summary["generation"] = {"n_pairs": len(pairs), "by_tag": by_tag,
                                 "scheme": pairs[0]["scheme"], "params": pairs[0]["params"]}
        summary["sections"].append("generation")
        md += ["## Generation", "", f"pairs: {len(pairs)}", ""]
        md += _table([{"tag": t, "pairs": n} for t, n in sorted(by_tag.items())], ["tag", "pairs"])
        md.append("")
    else:
        summary["missing"].append("generation")

    det = read_jsonl(workdir / "detection.jsonl")
    if det:
        rows = detection_summary(det)
        summary["detection"] = rows
        summary["sections"].append("detection")
        cols = ["side", "n"] + [c for c in rows[0] if c not in ("side", "n")]
        md += ["## Detection", ""] + _table(rows, cols) + [""]
        _write_csv(workdir / "detection_summary.csv", rows, cols)
    else:
        summary["missing"].append("detection")

    if (workdir / "metrics.json").exists():
        m = json.loads((workdir / "metrics.json").read_text(encoding="utf-8"))
        summary["classifier"] = m
        summary["sections"].append("classifier")
        cols = ["model", "mode", "accuracy", "auc", "false_unwatermarked_rate",
                "false_watermarked_rate", "n"]
        md += ["## Classifier", ""] + _table([m], cols) + [""]
        if m.get("folds"):
            md += _table(m["folds"], ["fold", "n", "accuracy", "auc"]) + [""]
        _write_csv(workdir / "classifier.csv", [m], cols)
    else:
        summary["missing"].append("classifier")

    if (workdir / "judging.json").exists():
        j = json.loads((workdir / "judging.json").read_text(encoding="utf-8"))
        summary["judging"] = j
        summary["sections"].append("judging")
        prefs = [{"dataset": k, **v} for k, v in sorted(j["preferences"].items())]
        cols = ["dataset", "pct_unwatermarked", "pct_watermarked", "pct_tie", "n", "unjudgeable"]
        md += ["## Judger preferences", ""] + _table(prefs, cols) + [""]
        _write_csv(workdir / "preferences.csv", prefs, cols)
        if j.get("categories"):
            ccols = ["category", "mean_diff", "mean_diff_when_U", "mean_diff_when_W", "mean_diff_when_T",
                     "wins_U", "wins_W", "ties"]
            md += ["## Judger categories", ""] + _table(j["categories"], ccols) + [""]
            _write_csv(workdir / "categories.csv", j["categories"], ccols)
    else:
        summary["missing"].append("judging")

    if (workdir / "sweep.json").exists():
        rows = json.loads((workdir / "sweep.json").read_text(encoding="utf-8"))
        summary["sweep"] = rows
        summary["sections"].append("sweep")
        cols = ["delta", "n_pairs", "mean_z_watermarked", "mlp_accuracy", "mlp_auc",
                "logistic_accuracy", "judger_pct_unwatermarked"]
        md += ["## Strength sweep", ""] + _table(rows, cols) + [""]
        _write_csv(workdir / "sweep.csv", rows, cols)
    else:
        summary["missing"].append("sweep")

    if include_timing:
        t = read_jsonl(workdir / "timings.jsonl")
        if t:
            u = statistics.fmean(r["unwatermarked_seconds"] for r in t)
            w = statistics.fmean(r["watermarked_seconds"] for r in t)
            summary["timing"] = {"mean_unwatermarked_seconds": u, "mean_watermarked_seconds": w,
                                 "ratio": w / u if u > 0 else None}
            md += ["## Wall time per completion", ""] + _table(
                [summary["timing"]], ["mean_unwatermarked_seconds", "mean_watermarked_seconds",
                                      "ratio"]) + [""]

    if summary["missing"]:
        md += ["## Missing inputs", ""] + [f"- {s}" for s in summary["missing"]] + [""]
    (workdir / "report.md").write_text("\n".join(md), encoding="utf-8")
    write_json(workdir / "summary.json", summary)
    return summary
