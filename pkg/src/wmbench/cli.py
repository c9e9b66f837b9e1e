"""``wmbench`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl

logger = logging.getLogger("wmbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config(args) -> pl.ExperimentConfig:
    if args.config is None:
        return pl.ExperimentConfig()
    if not Path(args.config).exists():
        raise UsageError(f"config file not found: {args.config}")
    return pl.load_config(args.config)


def _documents(workdir: Path) -> list[pl.Document]:
    docs = pl.load_documents(workdir / "documents.jsonl")
    if not docs:
        raise UsageError(f"no documents in {workdir}; run `wmbench ingest` first")
    return docs


def _pairs(workdir: Path) -> list[pl.GenerationPair]:
    pairs = pl.load_pairs(workdir)
    if not pairs:
        raise UsageError(f"no pairs in {workdir}; run `wmbench generate` first")
    return pairs


def cmd_ingest(args) -> None:
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    paths = list(args.files)
    if args.synthetic:
        paths.append(pl.write_synthetic_corpus(workdir / f"synthetic_{args.tag}.txt",
                                               args.synthetic, args.seed))
    if not paths:
        raise UsageError("nothing to ingest")
    docs = pl.ingest(paths, args.tag, workdir / "documents.jsonl")
    print(f"ingested {len(docs)} documents with tag {args.tag!r}")


def cmd_generate(args) -> None:
    config = _config(args)
    workdir = Path(args.workdir)
    docs = _documents(workdir)
    if args.limit:
        docs = docs[: args.limit]
    pairs = pl.run_generation(config, docs)
    added = pl.save_pairs(pairs, workdir)
    print(f"generated {len(pairs)} pairs ({added} new)")
    if pairs:
        u = sum(p.unwatermarked_seconds for p in pairs) / len(pairs)
        w = sum(p.watermarked_seconds for p in pairs) / len(pairs)
        ratio = f"{w / u:.2f}x" if u > 0 else "n/a"
        print(f"mean wall time per completion: unwatermarked {u:.4f}s, "
              f"watermarked {w:.4f}s ({ratio})")


def cmd_detect(args) -> None:
    config = _config(args)
    workdir = Path(args.workdir)
    rows = pl.run_detection(_pairs(workdir), config)
    pl.write_jsonl(workdir / "detection.jsonl", rows)
    for row in pl.detection_summary(rows):
        print(" ".join(f"{k}={pl._fmt(v)}" for k, v in row.items()))


def cmd_classify(args) -> None:
    config = _config(args)
    workdir = Path(args.workdir)
    run = pl.run_classifier(_pairs(workdir), config)
    pl.save_classifier(run, config, workdir)
    m = run.metrics
    print(f"accuracy={m.accuracy:.4f} auc={m.auc:.4f} "
          f"false_unwatermarked={m.false_unwatermarked_rate:.4f} "
          f"false_watermarked={m.false_watermarked_rate:.4f}")


def cmd_judge(args) -> None:
    config = _config(args)
    workdir = Path(args.workdir)
    run = pl.run_judging(_pairs(workdir), config)
    pl.save_judging(run, workdir)
    for tag, p in run.preferences.items():
        print(f"{tag}: U={p['pct_unwatermarked']}% W={p['pct_watermarked']}% "
              f"T={p['pct_tie']}% (n={p['n']}, unjudgeable={p['unjudgeable']})")


def cmd_report(args) -> None:
    summary = pl.report(args.workdir, include_timing=args.timing)
    print(f"report written to {Path(args.workdir) / 'report.md'}")
    if summary["missing"]:
        print("missing: " + ", ".join(summary["missing"]))


def cmd_sweep(args) -> None:
    config = _config(args)
    workdir = Path(args.workdir)
    docs = _documents(workdir)
    if args.limit:
        docs = docs[: args.limit]
    rows = pl.run_sweep(config, docs, args.deltas)
    pl.write_json(workdir / "sweep.json", rows)
    for r in rows:
        print(" ".join(f"{k}={pl._fmt(v)}" for k, v in r.items()))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wmbench", description="Embed, detect and evaluate LLM watermarks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        p.add_argument("--workdir", "-w", default=".", help="artifact directory")
        if config:
            p.add_argument("--config", "-c", default=None, help="YAML or JSON experiment config")

    p = sub.add_parser("ingest", help="load corpus files as tagged documents")
    p.add_argument("files", nargs="*")
    p.add_argument("--tag", required=True)
    p.add_argument("--synthetic", type=int, default=0, metavar="BYTES",
                   help="also ingest a generated corpus of this many bytes")
    p.add_argument("--seed", type=int, default=0)
    common(p, config=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="produce unwatermarked/watermarked completion pairs")
    p.add_argument("--limit", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run the keyed detection test on every completion")
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("classify", help="train and evaluate the black-box classifier")
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("judge", help="judge pairs with an LLM judger")
    common(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("report", help="render tables and summaries")
    p.add_argument("--timing", action="store_true", help="include wall-time section")
    common(p, config=False)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="soft-watermark strength sweep over delta")
    p.add_argument("--deltas", type=float, nargs="+", default=None)
    p.add_argument("--limit", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"wmbench: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        print(f"wmbench: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
