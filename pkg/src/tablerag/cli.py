"""Command line: build, ask, eval, replay."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .evaluation import DatasetError, load_dataset, run_eval, write_report
from .llm import Gateway, HttpChatProvider, ScriptedProvider, load_transcript
from .pipeline import StoreNotFound, build, load_reasoner
from .reasoner import ANSWERED, TRANSPORT_FAILED, AblationFlags

logger = logging.getLogger("tablerag")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--workers", type=int)
    p.add_argument("--provider-endpoint", help="chat-completions endpoint for the main role")
    p.add_argument("--model")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-sql", action="store_true")
    p.add_argument("--no-text-retrieval", action="store_true")
    p.add_argument("--no-context-decomposition", action="store_true")
    p.add_argument("--scripted", metavar="TRANSCRIPT", help="replay a JSONL transcript instead of a live model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tablerag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build corpus store, vector index and database")
    p.add_argument("corpus_dir")
    p.add_argument("out_dir")
    _add_common(p)

    p = sub.add_parser("ask", help="answer one question and write its trace")
    p.add_argument("question")
    p.add_argument("--store", required=True, help="directory produced by `build`")
    p.add_argument("--trace", help="trace output path (default: <store>/traces/<hash>.json)")
    _add_common(p)
    _add_flags(p)

    p = sub.add_parser("eval", help="evaluate a JSONL dataset")
    p.add_argument("dataset")
    p.add_argument("--store", required=True)
    p.add_argument("--corpus-root", help="check dataset table/doc references against this directory")
    p.add_argument("--report-dir", help="default: <store>/eval")
    _add_common(p)
    _add_flags(p)

    p = sub.add_parser("replay", help="re-run a trace against its recorded model responses")
    p.add_argument("trace")
    p.add_argument("--store", required=True)
    _add_common(p)
    return parser


def _config(args, out_dir: str) -> AppConfig:
    overrides: dict = {"out_dir": out_dir}
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    main = {}
    if getattr(args, "provider_endpoint", None):
        main["endpoint"] = args.provider_endpoint
    if getattr(args, "model", None):
        main["model"] = args.model
    if main:
        overrides["providers"] = {"main": main}
    flags = {}
    for name in ("no_sql", "no_text_retrieval", "no_context_decomposition"):
        if getattr(args, name, False):
            flags[name] = True
    if flags:
        overrides["flags"] = flags
    return load_config(args.config, overrides=overrides)


def cmd_build(args) -> int:
    if not Path(args.corpus_dir).is_dir():
        print(f"corpus directory not found: {args.corpus_dir}", file=sys.stderr)
        return 1
    cfg = _config(args, args.out_dir)
    try:
        store = build(args.corpus_dir, cfg)
    except Exception as exc:
        print(f"build failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    n_docs = len(store.documents)
    if n_docs == 0 and not store.tables:
        print("warning: 0 documents", file=sys.stderr)
    for w in store.warnings:
        print(f"warning: {w.doc_id}:{w.line}: {w.message}", file=sys.stderr)
    print(f"built {args.out_dir}: {n_docs} documents, {len(store.tables)} tables, {len(store.chunks)} chunks")
    return 0


def _gateway(cfg: AppConfig, scripted: ScriptedProvider | None, role: str = "main") -> Gateway:
    if scripted is not None:
        return Gateway(scripted, cfg.provider(role))
    return Gateway(HttpChatProvider(), cfg.provider(role))


def cmd_ask(args) -> int:
    cfg = _config(args, args.store)
    try:
        reasoner, db = load_reasoner(cfg)
    except StoreNotFound:
        print("store not found", file=sys.stderr)
        return 1
    scripted = ScriptedProvider.from_file(args.scripted) if args.scripted else None
    trace = reasoner.run(args.question, _gateway(cfg, scripted), cfg.flags)
    db.close()
    path = Path(args.trace) if args.trace else (
        Path(args.store) / "traces" / (hashlib.sha1(args.question.encode()).hexdigest()[:12] + ".json"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trace.to_json() + "\n", encoding="utf-8")
    if trace.status == ANSWERED:
        print(trace.final_answer)
    else:
        print(f"UNANSWERED ({trace.status})")
    print(f"trace: {path}", file=sys.stderr)
    return 2 if trace.status == TRANSPORT_FAILED else 0


def cmd_eval(args) -> int:
    cfg = _config(args, args.store)
    try:
        dataset = load_dataset(args.dataset, args.corpus_root)
    except (DatasetError, OSError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 1
    try:
        reasoner, db = load_reasoner(cfg)
    except StoreNotFound:
        print("store not found", file=sys.stderr)
        return 1
    if args.scripted:
        steps = load_transcript(args.scripted)

        def factory(record):
            provider = ScriptedProvider(steps).for_record(record.id)
            return _gateway(cfg, provider), _gateway(cfg, provider, "judge")
    else:
        def factory(record):
            return _gateway(cfg, None), _gateway(cfg, None, "judge")

    report = run_eval(dataset, reasoner, factory, cfg.flags, cfg.workers)
    db.close()
    report_dir = Path(args.report_dir) if args.report_dir else Path(args.store) / "eval"
    write_report(report, report_dir)
    print(report.summary())
    return 0


def cmd_replay(args) -> int:
    cfg = _config(args, args.store)
    try:
        reasoner, db = load_reasoner(cfg)
    except StoreNotFound:
        print("store not found", file=sys.stderr)
        return 1
    recorded = json.loads(Path(args.trace).read_text(encoding="utf-8"))
    trace = reasoner.replay(recorded)
    db.close()
    same = trace.final_answer == recorded.get("final_answer") and trace.status == recorded.get("status")
    print(trace.final_answer if trace.status == ANSWERED else f"UNANSWERED ({trace.status})")
    print("replay matches recorded trace" if same else "replay DIFFERS from recorded trace", file=sys.stderr)
    return 0 if same else 3


COMMANDS = {"build": cmd_build, "ask": cmd_ask, "eval": cmd_eval, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValueError as exc:  # invalid configuration
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
