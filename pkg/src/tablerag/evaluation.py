"""Dataset loading, LLM-as-judge scoring, iteration buckets and error categories."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import prompts
from .llm import ChatMessage, Gateway, GatewayError
from .reasoner import (
    ANSWERED,
    MAX_ITERATIONS_EXCEEDED,
    REFUSED,
    TRANSPORT_FAILED,
    AblationFlags,
    Reasoner,
    Trace,
)

logger = logging.getLogger(__name__)

UNANSWERED = "[UNANSWERED]"
SINGLE, MULTI = "single-source", "multi-source"

BUCKETS = ("<3", "3-4", "5", ">5/unfinished")
BUCKET_NOTE = (
    "Iteration buckets: <3 = 1-2 (or 0) iterations, 3-4, exactly 5, >5/unfinished = any trace "
    "that did not finish with an answer. The '3-5 steps' group and the 'exactly 5' group overlap "
    "as usually reported; here 3-4 and 5 are kept disjoint so buckets partition the dataset."
)
REASONING_FAILURE, TASK_INCOMPLETION = "reasoning_failure", "task_incompletion"


class DatasetError(Exception):
    pass


class SchemaViolation(DatasetError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class MissingReference(DatasetError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    gold_answer: str
    table_refs: tuple[str, ...] = ()
    doc_refs: tuple[str, ...] = ()
    sql_query: str | None = None
    sql: str | None = None
    sql_ans: str | None = None

    @property
    def source_kind(self) -> str:
        return MULTI if self.doc_refs else SINGLE


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value] if value else []
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return value
    raise ValueError("expected a string or list of strings")


def _find(root: Path, name: str) -> bool:
    if (root / name).exists():
        return True
    stem = Path(name).stem if Path(name).suffix else name
    return any(root.rglob(f"{stem}.*"))


def load_dataset(path: str | Path, corpus_root: str | Path | None = None) -> list[DatasetRecord]:
    records = []
    seen = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(path, lineno, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise SchemaViolation(path, lineno, "record must be an object")
        for key in ("id", "question", "answer"):
            if not isinstance(obj.get(key), str) or not obj[key].strip():
                raise SchemaViolation(path, lineno, f"missing or empty {key!r}")
        if obj["id"] in seen:
            raise SchemaViolation(path, lineno, f"duplicate id {obj['id']!r}")
        seen.add(obj["id"])
        try:
            tables, docs = _as_list(obj.get("table")), _as_list(obj.get("docs"))
        except ValueError as exc:
            raise SchemaViolation(path, lineno, str(exc)) from exc
        records.append(DatasetRecord(
            obj["id"], obj["question"], obj["answer"], tuple(tables), tuple(docs),
            obj.get("sql_query"), obj.get("sql"), obj.get("sql_ans"),
        ))
    if corpus_root is not None:
        root = Path(corpus_root)
        for rec in records:
            for ref in rec.table_refs + rec.doc_refs:
                if not _find(root, ref):
                    raise MissingReference(f"record {rec.id}: {ref!r} not found under {root}")
    return records


@dataclass
class JudgeVerdict:
    score: int
    raw_response: str

    def to_dict(self) -> dict:
        return {"score": self.score, "raw_response": self.raw_response}


def judge(question: str, gold: str, predicted: str, gateway: Gateway) -> JudgeVerdict:
    if predicted == UNANSWERED:
        return JudgeVerdict(0, "")
    messages = prompts.judge_messages(question, gold, predicted)
    raw = []
    for attempt in range(2):
        reply = gateway.chat(messages)
        raw.append(reply.content)
        score = prompts.parse_rating(reply.content)
        if score is not None:
            return JudgeVerdict(score, "\n---\n".join(raw))
        if attempt == 0:
            messages = messages + [ChatMessage("assistant", reply.content),
                                   ChatMessage("user", prompts.JUDGE_REMINDER)]
    return JudgeVerdict(0, "\n---\n".join(raw))


def iteration_bucket(trace: Trace) -> str:
    if trace.status != ANSWERED:
        return ">5/unfinished"
    n = len(trace.iterations)
    if n < 3:
        return "<3"
    if n < 5:
        return "3-4"
    if n == 5:
        return "5"
    return ">5/unfinished"


def error_category(trace: Trace, score: int) -> str | None:
    if trace.status in (REFUSED, MAX_ITERATIONS_EXCEEDED, TRANSPORT_FAILED):
        return TASK_INCOMPLETION
    if trace.status == ANSWERED and score == 0 and (trace.sql_errors or trace.protocol_violations):
        return REASONING_FAILURE
    return None


@dataclass
class RecordResult:
    id: str
    source_kind: str
    status: str
    iterations: int
    bucket: str
    predicted: str
    verdict: JudgeVerdict
    category: str | None
    trace: Trace | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_kind": self.source_kind,
            "status": self.status,
            "iterations": self.iterations,
            "bucket": self.bucket,
            "predicted": self.predicted,
            "verdict": self.verdict.to_dict(),
            "category": self.category,
        }


@dataclass
class EvalReport:
    records: list[RecordResult] = field(default_factory=list)
    flags: AblationFlags = field(default_factory=AblationFlags)

    def _accuracy(self, kind: str | None = None) -> float:
        scores = [r.verdict.score for r in self.records if kind is None or r.source_kind == kind]
        return sum(scores) / len(scores) if scores else 0.0

    @property
    def accuracy_overall(self) -> float:
        return self._accuracy()

    @property
    def accuracy_single_source(self) -> float:
        return self._accuracy(SINGLE)

    @property
    def accuracy_multi_source(self) -> float:
        return self._accuracy(MULTI)

    @property
    def iteration_buckets(self) -> dict[str, int]:
        counts = dict.fromkeys(BUCKETS, 0)
        for r in self.records:
            counts[r.bucket] += 1
        return counts

    @property
    def error_categories(self) -> dict[str, int]:
        counts = {REASONING_FAILURE: 0, TASK_INCOMPLETION: 0}
        for r in self.records:
            if r.category:
                counts[r.category] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "note": BUCKET_NOTE,
            "flags": self.flags.to_dict(),
            "size": len(self.records),
            "accuracy_overall": self.accuracy_overall,
            "accuracy_single_source": self.accuracy_single_source,
            "accuracy_multi_source": self.accuracy_multi_source,
            "iteration_buckets": self.iteration_buckets,
            "error_categories": self.error_categories,
            "records": [r.to_dict() for r in self.records],
        }

    def summary(self) -> str:
        n_single = sum(r.source_kind == SINGLE for r in self.records)
        lines = [
            "# " + BUCKET_NOTE,
            f"records: {len(self.records)} (single-source {n_single}, multi-source {len(self.records) - n_single})",
            f"accuracy overall: {self.accuracy_overall:.4f}",
            f"accuracy single-source: {self.accuracy_single_source:.4f}",
            f"accuracy multi-source: {self.accuracy_multi_source:.4f}",
            "iteration buckets: " + ", ".join(f"{k}={v}" for k, v in self.iteration_buckets.items()),
            "error categories: " + ", ".join(f"{k}={v}" for k, v in self.error_categories.items()),
        ]
        return "\n".join(lines)


GatewayFactory = Callable[[DatasetRecord], tuple[Gateway, Gateway]]


def evaluate_record(record: DatasetRecord, reasoner: Reasoner, factory: GatewayFactory,
                    flags: AblationFlags) -> RecordResult:
    main_gw, judge_gw = factory(record)
    try:
        trace = reasoner.run(record.question, main_gw, flags)
    except Exception as exc:  # a crashed record must not abort the run
        logger.exception("record %s crashed", record.id)
        trace = Trace(record.question, flags, status=TRANSPORT_FAILED, error=f"{type(exc).__name__}: {exc}")
    predicted = trace.final_answer if trace.status == ANSWERED else UNANSWERED
    try:
        verdict = judge(record.question, record.gold_answer, predicted, judge_gw)
    except GatewayError as exc:
        verdict = JudgeVerdict(0, f"judge failed: {exc}")
    return RecordResult(
        record.id, record.source_kind, trace.status, len(trace.iterations), iteration_bucket(trace),
        predicted, verdict, error_category(trace, verdict.score), trace,
    )


def run_eval(dataset: list[DatasetRecord], reasoner: Reasoner, factory: GatewayFactory,
             flags: AblationFlags = AblationFlags(), workers: int = 1) -> EvalReport:
    if workers <= 1:
        results = [evaluate_record(r, reasoner, factory, flags) for r in dataset]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: evaluate_record(r, reasoner, factory, flags), dataset))
    return EvalReport(results, flags)


def write_report(report: EvalReport, out_dir: str | Path, traces: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
                                     encoding="utf-8")
    (out / "summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
    if traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for r in report.records:
            if r.trace is not None:
                (tdir / f"{r.id}.json").write_text(r.trace.to_json() + "\n", encoding="utf-8")
