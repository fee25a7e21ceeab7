"""The online loop: decompose, retrieve, optionally program-and-execute SQL, compose."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

from . import prompts
from .corpus import CorpusStore, TableSchema
from .llm import (
    SOLVE_SUBQUERY,
    ChatMessage,
    Gateway,
    GatewayError,
    MalformedResponse,
    RecordingProvider,
    ScriptedProvider,
    ScriptStep,
    TransportError,
)
from .retrieval import RetrievalHit, RetrievalSet, Retriever
from .tablestore import SqlExecRequest, SqlExecResult, serialize_result

logger = logging.getLogger(__name__)

ANSWERED = "answered"
MAX_ITERATIONS_EXCEEDED = "max_iterations_exceeded"
REFUSED = "refused"
TRANSPORT_FAILED = "transport_failed"


class SqlExecutor(Protocol):
    def execute_readonly(self, req: SqlExecRequest) -> SqlExecResult:
        ...


@dataclass(frozen=True)
class AblationFlags:
    no_context_decomposition: bool = False
    no_sql: bool = False
    no_text_retrieval: bool = False

    def __post_init__(self):
        if self.no_sql and self.no_text_retrieval:
            raise ValueError("no_sql and no_text_retrieval cannot both be set")

    def to_dict(self) -> dict:
        return {
            "no_context_decomposition": self.no_context_decomposition,
            "no_sql": self.no_sql,
            "no_text_retrieval": self.no_text_retrieval,
        }


@dataclass(frozen=True)
class ReasonerParams:
    max_iterations: int = 5
    sql_timeout: float = 5.0
    max_rows: int = 100

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SubQuery:
    index: int
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("subquery text must be non-empty")


@dataclass(frozen=True)
class Subquery:
    text: str


@dataclass(frozen=True)
class Final:
    answer: str


@dataclass(frozen=True)
class Refused:
    reason: str


@dataclass
class IterationRecord:
    subquery: SubQuery
    retrieval: RetrievalSet
    schemas: list[TableSchema]
    answer: str
    sql: str | None = None
    exec_result: SqlExecResult | None = None
    nl2sql_prompt: str | None = None
    compose_prompt: str = ""

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "subquery": {"index": self.subquery.index, "text": self.subquery.text},
            "retrieval": self.retrieval.to_dict(),
            "schemas": [s.to_dict() for s in self.schemas],
        }
        if self.sql is not None:  # SQL keys appear only when the SQL path ran
            d["nl2sql_prompt"] = self.nl2sql_prompt
            d["sql"] = self.sql
            d["exec_result"] = None if self.exec_result is None else self.exec_result.to_dict(timings)
        d["compose_prompt"] = self.compose_prompt
        d["answer"] = self.answer
        return d


@dataclass
class Trace:
    query: str
    flags: AblationFlags = field(default_factory=AblationFlags)
    seed_table_content: str = ""
    seed_schema: TableSchema | None = None
    iterations: list[IterationRecord] = field(default_factory=list)
    final_answer: str | None = None
    status: str = TRANSPORT_FAILED
    protocol_violations: int = 0
    error: str | None = None
    messages: list[ChatMessage] = field(default_factory=list)
    llm_log: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def sql_errors(self) -> int:
        return sum(1 for it in self.iterations if it.exec_result is not None and not it.exec_result.ok)

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "query": self.query,
            "flags": self.flags.to_dict(),
            "seed_table_content": self.seed_table_content,
            "seed_schema": None if self.seed_schema is None else self.seed_schema.to_dict(),
            "iterations": [it.to_dict(timings) for it in self.iterations],
            "final_answer": self.final_answer,
            "status": self.status,
            "protocol_violations": self.protocol_violations,
            "error": self.error,
            "messages": [m.to_dict() for m in self.messages],
            "llm_log": self.llm_log,
        }
        if timings:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), ensure_ascii=False, indent=2, sort_keys=False)


def transcript_from_trace(trace: dict) -> list[ScriptStep]:
    """Scripted steps that reproduce every model response recorded in a trace."""
    return [ScriptStep(kind=e["kind"], raw=e["response"]) for e in trace["llm_log"]]


def dedupe_schemas(schemas) -> list[TableSchema]:
    out: list[TableSchema] = []
    seen = set()
    for s in schemas:
        if s is not None and s.table_name not in seen:
            seen.add(s.table_name)
            out.append(s)
    return out


def schema_set(hits: list[RetrievalHit], store: CorpusStore) -> list[TableSchema]:
    """Image of the reranked hits under the chunk->schema map, deduplicated, in hit order."""
    return dedupe_schemas(store.schema_for_chunk(h.chunk_id) for h in hits)


@dataclass
class Reasoner:
    """Answers questions over a built corpus; safe to share across threads, one trace per ``run``."""

    store: CorpusStore
    retriever: Retriever
    sql: SqlExecutor
    params: ReasonerParams = field(default_factory=ReasonerParams)

    # ------------------------------------------------------------ steps

    def seed_context(self, query: str, flags: AblationFlags = AblationFlags()) -> tuple[str, TableSchema | None]:
        if flags.no_context_decomposition:
            return "", None
        hits = self.retriever.retrieve(query).rerank_hits
        for h in hits:
            schema = self.store.schema_for_chunk(h.chunk_id)
            if schema is not None:
                return self.retriever.text(h.chunk_id), schema
        if hits:
            return self.retriever.text(hits[0].chunk_id), None
        return "", None

    def decompose_step(self, messages: list[ChatMessage], gateway: Gateway, trace: Trace):
        """One decomposition turn: Subquery, Final, or Refused after a repeated format violation."""
        for attempt in range(2):
            try:
                reply = gateway.chat(messages, [SOLVE_SUBQUERY])
            except MalformedResponse as exc:
                reply, problem = None, str(exc)
            else:
                problem = None
                if reply.tool_call is not None:
                    text = reply.tool_call.arguments.get("subquery", "").strip()
                    if text:
                        messages.append(reply)
                        return Subquery(text)
                    problem = "empty subquery"
                else:
                    answer = prompts.parse_answer(reply.content)
                    if answer:
                        messages.append(reply)
                        return Final(answer)
                    problem = "missing answer marker"
            trace.protocol_violations += 1
            logger.info("protocol violation (%s), attempt %d", problem, attempt + 1)
            if attempt == 0:
                if reply is not None:
                    messages.append(ChatMessage("assistant", reply.content))
                messages.append(ChatMessage("user", prompts.FORMAT_REMINDER))
        return Refused(problem)

    def solve_subquery(self, sub: SubQuery, gateway: Gateway, flags: AblationFlags,
                       seed_schema: TableSchema | None = None) -> IterationRecord:
        if flags.no_text_retrieval:
            retrieval = RetrievalSet(sub.text)
            schemas = dedupe_schemas([seed_schema])
        else:
            retrieval = self.retriever.retrieve(sub.text)
            schemas = schema_set(retrieval.rerank_hits, self.store)

        sql = result = nl2sql_prompt = None
        if schemas and not flags.no_sql:
            msgs = prompts.nl2sql_messages(sub.text, schemas)
            nl2sql_prompt = _render(msgs)
            try:
                sql = prompts.extract_sql(gateway.chat(msgs).content)
            except MalformedResponse as exc:
                sql = ""
                result = SqlExecResult.error(f"SQL generation failed: {exc}")
            if result is None:
                if sql:
                    result = self.sql.execute_readonly(
                        SqlExecRequest(sql, self.params.sql_timeout, self.params.max_rows))
                else:
                    result = SqlExecResult.error("empty SQL")

        if flags.no_text_retrieval:
            docs = prompts.TEXT_RETRIEVAL_DISABLED
        elif retrieval.rerank_hits:
            docs = "\n\n".join(self.retriever.text(h.chunk_id) for h in retrieval.rerank_hits)
        else:
            docs = prompts.NO_EVIDENCE
        if sql is None:
            msgs = prompts.compose_messages(sub.text, docs)
        else:
            msgs = prompts.compose_messages(sub.text, docs, schemas, sql, serialize_result(result))
        try:
            answer = gateway.chat(msgs).content.strip()
        except MalformedResponse as exc:
            answer = ""
            logger.warning("compose reply malformed: %s", exc)
        if not answer:
            answer = "(no intermediate answer produced)"
        return IterationRecord(sub, retrieval, schemas, answer, sql, result, nl2sql_prompt, _render(msgs))

    # ------------------------------------------------------------ loop

    def run(self, query: str, gateway: Gateway, flags: AblationFlags = AblationFlags()) -> Trace:
        start = time.monotonic()
        recorder = RecordingProvider(gateway.provider)
        gw = Gateway(recorder, gateway.config, gateway.sleep, gateway.backoff_base)
        trace = Trace(query, flags)
        try:
            trace.seed_table_content, trace.seed_schema = self.seed_context(query, flags)
            trace.messages = prompts.decompose_messages(query, trace.seed_table_content, trace.seed_schema)
            while True:
                action = self.decompose_step(trace.messages, gw, trace)
                if isinstance(action, Final):
                    trace.final_answer, trace.status = action.answer, ANSWERED
                    break
                if isinstance(action, Refused):
                    trace.status, trace.error = REFUSED, action.reason
                    break
                if len(trace.iterations) >= self.params.max_iterations:
                    trace.status = MAX_ITERATIONS_EXCEEDED
                    break
                sub = SubQuery(len(trace.iterations) + 1, action.text)
                record = self.solve_subquery(sub, gw, flags, trace.seed_schema)
                trace.iterations.append(record)
                call_id = trace.messages[-1].tool_call.id
                trace.messages.append(ChatMessage("tool", record.answer, tool_call_id=call_id))
        except TransportError as exc:
            trace.status, trace.error = TRANSPORT_FAILED, f"transport: {exc}"
        except GatewayError as exc:
            trace.status, trace.error = TRANSPORT_FAILED, f"{type(exc).__name__}: {exc}"
        trace.llm_log = [{"kind": k, "response": body} for k, body in recorder.exchanges]
        trace.wall_time = time.monotonic() - start
        return trace

    def replay(self, trace: dict) -> Trace:
        """Re-run a recorded trace against its own logged model responses."""
        flags = AblationFlags(**trace["flags"])
        gateway = Gateway(ScriptedProvider(transcript_from_trace(trace)))
        return self.run(trace["query"], gateway, flags)


def _render(messages: list[ChatMessage]) -> str:
    return "\n\n".join(f"[{m.role}]\n{m.content}" for m in messages)
