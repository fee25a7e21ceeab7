"""Chat-completion transport with tool calling, and a scripted provider for tests."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

logger = logging.getLogger(__name__)

TOOL_NAME = "solve_subquery"
PROMPT_KINDS = ("decompose", "nl2sql", "compose", "judge")
SENTINEL_PREFIX = "### tablerag:"

# Literal phrases carried by each prompt template; used when no sentinel line is present.
_KIND_PHRASES = (
    ("judge", "Rating: [[score]]"),
    ("compose", "table-based question answering task using the following"),
    ("decompose", "Generate exactly ONE subquery at a time"),
    ("nl2sql", "Write exactly one SQL SELECT statement"),
)


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    def __init__(self, message: str = "", retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class ScriptExhausted(TransportError):
    def __init__(self, message: str = ""):
        super().__init__(message, retryable=False)


class MalformedResponse(GatewayError):
    pass


class UnknownPromptKind(GatewayError):
    pass


class TranscriptMismatch(GatewayError):
    pass


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: dict

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "arguments": self.arguments}


@dataclass
class ChatMessage:
    role: str  # system | user | assistant | tool
    content: str = ""
    tool_call: ToolCall | None = None
    tool_call_id: str | None = None

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant", "tool"):
            raise ValueError(f"bad role {self.role!r}")
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool messages need tool_call_id")
        if self.tool_call is not None and self.role != "assistant":
            raise ValueError("only assistant messages carry tool calls")

    def to_wire(self) -> dict:
        msg: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_call is not None:
            msg["tool_calls"] = [{
                "id": self.tool_call.id,
                "type": "function",
                "function": {"name": self.tool_call.name, "arguments": json.dumps(self.tool_call.arguments)},
            }]
        if self.tool_call_id is not None:
            msg["tool_call_id"] = self.tool_call_id
        return msg

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_call is not None:
            d["tool_call"] = self.tool_call.to_dict()
        if self.tool_call_id is not None:
            d["tool_call_id"] = self.tool_call_id
        return d


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict

    def to_wire(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
                "strict": True,
            },
        }


SOLVE_SUBQUERY = ToolSpec(
    name=TOOL_NAME,
    description="Return answer for the decomposed subquery",
    parameters={
        "type": "object",
        "properties": {"subquery": {"type": "string", "description": "The subquery to be solved"}},
        "required": ["subquery"],
        "additionalProperties": False,
    },
)


@dataclass
class ProviderConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "TABLERAG_API_KEY"
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class ChatProvider(Protocol):
    def complete(self, config: ProviderConfig, messages: list[ChatMessage], tools: list[ToolSpec] | None) -> dict:
        """Return a chat-completions response body."""
        ...


# ---------------------------------------------------------------- prompt routing


def classify_prompt(messages: list[ChatMessage]) -> str:
    if not messages:
        raise UnknownPromptKind("no messages")
    first = messages[0].content
    for line in first.splitlines():
        if line.startswith(SENTINEL_PREFIX):
            kind = line[len(SENTINEL_PREFIX):].strip()
            if kind in PROMPT_KINDS:
                return kind
            raise UnknownPromptKind(kind)
    for kind, phrase in _KIND_PHRASES:
        if phrase in first:
            return kind
    raise UnknownPromptKind(first[:80])


# ---------------------------------------------------------------- response parsing


def parse_response(body: dict) -> ChatMessage:
    """Turn a chat-completions body into one assistant message, enforcing the one-tool protocol."""
    try:
        msg = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no message in response: {exc}") from exc
    content = msg.get("content") or ""
    calls = msg.get("tool_calls") or []
    if len(calls) > 1:
        raise MalformedResponse(f"{len(calls)} tool calls in one response")
    if calls:
        call = calls[0]
        fn = call.get("function") or {}
        name = fn.get("name")
        if name != TOOL_NAME:
            raise MalformedResponse(f"unknown tool {name!r}")
        raw_args = fn.get("arguments") or "{}"
        try:
            args = json.loads(raw_args) if isinstance(raw_args, str) else dict(raw_args)
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad tool arguments: {exc}") from exc
        if not isinstance(args, dict) or not isinstance(args.get("subquery"), str):
            raise MalformedResponse("tool arguments must carry a string 'subquery'")
        return ChatMessage("assistant", content, ToolCall(call.get("id") or "call_0", name, args))
    if not content.strip():
        raise MalformedResponse("response has neither content nor tool call")
    return ChatMessage("assistant", content)


# ---------------------------------------------------------------- gateway


@dataclass
class Gateway:
    """Sends chat requests through a provider: at most ``max_retries + 1`` attempts,
    exponential backoff starting at ``backoff_base`` seconds."""

    provider: ChatProvider
    config: ProviderConfig = field(default_factory=ProviderConfig)
    sleep: Callable[[float], None] = time.sleep
    backoff_base: float = 1.0

    def chat(self, messages: list[ChatMessage], tools: list[ToolSpec] | None = None) -> ChatMessage:
        if not messages:
            raise ValueError("messages must be non-empty")
        if messages[0].role not in ("system", "user"):
            raise ValueError("first message must be system or user")
        attempt = 0
        while True:
            try:
                body = self.provider.complete(self.config, messages, tools)
                break
            except TransportError as exc:
                if not exc.retryable or attempt >= self.config.max_retries:
                    raise
                delay = self.backoff_base * (2 ** attempt)
                logger.warning("transport error (%s); retry %d in %.1fs", exc, attempt + 1, delay)
                self.sleep(delay)
                attempt += 1
        return parse_response(body)


def chat(config: ProviderConfig, messages: list[ChatMessage], tools: list[ToolSpec] | None = None,
         provider: ChatProvider | None = None) -> ChatMessage:
    return Gateway(provider or HttpChatProvider(), config).chat(messages, tools)


# ---------------------------------------------------------------- providers


def _api_key(config: ProviderConfig) -> str | None:
    return os.environ.get(config.api_key_env) if config.api_key_env else None


def _post_json(url: str, payload: dict, config: ProviderConfig) -> dict:
    import httpx

    headers = {"Content-Type": "application/json; charset=utf-8"}
    key = _api_key(config)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    try:
        resp = httpx.post(url, content=json.dumps(payload).encode("utf-8"), headers=headers,
                          timeout=config.timeout)
    except httpx.HTTPError as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code >= 500 or resp.status_code == 429:
        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    if resp.status_code >= 400:
        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
    try:
        return resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"non-JSON response: {exc}") from exc


class HttpChatProvider:
    """Any endpoint speaking the chat-completions wire format."""

    def complete(self, config, messages, tools):
        if not config.endpoint:
            raise TransportError("no chat endpoint configured", retryable=False)
        payload: dict[str, Any] = {
            "model": config.model,
            "temperature": config.temperature,
            "messages": [m.to_wire() for m in messages],
        }
        if tools:
            payload["tools"] = [t.to_wire() for t in tools]
        return _post_json(config.endpoint, payload, config)


class HttpEmbedder:
    """EmbedderPort over HTTP: {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(self, config: ProviderConfig):
        self.config = config

    def embed(self, texts: list[str]) -> np.ndarray:
        body = _post_json(self.config.endpoint, {"texts": texts}, self.config)
        return np.asarray(body["vectors"], dtype=np.float64)


class HttpReranker:
    """RerankerPort over HTTP: {"query", "candidates"} -> {"scores": [...]}."""

    def __init__(self, config: ProviderConfig):
        self.config = config

    def score(self, query: str, candidates: list[str]) -> list[float]:
        body = _post_json(self.config.endpoint, {"query": query, "candidates": candidates}, self.config)
        return [float(s) for s in body["scores"]]


# ---------------------------------------------------------------- scripted provider


@dataclass(frozen=True)
class ScriptStep:
    kind: str
    content: str = ""
    tool_call: dict | None = None  # {"subquery": ...}
    record: str | None = None
    raw: dict | None = None  # verbatim response body, bypassing synthesis

    @classmethod
    def from_dict(cls, obj: dict) -> "ScriptStep":
        kind = obj["kind"]
        if kind not in PROMPT_KINDS:
            raise ValueError(f"unknown step kind {kind!r}")
        return cls(kind, obj.get("content", ""), obj.get("tool_call"), obj.get("record"), obj.get("raw"))

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.record is not None:
            d["record"] = self.record
        if self.raw is not None:
            d["raw"] = self.raw
        if self.tool_call is not None:
            d["tool_call"] = self.tool_call
        if self.content or self.tool_call is None:
            d["content"] = self.content
        return d


def load_transcript(path: str | Path) -> list[ScriptStep]:
    steps = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            steps.append(ScriptStep.from_dict(json.loads(line)))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return steps


def dump_transcript(steps: list[ScriptStep], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in steps:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


class ScriptedProvider:
    """Replays a fixed transcript in order; each request must match the next step's kind.

    Single-session: do not share one instance across concurrent traces; use ``for_record``.
    """

    def __init__(self, steps: list[ScriptStep]):
        self.steps = list(steps)
        self.position = 0
        self.calls: list[tuple[str, list[ChatMessage]]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        return cls(load_transcript(path))

    def for_record(self, record_id: str) -> "ScriptedProvider":
        return ScriptedProvider([s for s in self.steps if s.record in (None, record_id)])

    @property
    def remaining(self) -> int:
        return len(self.steps) - self.position

    def complete(self, config, messages, tools):
        kind = classify_prompt(messages)
        with self._lock:
            if self.position >= len(self.steps):
                raise ScriptExhausted(f"transcript exhausted at {kind} request")
            step = self.steps[self.position]
            if step.kind != kind:
                raise TranscriptMismatch(
                    f"step {self.position}: transcript expects {step.kind!r}, got {kind!r} prompt")
            self.position += 1
            self.calls.append((kind, list(messages)))
        if step.raw is not None:
            return step.raw
        message: dict[str, Any] = {"role": "assistant", "content": step.content or None}
        if step.tool_call is not None:
            message["tool_calls"] = [{
                "id": f"call_{self.position}",
                "type": "function",
                "function": {"name": TOOL_NAME, "arguments": json.dumps(step.tool_call, ensure_ascii=False)},
            }]
        return {"choices": [{"message": message}]}


class RecordingProvider:
    """Wraps a provider and keeps (kind, response body) for every exchange."""

    def __init__(self, inner: ChatProvider):
        self.inner = inner
        self.exchanges: list[tuple[str, dict]] = []

    def complete(self, config, messages, tools):
        body = self.inner.complete(config, messages, tools)
        try:
            kind = classify_prompt(messages)
        except UnknownPromptKind:
            kind = "unknown"
        self.exchanges.append((kind, body))
        return body
