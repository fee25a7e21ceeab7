from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from tablerag import prompts
from tablerag.llm import (
    SOLVE_SUBQUERY,
    TOOL_NAME,
    ChatMessage,
    Gateway,
    HttpChatProvider,
    HttpEmbedder,
    MalformedResponse,
    ProviderConfig,
    RecordingProvider,
    ScriptedProvider,
    ScriptExhausted,
    ScriptStep,
    ToolCall,
    TranscriptMismatch,
    TransportError,
    UnknownPromptKind,
    classify_prompt,
    dump_transcript,
    load_transcript,
    parse_response,
)

from helpers import body


def test_parse_plain_content():
    msg = parse_response(body("hello"))
    assert msg.role == "assistant" and msg.content == "hello" and msg.tool_call is None


def test_parse_tool_call():
    msg = parse_response(body(subquery="who?", call_id="abc"))
    assert msg.tool_call == ToolCall("abc", TOOL_NAME, {"subquery": "who?"})


def test_parse_tool_call_with_content_is_allowed():
    msg = parse_response(body("thinking", subquery="who?"))
    assert msg.content == "thinking" and msg.tool_call is not None


@pytest.mark.parametrize(
    "bad",
    [
        {},
        {"choices": []},
        body(None),
        body("   "),
        {"choices": [{"message": {"content": None, "tool_calls": [
            {"id": "1", "function": {"name": TOOL_NAME, "arguments": '{"subquery": "a"}'}},
            {"id": "2", "function": {"name": TOOL_NAME, "arguments": '{"subquery": "b"}'}}]}}]},
        {"choices": [{"message": {"tool_calls": [{"id": "1", "function": {"name": "other", "arguments": "{}"}}]}}]},
        {"choices": [{"message": {"tool_calls": [{"id": "1", "function": {"name": TOOL_NAME, "arguments": "{oops"}}]}}]},
        {"choices": [{"message": {"tool_calls": [{"id": "1", "function": {"name": TOOL_NAME, "arguments": '{"subquery": 3}'}}]}}]},
    ],
)
def test_parse_malformed(bad):
    with pytest.raises(MalformedResponse):
        parse_response(bad)


def test_classify_by_sentinel_and_phrase():
    for kind, msgs in [
        ("decompose", prompts.decompose_messages("q", "", None)),
        ("nl2sql", prompts.nl2sql_messages("q", [])),
        ("compose", prompts.compose_messages("q", "docs")),
        ("judge", prompts.judge_messages("q", "g", "p")),
    ]:
        assert classify_prompt(msgs) == kind
        stripped = msgs[0].content.split("\n", 1)[1]
        assert classify_prompt([ChatMessage("system", stripped)] + msgs[1:]) == kind


def test_classify_unknown():
    with pytest.raises(UnknownPromptKind):
        classify_prompt([ChatMessage("user", "hi")])
    with pytest.raises(UnknownPromptKind):
        classify_prompt([ChatMessage("system", "### tablerag: poetry")])


def test_message_validation():
    with pytest.raises(ValueError):
        ChatMessage("robot", "x")
    with pytest.raises(ValueError):
        ChatMessage("tool", "x")
    with pytest.raises(ValueError):
        ChatMessage("user", "x", ToolCall("1", TOOL_NAME, {}))
    wire = ChatMessage("assistant", "", ToolCall("1", TOOL_NAME, {"subquery": "s"})).to_wire()
    assert json.loads(wire["tool_calls"][0]["function"]["arguments"]) == {"subquery": "s"}
    assert ChatMessage("tool", "ans", tool_call_id="1").to_wire()["tool_call_id"] == "1"


def test_tool_spec_wire():
    wire = SOLVE_SUBQUERY.to_wire()
    assert wire["function"]["name"] == "solve_subquery"
    assert wire["function"]["parameters"]["required"] == ["subquery"]


class Flaky:
    def __init__(self, failures, error=TransportError):
        self.failures = failures
        self.error = error
        self.calls = 0

    def complete(self, config, messages, tools):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.error("down")
        return body("ok")


USER = [ChatMessage("user", "hi")]


def test_gateway_retries_with_exponential_backoff():
    sleeps = []
    provider = Flaky(3)
    msg = Gateway(provider, ProviderConfig(max_retries=3), sleeps.append).chat(USER)
    assert msg.content == "ok" and provider.calls == 4
    assert sleeps == [1.0, 2.0, 4.0]


def test_gateway_gives_up_after_max_retries():
    sleeps = []
    provider = Flaky(10)
    with pytest.raises(TransportError):
        Gateway(provider, ProviderConfig(max_retries=2), sleeps.append).chat(USER)
    assert provider.calls == 3 and sleeps == [1.0, 2.0]


def test_gateway_does_not_retry_exhaustion():
    provider = ScriptedProvider([])
    with pytest.raises(ScriptExhausted):
        Gateway(provider, sleep=lambda s: pytest.fail("slept")).chat(prompts.judge_messages("q", "g", "p"))


def test_gateway_rejects_bad_message_lists():
    gw = Gateway(Flaky(0))
    with pytest.raises(ValueError):
        gw.chat([])
    with pytest.raises(ValueError):
        gw.chat([ChatMessage("assistant", "x")])


def test_scripted_provider_order_and_mismatch():
    steps = [ScriptStep("nl2sql", "```sql\nSELECT 1\n```"), ScriptStep("compose", "done")]
    provider = ScriptedProvider(steps)
    gw = Gateway(provider)
    assert gw.chat(prompts.nl2sql_messages("q", [])).content.startswith("```sql")
    with pytest.raises(TranscriptMismatch):
        gw.chat(prompts.judge_messages("q", "g", "p"))
    assert gw.chat(prompts.compose_messages("q", "d")).content == "done"
    assert provider.remaining == 0
    with pytest.raises(ScriptExhausted):
        gw.chat(prompts.compose_messages("q", "d"))


def test_scripted_raw_body_and_record_filter():
    raw = body("raw reply")
    steps = [ScriptStep("judge", "a", record="r1"), ScriptStep("judge", raw=raw, record="r2"), ScriptStep("judge", "c")]
    p = ScriptedProvider(steps).for_record("r2")
    assert p.remaining == 2
    assert Gateway(p).chat(prompts.judge_messages("q", "g", "p")).content == "raw reply"


def test_transcript_round_trip(tmp_path):
    steps = [ScriptStep("decompose", tool_call={"subquery": "é?"}, record="r"),
             ScriptStep("compose", "x"), ScriptStep("judge", raw=body("Rating: [[1]]"))]
    dump_transcript(steps, tmp_path / "t.jsonl")
    assert load_transcript(tmp_path / "t.jsonl") == steps


def test_transcript_rejects_unknown_kind(tmp_path):
    (tmp_path / "t.jsonl").write_text('{"kind": "poem"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match="t.jsonl:1"):
        load_transcript(tmp_path / "t.jsonl")


def test_recording_provider_keeps_bodies():
    rec = RecordingProvider(ScriptedProvider([ScriptStep("judge", "Rating: [[0]]")]))
    Gateway(rec).chat(prompts.judge_messages("q", "g", "p"))
    assert rec.exchanges[0][0] == "judge"
    assert rec.exchanges[0][1]["choices"][0]["message"]["content"] == "Rating: [[0]]"


# ---------------------------------------------------------------- HTTP


class _Handler(BaseHTTPRequestHandler):
    plan: list = []
    seen: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        type(self).seen.append((self.path, dict(self.headers), payload))
        status, reply = type(self).plan.pop(0)
        data = json.dumps(reply).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.plan, _Handler.seen = [], []
    httpd = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{httpd.server_port}", _Handler
    httpd.shutdown()
    httpd.server_close()


def test_http_chat_wire_format_and_retry(server, monkeypatch):
    url, handler = server
    monkeypatch.setenv("TABLERAG_API_KEY", "secret")
    handler.plan = [(503, {"error": "busy"}), (200, body(subquery="next?"))]
    cfg = ProviderConfig(endpoint=url + "/v1/chat/completions", model="m", max_retries=1)
    sleeps = []
    msg = Gateway(HttpChatProvider(), cfg, sleeps.append).chat(
        prompts.decompose_messages("q", "", None), [SOLVE_SUBQUERY])
    assert msg.tool_call.arguments == {"subquery": "next?"}
    assert sleeps == [1.0]
    path, headers, payload = handler.seen[-1]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer secret"
    assert payload["model"] == "m" and payload["temperature"] == 0.0
    assert payload["tools"][0]["function"]["name"] == TOOL_NAME
    assert payload["messages"][0]["role"] == "system"


def test_http_client_error_not_retried(server):
    url, handler = server
    handler.plan = [(400, {"error": "bad"})]
    with pytest.raises(TransportError) as info:
        Gateway(HttpChatProvider(), ProviderConfig(endpoint=url), lambda s: pytest.fail("slept")).chat(USER)
    assert not info.value.retryable


def test_http_without_endpoint_fails_fast():
    with pytest.raises(TransportError):
        Gateway(HttpChatProvider(), ProviderConfig(), lambda s: pytest.fail("slept")).chat(USER)


def test_http_embedder(server):
    url, handler = server
    handler.plan = [(200, {"vectors": [[1.0, 0.0], [0.0, 1.0]]})]
    vecs = HttpEmbedder(ProviderConfig(endpoint=url)).embed(["a", "b"])
    assert vecs.shape == (2, 2)
    assert handler.seen[-1][2] == {"texts": ["a", "b"]}
