"""Test doubles shared across test modules."""

from __future__ import annotations

import json

from tablerag.llm import TOOL_NAME, ScriptStep, classify_prompt


def body(content: str | None = None, subquery: str | None = None, call_id: str = "call_0") -> dict:
    message = {"role": "assistant", "content": content}
    if subquery is not None:
        message["tool_calls"] = [{"id": call_id, "type": "function",
                                  "function": {"name": TOOL_NAME, "arguments": json.dumps({"subquery": subquery})}}]
    return {"choices": [{"message": message}]}


class CountingSql:
    """SQL seam that counts calls before delegating."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.requests = []

    def execute_readonly(self, req):
        self.calls += 1
        self.requests.append(req)
        return self.inner.execute_readonly(req)


class EndlessProvider:
    """Always asks for another subquery; answers the other prompt kinds generically."""

    def __init__(self):
        self.n = 0

    def complete(self, config, messages, tools):
        kind = classify_prompt(messages)
        self.n += 1
        if kind == "decompose":
            return body(subquery=f"List the comedy films in the List of Australian films of 2012 ({self.n})",
                        call_id=f"call_{self.n}")
        if kind == "nl2sql":
            return body("```sql\nSELECT Title FROM List_of_Australian_films_of_2012_0\n```")
        if kind == "compose":
            return body("Several comedies.")
        return body("Rating: [[0]]")


class FollowDecomposer:
    """Replays the decompose moves of a transcript while answering other prompts on demand.

    Lets a transcript recorded without ablation drive an ablated run, and records every prompt.
    """

    def __init__(self, steps: list[ScriptStep]):
        self.decompose = [s for s in steps if s.kind == "decompose"]
        self.sql = next((s.content for s in steps if s.kind == "nl2sql"), "SELECT 1")
        self.kinds: list[str] = []
        self.messages: list[list] = []

    def complete(self, config, messages, tools):
        kind = classify_prompt(messages)
        self.kinds.append(kind)
        self.messages.append(list(messages))
        if kind == "decompose":
            step = self.decompose.pop(0)
            if step.tool_call is not None:
                return body(step.content or None, step.tool_call["subquery"], f"call_{len(self.kinds)}")
            return body(step.content)
        if kind == "nl2sql":
            return body(self.sql)
        if kind == "compose":
            return body(f"intermediate answer {self.kinds.count('compose')}")
        return body("Rating: [[1]]")

    def prompts(self, kind: str) -> list[str]:
        return ["\n".join(m.content or "" for m in msgs)
                for k, msgs in zip(self.kinds, self.messages) if k == kind]
