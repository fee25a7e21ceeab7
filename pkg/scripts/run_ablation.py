"""Run the evaluation set under the four flag variants and tabulate the results.

With a chat endpoint configured (TABLERAG_ENDPOINT, TABLERAG_MODEL, TABLERAG_API_KEY) every
variant talks to the live model and the accuracy columns are meaningful. Without one, the
decomposer's moves are replayed from the bundled transcript and the other prompt kinds get
stub replies: accuracy is then not informative, but the path columns (SQL calls, compose
prompts carrying retrieved text, iterations) show what each flag switches off.

    python scripts/run_ablation.py [--store DIR] [--workers N] [--out ablation.json]
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from tablerag import DATA_DIR
from tablerag.config import load_config
from tablerag.evaluation import load_dataset, run_eval
from tablerag.llm import TOOL_NAME, Gateway, HttpChatProvider, classify_prompt, load_transcript
from tablerag.pipeline import build, load_reasoner
from tablerag.reasoner import AblationFlags

VARIANTS = {
    "full": AblationFlags(),
    "no_context_decomposition": AblationFlags(no_context_decomposition=True),
    "no_sql": AblationFlags(no_sql=True),
    "no_text_retrieval": AblationFlags(no_text_retrieval=True),
}


class CountingSql:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def execute_readonly(self, req):
        self.calls += 1
        return self.inner.execute_readonly(req)


class OfflineFollower:
    """Replays recorded decomposer moves; answers SQL, compose and judge prompts with stubs."""

    def __init__(self, steps):
        self.moves = [s for s in steps if s.kind == "decompose"]
        self.sql = [s.content for s in steps if s.kind == "nl2sql"]
        self.judge = [s.content for s in steps if s.kind == "judge"]

    def complete(self, config, messages, tools):
        kind = classify_prompt(messages)
        msg = {"role": "assistant", "content": None}
        if kind == "decompose":
            step = self.moves.pop(0) if self.moves else None
            if step is None:
                msg["content"] = "<Answer>: (no recorded move)"
            elif step.tool_call is not None:
                msg["tool_calls"] = [{"id": f"call_{len(self.moves)}", "type": "function",
                                      "function": {"name": TOOL_NAME, "arguments": json.dumps(step.tool_call)}}]
            else:
                msg["content"] = step.content
        elif kind == "nl2sql":
            msg["content"] = self.sql.pop(0) if self.sql else "SELECT 1"
        elif kind == "compose":
            msg["content"] = "(stub intermediate answer)"
        else:
            msg["content"] = self.judge.pop(0) if self.judge else "Rating: [[0]]"
        return {"choices": [{"message": msg}]}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--store", help="built store (default: build the mini corpus into a temp dir)")
    ap.add_argument("--dataset", default=str(DATA_DIR / "golden" / "eval_dataset.jsonl"))
    ap.add_argument("--transcript", default=str(DATA_DIR / "golden" / "eval_transcript.jsonl"))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="write the table as JSON here")
    args = ap.parse_args(argv)

    tmp = None
    store = args.store
    if store is None:
        tmp = tempfile.TemporaryDirectory()
        store = tmp.name
        build(DATA_DIR / "mini_corpus", load_config(overrides={"out_dir": store}))
    cfg = load_config(overrides={"out_dir": store})
    live = bool(cfg.provider("main").endpoint)
    dataset = load_dataset(args.dataset)
    steps = load_transcript(args.transcript)

    rows = []
    for name, flags in VARIANTS.items():
        reasoner, db = load_reasoner(cfg)
        counter = CountingSql(reasoner.sql)
        reasoner.sql = counter

        def factory(record):
            if live:
                return Gateway(HttpChatProvider(), cfg.provider("main")), Gateway(HttpChatProvider(), cfg.provider("judge"))
            p = OfflineFollower([s for s in steps if s.record == record.id])
            return Gateway(p), Gateway(p)

        report = run_eval(dataset, reasoner, factory, flags, args.workers)
        db.close()
        compose_with_text = sum(
            1 for r in report.records for it in r.trace.iterations if it.retrieval.rerank_hits)
        rows.append({
            "variant": name,
            "accuracy": report.accuracy_overall,
            "single": report.accuracy_single_source,
            "multi": report.accuracy_multi_source,
            "iterations": sum(r.iterations for r in report.records),
            "sql_calls": counter.calls,
            "compose_with_retrieved_text": compose_with_text,
        })

    mode = "live" if live else "offline (accuracy not meaningful)"
    print(f"mode: {mode}")
    header = list(rows[0])
    print("  ".join(f"{h:>26}" if i == 0 else f"{h:>12}" for i, h in enumerate(header)))
    for row in rows:
        print("  ".join(f"{row[h]:>26}" if i == 0 else
                        (f"{row[h]:>12.3f}" if isinstance(row[h], float) else f"{row[h]:>12}")
                        for i, h in enumerate(header)))
    if args.out:
        Path(args.out).write_text(json.dumps({"mode": mode, "rows": rows}, indent=2) + "\n", encoding="utf-8")
    if tmp is not None:
        tmp.cleanup()
    return 0


if __name__ == "__main__":
    sys.exit(main())
