from __future__ import annotations

import json

import pytest

from tablerag import DATA_DIR
from tablerag.corpus import load_corpus_dir
from tablerag.pipeline import in_memory_reasoner

MINI_CORPUS = DATA_DIR / "mini_corpus"
GOLDEN = DATA_DIR / "golden"
GOLDEN_TRANSCRIPT = GOLDEN / "australian_films.jsonl"
GOLDEN_TRACE = GOLDEN / "australian_films.trace.json"
EVAL_DATASET = GOLDEN / "eval_dataset.jsonl"
EVAL_TRANSCRIPT = GOLDEN / "eval_transcript.jsonl"

# Filled by tests/test_acceptance.py; printed at the end of the run.
ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def mini_docs():
    return load_corpus_dir(MINI_CORPUS)


@pytest.fixture
def mini_reasoner(mini_docs):
    docs, tables = mini_docs
    reasoner, db = in_memory_reasoner(docs, csv_tables=tables)
    yield reasoner
    db.close()


@pytest.fixture(scope="session")
def golden_trace_text() -> str:
    return GOLDEN_TRACE.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def golden_query(golden_trace_text) -> str:
    return json.loads(golden_trace_text)["query"]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        outcome, title = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {outcome}  {title}")
