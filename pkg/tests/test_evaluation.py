from __future__ import annotations

import json

import pytest

from tablerag.evaluation import (
    BUCKETS,
    REASONING_FAILURE,
    TASK_INCOMPLETION,
    UNANSWERED,
    MissingReference,
    SchemaViolation,
    error_category,
    iteration_bucket,
    load_dataset,
    run_eval,
    judge,
    write_report,
)
from tablerag.llm import Gateway, ScriptedProvider, ScriptStep, load_transcript
from tablerag.reasoner import ANSWERED, MAX_ITERATIONS_EXCEEDED, REFUSED, AblationFlags, IterationRecord, SubQuery, Trace
from tablerag.retrieval import RetrievalSet
from tablerag.tablestore import SqlExecResult

from conftest import EVAL_DATASET, EVAL_TRANSCRIPT, MINI_CORPUS


def write_jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows), encoding="utf-8")
    return path


def test_load_bundled_dataset():
    records = load_dataset(EVAL_DATASET, MINI_CORPUS)
    assert len(records) == 10
    kinds = [r.source_kind for r in records]
    assert kinds.count("multi-source") == 3
    first = records[0]
    assert first.sql_ans == "Kath & Kimderella" and first.table_refs == ("List_of_Australian_films_of_2012.md",)


@pytest.mark.parametrize(
    "rows, line",
    [
        ([{"id": "a", "question": "q", "answer": "x"}, "{not json"], 2),
        ([{"id": "a", "question": "q"}], 1),
        ([{"id": "a", "question": "q", "answer": "x"}, {"id": "a", "question": "q2", "answer": "y"}], 2),
        ([{"id": "a", "question": "q", "answer": "x", "docs": [1]}], 1),
        (["[1, 2]"], 1),
    ],
)
def test_schema_violations_name_the_line(tmp_path, rows, line):
    path = write_jsonl(tmp_path / "d.jsonl", rows)
    with pytest.raises(SchemaViolation) as info:
        load_dataset(path)
    assert info.value.lineno == line
    assert f"d.jsonl:{line}:" in str(info.value)


def test_missing_reference(tmp_path):
    path = write_jsonl(tmp_path / "d.jsonl", [{"id": "a", "question": "q", "answer": "x", "table": "ghost.md"}])
    with pytest.raises(MissingReference):
        load_dataset(path, MINI_CORPUS)
    assert load_dataset(path)[0].table_refs == ("ghost.md",)


def test_reference_by_stem(tmp_path):
    path = write_jsonl(tmp_path / "d.jsonl", [{"id": "a", "question": "q", "answer": "x", "docs": ["Mental_film"]}])
    assert load_dataset(path, MINI_CORPUS)[0].doc_refs == ("Mental_film",)


def test_unanswered_is_zero_without_judge_call():
    provider = ScriptedProvider([])
    verdict = judge("q", "gold", UNANSWERED, Gateway(provider))
    assert verdict.score == 0 and provider.calls == []


def _trace(status, n, sql_error=False, violations=0):
    t = Trace("q", AblationFlags(), status=status, protocol_violations=violations)
    for i in range(n):
        res = SqlExecResult.error("boom") if sql_error else None
        t.iterations.append(IterationRecord(SubQuery(i + 1, "s"), RetrievalSet("s"), [], "a",
                                            "SELECT 1" if sql_error else None, res))
    return t


@pytest.mark.parametrize(
    "status, n, bucket",
    [(ANSWERED, 0, "<3"), (ANSWERED, 2, "<3"), (ANSWERED, 3, "3-4"), (ANSWERED, 4, "3-4"),
     (ANSWERED, 5, "5"), (MAX_ITERATIONS_EXCEEDED, 5, ">5/unfinished"), (REFUSED, 0, ">5/unfinished")],
)
def test_iteration_bucket(status, n, bucket):
    assert iteration_bucket(_trace(status, n)) == bucket
    assert bucket in BUCKETS


def test_error_categories():
    assert error_category(_trace(MAX_ITERATIONS_EXCEEDED, 5), 0) == TASK_INCOMPLETION
    assert error_category(_trace(REFUSED, 0), 0) == TASK_INCOMPLETION
    assert error_category(_trace(ANSWERED, 1, sql_error=True), 0) == REASONING_FAILURE
    assert error_category(_trace(ANSWERED, 1, violations=1), 0) == REASONING_FAILURE
    assert error_category(_trace(ANSWERED, 1, sql_error=True), 1) is None
    assert error_category(_trace(ANSWERED, 1), 0) is None


def _factory(steps):
    def factory(record):
        p = ScriptedProvider(steps).for_record(record.id)
        return Gateway(p), Gateway(p)
    return factory


def test_report_per_record_outcomes(mini_reasoner):
    report = run_eval(load_dataset(EVAL_DATASET), mini_reasoner, _factory(load_transcript(EVAL_TRANSCRIPT)))
    by_id = {r.id: r for r in report.records}
    assert by_id["r05"].category == REASONING_FAILURE
    assert by_id["r06"].predicted == UNANSWERED and by_id["r06"].verdict.raw_response == ""
    assert by_id["r07"].status == REFUSED
    assert by_id["r09"].verdict.score == 1 and "I think it is correct." in by_id["r09"].verdict.raw_response
    assert by_id["r10"].verdict.score == 0 and by_id["r10"].bucket == "5"
    assert [r.id for r in report.records] == [f"r{i:02d}" for i in range(1, 11)]


def test_crashing_record_does_not_abort(mini_reasoner):
    class Boom:
        def complete(self, *a):
            raise RuntimeError("kaput")

    records = load_dataset(EVAL_DATASET)[:2]
    report = run_eval(records, mini_reasoner, lambda r: (Gateway(Boom()), Gateway(Boom())))
    assert [r.status for r in report.records] == ["transport_failed"] * 2


def test_judge_transport_failure_scores_zero(mini_reasoner):
    class JudgeDown:
        def complete(self, *a):
            from tablerag.llm import TransportError
            raise TransportError("down", retryable=False)

    record = load_dataset(EVAL_DATASET)[1]
    steps = [s for s in load_transcript(EVAL_TRANSCRIPT) if s.record == record.id and s.kind != "judge"]
    report = run_eval([record], mini_reasoner, lambda r: (Gateway(ScriptedProvider(steps)), Gateway(JudgeDown())))
    assert report.records[0].status == ANSWERED and report.records[0].verdict.score == 0
    assert report.records[0].verdict.raw_response.startswith("judge failed")


def test_write_report(tmp_path, mini_reasoner):
    report = run_eval(load_dataset(EVAL_DATASET), mini_reasoner, _factory(load_transcript(EVAL_TRANSCRIPT)))
    write_report(report, tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["size"] == 10 and data["accuracy_overall"] == 0.5
    assert set(data["iteration_buckets"]) == set(BUCKETS)
    assert "Iteration buckets" in (tmp_path / "summary.txt").read_text()
    assert len(list((tmp_path / "traces").glob("*.json"))) == 10


def test_empty_report():
    report = run_eval([], None, None)
    assert report.accuracy_overall == 0.0 and report.iteration_buckets == dict.fromkeys(BUCKETS, 0)


def test_judge_step_record_filter():
    steps = [ScriptStep("judge", "Rating: [[1]]", record="x"), ScriptStep("judge", "Rating: [[0]]", record="y")]
    p = ScriptedProvider(steps).for_record("y")
    assert judge("q", "g", "p", Gateway(p)).score == 0
