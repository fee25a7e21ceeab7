from __future__ import annotations

import sqlite3
from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablerag.corpus import make_table
from tablerag.tablestore import (
    READ_ONLY_VIOLATION,
    TIMEOUT_MESSAGE,
    SqlExecRequest,
    SqlExecResult,
    TableStore,
    check_read_only,
    serialize_result,
)


@pytest.fixture
def db():
    store = TableStore(":memory:")
    store.ingest_table(make_table("scores", "scores", ["name", "points", "ratio"],
                                  [["ann", "3", "0.5"], ["bob", "N/A", "1.25"], ["cy", "7", "n/a"]]))
    yield store
    store.close()


def test_null_markers_stored_as_null(db):
    r = db.execute_readonly("SELECT name, points, ratio FROM scores ORDER BY name")
    assert r.ok and r.columns == ["name", "points", "ratio"]
    assert r.rows == [["ann", 3, 0.5], ["bob", None, 1.25], ["cy", 7, None]]
    assert db.execute_readonly("SELECT COUNT(*) FROM scores WHERE points IS NULL").rows == [[1]]


def test_declared_column_types(db):
    r = db.execute_readonly("SELECT typeof(points), typeof(ratio), typeof(name) FROM scores WHERE name='ann'")
    assert r.rows == [["integer", "real", "text"]]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 60), max_rows=st.integers(1, 50))
def test_row_cap_oracle(n, max_rows):
    with TableStore(":memory:") as store:
        store.ingest_table(make_table("t", "t", ["i"], [[str(i)] for i in range(n)]))
        r = store.execute_readonly(SqlExecRequest("SELECT i FROM t ORDER BY i", max_rows=max_rows))
    assert r.rows == [[i] for i in range(min(n, max_rows))]
    assert r.truncated == (n > max_rows)


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT 1",
        "select * from scores",
        "WITH a AS (SELECT 1) SELECT * FROM a",
        "SELECT 'insert into x' AS s",
        "SELECT 1 -- drop table scores",
        "SELECT /* update */ 1;",
        'SELECT "delete" FROM (SELECT 1 AS "delete")',
        "SELECT replace(name, 'a', 'b') FROM scores",
    ],
)
def test_gate_accepts_reads(sql):
    assert check_read_only(sql) is None


@pytest.mark.parametrize(
    "sql",
    [
        "", "   ", ";", "-- only a comment",
        "PRAGMA writable_schema = 1",
        "ATTACH DATABASE 'x.db' AS x",
        "SELECT 1; SELECT 2",
        "SELECT * INTO backup FROM scores",
        "VACUUM",
        "EXPLAIN SELECT 1",
        "WITH a AS (SELECT 1) UPDATE scores SET points = 0",
    ],
)
def test_gate_rejects(sql):
    assert check_read_only(sql) is not None


def test_rejections_report_read_only_violation(db):
    before = db.total_changes
    for sql in ["DELETE FROM scores", "SELECT 1; DROP TABLE scores", "ATTACH DATABASE ':memory:' AS m"]:
        r = db.execute_readonly(sql)
        assert r.status == "error" and r.error_message == READ_ONLY_VIOLATION
    assert db.total_changes == before
    assert db.execute_readonly("SELECT COUNT(*) FROM scores").rows == [[3]]


def test_engine_layer_blocks_writes_without_the_gate(tmp_path):
    path = tmp_path / "t.db"
    with TableStore(path) as store:
        store.ingest_table(make_table("t", "t", ["a"], [["1"]]))
        conn = store._reader()
        for sql in ["DELETE FROM t", "CREATE TABLE x (a)", "DROP TABLE t", "INSERT INTO t VALUES (2)"]:
            with pytest.raises(sqlite3.DatabaseError):
                conn.execute(sql)
        conn.close()
        assert store.execute_readonly("SELECT a FROM t").rows == [[1]]


def test_engine_layer_in_memory():
    with TableStore(":memory:") as store:
        store.ingest_table(make_table("t", "t", ["a"], [["1"]]))
        conn = store._reader()
        with pytest.raises(sqlite3.DatabaseError):
            conn.execute("DELETE FROM t")
        conn.close()
        assert store.execute_readonly("SELECT a FROM t").rows == [[1]]


def test_timeout():
    with TableStore(":memory:") as store:
        sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT COUNT(*) FROM c"
        r = store.execute_readonly(SqlExecRequest(sql, timeout=0.05))
    assert r.status == "error" and r.error_message == TIMEOUT_MESSAGE


def test_syntax_error_is_reported(db):
    r = db.execute_readonly("SELECT name FROM scores WHERE")
    assert r.status == "error" and r.error_message == "incomplete input"
    r = db.execute_readonly("SELECT name FROM scores WHERE WHERE 1")
    assert r.status == "error" and "syntax error" in r.error_message


def test_unknown_table_is_reported(db):
    r = db.execute_readonly("SELECT * FROM nowhere")
    assert not r.ok and "no such table" in r.error_message


def test_serialize_result():
    ok = SqlExecResult("ok", ["a", "b"], [[1, None], ["x|y", 2.5]], truncated=True)
    text = serialize_result(ok)
    assert text.splitlines()[:2] == ["| a | b |", "| --- | --- |"]
    assert text.endswith("-- truncated to 2 rows")
    assert serialize_result(SqlExecResult.error("boom")).startswith("SQL execution error: boom")


def test_result_dict_round_trip():
    r = SqlExecResult("ok", ["a"], [[1]], False, "", 0.25)
    assert SqlExecResult.from_dict(r.to_dict()) == r
    assert "elapsed" not in r.to_dict(timings=False)


def test_request_requires_sql():
    with pytest.raises(ValueError):
        SqlExecRequest("  ")


def test_reingest_replaces_table(db):
    db.ingest_table(make_table("scores", "scores", ["x"], [["1"]]))
    assert db.execute_readonly("SELECT * FROM scores").columns == ["x"]


def test_concurrent_reads(db):
    with ThreadPoolExecutor(4) as pool:
        results = list(pool.map(lambda _: db.execute_readonly("SELECT COUNT(*) FROM scores").rows, range(40)))
    assert all(r == [[3]] for r in results)


def test_file_store_persists(tmp_path):
    path = tmp_path / "p.db"
    with TableStore(path) as store:
        store.ingest_table(make_table("t", "t", ["a"], [["5"]]))
    with TableStore(path) as store:
        assert store.table_names() == ["t"]
        assert store.execute_readonly("SELECT a FROM t").rows == [[5]]
