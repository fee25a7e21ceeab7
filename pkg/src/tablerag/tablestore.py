"""Relational ingestion of tables and guarded read-only SQL execution (SQLite)."""

from __future__ import annotations

import re
import sqlite3
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import INTEGER, REAL, Table, coerce_cell, derive_schema

READ_ONLY_VIOLATION = "read-only violation"
TIMEOUT_MESSAGE = "timeout"
DIALECT = "ANSI SQL, SELECT-only, no vendor functions"

_SQL_TYPES = {INTEGER: "INTEGER", REAL: "REAL"}

# Keywords that never belong in a read-only query, checked outside literals and comments.
FORBIDDEN_KEYWORDS = frozenset({
    "INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "CREATE", "ATTACH", "DETACH",
    "PRAGMA", "UPSERT", "VACUUM", "REINDEX", "ANALYZE", "BEGIN", "COMMIT",
    "ROLLBACK", "SAVEPOINT", "RELEASE", "TRUNCATE", "GRANT", "REVOKE", "MERGE", "INTO",
})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<line_comment>--[^\n]*)
  | (?P<block_comment>/\*.*?(?:\*/|\Z))
  | (?P<string>'(?:[^']|'')*(?:'|\Z))
  | (?P<quoted>"(?:[^"]|"")*(?:"|\Z)|`[^`]*(?:`|\Z)|\[[^\]]*(?:\]|\Z))
  | (?P<word>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<semi>;)
  | (?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)


class IngestFailure(Exception):
    pass


@dataclass(frozen=True)
class SqlExecRequest:
    sql: str
    timeout: float = 5.0
    max_rows: int = 100

    def __post_init__(self):
        if not self.sql or not self.sql.strip():
            raise ValueError("sql must be non-empty")


@dataclass
class SqlExecResult:
    status: str  # "ok" | "error"
    columns: list[str] = field(default_factory=list)
    rows: list[list] = field(default_factory=list)
    truncated: bool = False
    error_message: str = ""
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "status": self.status,
            "columns": self.columns,
            "rows": self.rows,
            "truncated": self.truncated,
            "error_message": self.error_message,
        }
        if timings:
            d["elapsed"] = self.elapsed
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "SqlExecResult":
        return cls(
            obj["status"], obj["columns"], obj["rows"], obj["truncated"],
            obj["error_message"], obj.get("elapsed", 0.0),
        )

    @classmethod
    def error(cls, message: str, elapsed: float = 0.0) -> "SqlExecResult":
        return cls("error", error_message=message, elapsed=elapsed)


def check_read_only(sql: str) -> str | None:
    """Lexical gate. Returns None if ``sql`` is one SELECT/WITH statement, else a reason."""
    statements: list[list[str]] = [[]]
    for m in _TOKEN_RE.finditer(sql):
        kind = m.lastgroup
        if kind == "semi":
            statements.append([])
        elif kind == "word":
            statements[-1].append(m.group().upper())
        elif kind in ("other", "quoted", "string"):
            statements[-1].append(m.group())
    statements = [s for s in statements if s]
    if len(statements) != 1:
        return "multiple statements" if statements else "empty statement"
    words = statements[0]
    if words[0] not in ("SELECT", "WITH"):
        return f"statement starts with {words[0]!r}"
    for w in words:
        if w in FORBIDDEN_KEYWORDS:
            return f"forbidden keyword {w}"
    return None


_ALLOWED_ACTIONS = {sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ, sqlite3.SQLITE_FUNCTION}
_RECURSIVE = getattr(sqlite3, "SQLITE_RECURSIVE", 33)
_ALLOWED_ACTIONS.add(_RECURSIVE)


def _authorizer(action, arg1, arg2, dbname, source):
    if action in _ALLOWED_ACTIONS:
        return sqlite3.SQLITE_OK
    return sqlite3.SQLITE_DENY


def serialize_result(result: SqlExecResult) -> str:
    """Markdown rendering of an execution result for prompts."""
    if not result.ok:
        return f"SQL execution error: {result.error_message}"
    if not result.columns:
        return "(no columns)"
    lines = [
        "| " + " | ".join(result.columns) + " |",
        "| " + " | ".join("---" for _ in result.columns) + " |",
    ]
    for row in result.rows:
        lines.append("| " + " | ".join("NULL" if v is None else str(v) for v in row) + " |")
    if result.truncated:
        lines.append(f"-- truncated to {len(result.rows)} rows")
    return "\n".join(lines)


class TableStore:
    """A SQLite database holding ingested tables.

    ``path`` may be a file path or ``":memory:"``; an in-memory store is shared across
    connections through a private shared-cache URI and lives as long as this object.
    """

    def __init__(self, path: str | Path = ":memory:"):
        if str(path) == ":memory:":
            self._uri = f"file:tablerag-{uuid.uuid4().hex}?mode=memory&cache=shared"
            self._ro_uri = self._uri
        else:
            p = Path(path).resolve()
            self._uri = f"file:{p}"
            self._ro_uri = f"file:{p}?mode=ro"
        self.path = str(path)
        self._writer = sqlite3.connect(self._uri, uri=True, check_same_thread=False)

    def close(self) -> None:
        self._writer.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def total_changes(self) -> int:
        return self._writer.total_changes

    def table_names(self) -> list[str]:
        cur = self._writer.execute("SELECT name FROM sqlite_master WHERE type='table' ORDER BY name")
        return [r[0] for r in cur.fetchall()]

    def ingest_table(self, table: Table) -> str:
        schema = derive_schema(table)
        types = [typ for _, typ, _ in schema.columns]
        cols = ", ".join(f'"{name}" {_SQL_TYPES.get(typ, "TEXT")}' for name, typ, _ in schema.columns)
        marks = ", ".join("?" for _ in schema.columns)
        rows = [[coerce_cell(cell, typ) for cell, typ in zip(row, types)] for row in table.rows]
        try:
            with self._writer:
                self._writer.execute(f'DROP TABLE IF EXISTS "{table.name}"')
                self._writer.execute(f'CREATE TABLE "{table.name}" ({cols})')
                self._writer.executemany(f'INSERT INTO "{table.name}" VALUES ({marks})', rows)
        except sqlite3.Error as exc:
            raise IngestFailure(str(exc)) from exc
        return table.name

    def _reader(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self._ro_uri, uri=True, check_same_thread=False)
        conn.execute("PRAGMA query_only = ON")
        conn.set_authorizer(_authorizer)
        return conn

    def execute_readonly(self, req: SqlExecRequest | str) -> SqlExecResult:
        if isinstance(req, str):
            req = SqlExecRequest(req)
        start = time.monotonic()
        if check_read_only(req.sql) is not None:
            return SqlExecResult.error(READ_ONLY_VIOLATION, time.monotonic() - start)
        conn = self._reader()
        deadline = start + req.timeout
        timed_out = False

        def progress():
            nonlocal timed_out
            if time.monotonic() > deadline:
                timed_out = True
                return 1
            return 0

        conn.set_progress_handler(progress, 1000)
        try:
            cur = conn.execute(req.sql)
            columns = [d[0] for d in cur.description or ()]
            fetched = cur.fetchmany(req.max_rows + 1)
        except sqlite3.DatabaseError as exc:
            elapsed = time.monotonic() - start
            if timed_out:
                return SqlExecResult.error(TIMEOUT_MESSAGE, elapsed)
            msg = str(exc)
            if "not authorized" in msg or "readonly" in msg.replace("-", "").replace(" ", ""):
                msg = READ_ONLY_VIOLATION
            return SqlExecResult.error(msg, elapsed)
        except sqlite3.Warning as exc:  # e.g. "You can only execute one statement at a time."
            return SqlExecResult.error(READ_ONLY_VIOLATION if "one statement" in str(exc) else str(exc),
                                       time.monotonic() - start)
        finally:
            conn.close()
        truncated = len(fetched) > req.max_rows
        rows = [list(r) for r in fetched[: req.max_rows]]
        return SqlExecResult("ok", columns, rows, truncated, "", time.monotonic() - start)
