"""Offline corpus construction: table extraction, schemas, chunking, chunk->schema map."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

logger = logging.getLogger(__name__)

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_SEPARATOR_CELL = re.compile(r":?-+:?\Z")
_INT_RE = re.compile(r"[+-]?\d+\Z")
_REAL_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")

# Cells treated as missing for type inference and stored as NULL.
NULL_MARKERS = frozenset({"", "n/a", "na", "null", "none", "-", "\u2014", "\u2013"})

INTEGER, REAL, TEXT = "integer", "real", "text"


class CorpusError(Exception):
    pass


class DuplicateDocId(CorpusError):
    pass


class InvalidChunkParams(CorpusError, ValueError):
    pass


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    source_path: str
    body: str


@dataclass(frozen=True)
class Column:
    name: str
    inferred_type: str = TEXT
    examples: tuple[str, ...] = ()


@dataclass(frozen=True)
class Table:
    table_id: str
    name: str
    columns: tuple[Column, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.columns:
            raise ValueError(f"table {self.table_id!r} has no columns")
        if not IDENT_RE.match(self.name):
            raise ValueError(f"table name {self.name!r} is not an identifier")
        width = len(self.columns)
        for row in self.rows:
            if len(row) != width:
                raise ValueError(f"row width {len(row)} != {width} in {self.table_id!r}")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class TableSchema:
    table_name: str
    columns: tuple[tuple[str, str, tuple[str, ...]], ...]

    def to_dict(self) -> dict:
        return {
            "table_name": self.table_name,
            "columns": [[name, typ, list(examples)] for name, typ, examples in self.columns],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=4)

    @classmethod
    def from_dict(cls, obj: dict) -> "TableSchema":
        return cls(
            table_name=obj["table_name"],
            columns=tuple((n, t, tuple(ex)) for n, t, ex in obj["columns"]),
        )


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    text: str
    origin_kind: str  # "text" | "table"
    origin_id: str
    token_span: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "text": self.text,
            "origin": {"kind": self.origin_kind, "id": self.origin_id},
            "span": list(self.token_span),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Chunk":
        return cls(
            chunk_id=obj["chunk_id"],
            text=obj["text"],
            origin_kind=obj["origin"]["kind"],
            origin_id=obj["origin"]["id"],
            token_span=tuple(obj["span"]),
        )


@dataclass(frozen=True)
class ParseWarning:
    doc_id: str
    line: int
    message: str


@dataclass
class CorpusStore:
    documents: list[RawDocument] = field(default_factory=list)
    tables: list[Table] = field(default_factory=list)
    chunks: list[Chunk] = field(default_factory=list)
    schema_map: dict[str, str] = field(default_factory=dict)
    schemas: dict[str, TableSchema] = field(default_factory=dict)
    warnings: list[ParseWarning] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {c.chunk_id: c for c in self.chunks}

    def chunk(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    def schema_for_chunk(self, chunk_id: str) -> TableSchema | None:
        table_id = self.schema_map.get(chunk_id)
        return None if table_id is None else self.schemas[table_id]

    def check_integrity(self) -> None:
        if len(self._by_id) != len(self.chunks):
            raise CorpusError("duplicate chunk ids")
        for chunk in self.chunks:
            if chunk.origin_kind == "table":
                if self.schema_map.get(chunk.chunk_id) != chunk.origin_id:
                    raise CorpusError(f"table chunk {chunk.chunk_id} not mapped to its table")
            elif chunk.chunk_id in self.schema_map:
                raise CorpusError(f"text chunk {chunk.chunk_id} present in schema map")
        for chunk_id, table_id in self.schema_map.items():
            if chunk_id not in self._by_id or table_id not in self.schemas:
                raise CorpusError(f"dangling map entry {chunk_id} -> {table_id}")

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        schema_dir = out / "schemas"
        schema_dir.mkdir(parents=True, exist_ok=True)
        for stale in schema_dir.glob("*.json"):
            stale.unlink()
        for table_id, schema in self.schemas.items():
            (schema_dir / f"{table_id}.json").write_text(schema.to_json() + "\n", encoding="utf-8")
        with open(out / "chunks.jsonl", "w", encoding="utf-8") as fh:
            for chunk in self.chunks:
                fh.write(json.dumps(chunk.to_dict(), ensure_ascii=False) + "\n")
        with open(out / "map.jsonl", "w", encoding="utf-8") as fh:
            for chunk_id, table_id in self.schema_map.items():
                fh.write(json.dumps({"chunk_id": chunk_id, "table_id": table_id}) + "\n")

    @classmethod
    def load(cls, out_dir: str | Path) -> "CorpusStore":
        out = Path(out_dir)
        schemas = {
            p.stem: TableSchema.from_dict(json.loads(p.read_text(encoding="utf-8")))
            for p in sorted((out / "schemas").glob("*.json"))
        }
        chunks = [Chunk.from_dict(json.loads(line)) for line in _read_lines(out / "chunks.jsonl")]
        schema_map = {}
        for line in _read_lines(out / "map.jsonl"):
            entry = json.loads(line)
            schema_map[entry["chunk_id"]] = entry["table_id"]
        store = cls(chunks=chunks, schema_map=schema_map, schemas=schemas)
        store.check_integrity()
        return store


def _read_lines(path: Path) -> list[str]:
    return [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


# ---------------------------------------------------------------- identifiers


def sanitize_identifier(raw: str, fallback: str = "t") -> str:
    name = re.sub(r"[^A-Za-z0-9_]", "_", raw.strip())
    if not name:
        name = fallback
    if name[0].isdigit():
        name = "t_" + name
    return name


def _dedupe(names: Iterable[str], taken: set[str] | None = None) -> list[str]:
    seen = set() if taken is None else taken
    out = []
    for name in names:
        candidate, n = name, 2
        while candidate in seen:
            candidate = f"{name}_{n}"
            n += 1
        seen.add(candidate)
        out.append(candidate)
    return out


# ---------------------------------------------------------------- type inference


def is_null(cell: str) -> bool:
    return cell.strip().lower() in NULL_MARKERS


def infer_type(cells: Iterable[str]) -> str:
    """Promote integer -> real -> text over the non-null cells; no evidence is text."""
    values = [c.strip() for c in cells if not is_null(c)]
    if not values:
        return TEXT
    if all(_INT_RE.match(v) for v in values):
        return INTEGER
    if all(_REAL_RE.match(v) for v in values):
        return REAL
    return TEXT


def coerce_cell(cell: str, inferred_type: str):
    """Convert a raw cell to its storage value; unparseable numeric cells become None."""
    if inferred_type == TEXT:
        return cell
    value = cell.strip()
    if inferred_type == INTEGER and _INT_RE.match(value):
        return int(value)
    if inferred_type == REAL and _REAL_RE.match(value):
        return float(value)
    return None


def make_table(table_id: str, name: str, header: list[str], rows: list[list[str]]) -> Table:
    """Build a Table with sanitized column names and inferred column types."""
    width = len(header)
    fixed = [tuple((list(r) + [""] * width)[:width]) for r in rows]
    col_names = _dedupe(
        sanitize_identifier(h, fallback=f"column_{i + 1}") for i, h in enumerate(header)
    )
    columns = []
    for i, cname in enumerate(col_names):
        cells = [r[i] for r in fixed]
        columns.append(Column(cname, infer_type(cells), _first_distinct(cells)))
    return Table(table_id=table_id, name=name, columns=tuple(columns), rows=tuple(fixed))


def _first_distinct(cells: Iterable[str], limit: int = 3) -> tuple[str, ...]:
    out: list[str] = []
    for cell in cells:
        if is_null(cell) or cell in out:
            continue
        out.append(cell)
        if len(out) == limit:
            break
    return tuple(out)


def derive_schema(table: Table) -> TableSchema:
    cols = []
    for i, col in enumerate(table.columns):
        cells = [row[i] for row in table.rows]
        cols.append((col.name, infer_type(cells), _first_distinct(cells)))
    return TableSchema(table_name=table.name, columns=tuple(cols))


# ---------------------------------------------------------------- markdown


def _split_row(line: str) -> list[str]:
    s = line.strip()
    if s.startswith("|"):
        s = s[1:]
    if s.endswith("|"):
        s = s[:-1]
    return [c.strip() for c in s.split("|")]


def _is_separator(line: str) -> bool:
    if "-" not in line:
        return False
    cells = _split_row(line)
    return bool(cells) and all(_SEPARATOR_CELL.match(c) for c in cells)


def render_markdown(table: Table) -> str:
    lines = [
        "| " + " | ".join(table.column_names) + " |",
        "| " + " | ".join("---" for _ in table.columns) + " |",
    ]
    lines.extend("| " + " | ".join(row) + " |" for row in table.rows)
    return "\n".join(lines)


def table_stream(table: Table) -> str:
    """Text indexed for a table: a caption line naming it, then its Markdown rendering."""
    return f"Table: {table.name}\n{render_markdown(table)}"


def parse_document(
    raw: RawDocument, warnings: list[ParseWarning] | None = None
) -> tuple[list[str], list[Table]]:
    """Split a document into prose segments and pipe tables, in document order.

    Tables are named ``<doc_id>_<k>`` (sanitized) where k counts tables in the document.
    Malformed tables are left in the prose and recorded in ``warnings``.
    """
    lines = raw.body.splitlines()
    segments: list[str] = []
    tables: list[Table] = []
    prose: list[str] = []

    def flush():
        text = "\n".join(prose).strip()
        if text:
            segments.append(text)
        prose.clear()

    i = 0
    while i < len(lines):
        line = lines[i]
        if _is_separator(line):
            header = _split_row(lines[i - 1]) if i > 0 and "|" in lines[i - 1] else []
            if not any(header):
                if warnings is not None:
                    warnings.append(ParseWarning(raw.doc_id, i + 1, "separator row without header"))
                logger.warning("%s:%d: malformed table (header width 0), skipped", raw.doc_id, i + 1)
                prose.append(line)
                i += 1
                continue
            j = i + 1
            body_rows = []
            while j < len(lines) and "|" in lines[j] and lines[j].strip():
                body_rows.append(_split_row(lines[j]))
                j += 1
            if not body_rows:
                prose.append(line)
                i += 1
                continue
            prose.pop()  # header line
            flush()
            name = sanitize_identifier(f"{raw.doc_id}_{len(tables)}")
            tables.append(make_table(name, name, header, body_rows))
            i = j
            continue
        prose.append(line)
        i += 1
    flush()
    return segments, tables


def read_csv_table(path: str | Path, table_id: str | None = None) -> Table:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        records = list(csv.reader(fh))
    if not records or not any(records[0]):
        raise CorpusError(f"{path}: CSV header row required")
    name = table_id or sanitize_identifier(path.stem)
    return make_table(name, name, records[0], records[1:])


# ---------------------------------------------------------------- chunking


class TokenizerPort(Protocol):
    def spans(self, text: str) -> list[tuple[int, int]]:
        """Character spans of tokens, in order."""
        ...


class WhitespaceTokenizer:
    _TOKEN = re.compile(r"\S+")

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in self._TOKEN.finditer(text)]


def chunk_spans(total: int, chunk_size: int = 1000, overlap: int = 200) -> list[tuple[int, int]]:
    """Token windows of ``chunk_size`` advancing by ``chunk_size - overlap``.

    The last window is pulled left so it ends flush with the stream.
    """
    if chunk_size <= 0 or overlap < 0 or overlap >= chunk_size:
        raise InvalidChunkParams(f"need 0 <= overlap < chunk_size, got {overlap}, {chunk_size}")
    if total <= 0:
        return []
    if total <= chunk_size:
        return [(0, total)]
    stride = chunk_size - overlap
    spans = []
    start = 0
    while start + chunk_size < total:
        spans.append((start, start + chunk_size))
        start += stride
    spans.append((total - chunk_size, total))
    return spans


def chunk_text(
    text: str,
    chunk_size: int = 1000,
    overlap: int = 200,
    tokenizer: TokenizerPort | None = None,
    origin_kind: str = "text",
    origin_id: str = "",
) -> list[Chunk]:
    tokenizer = tokenizer or WhitespaceTokenizer()
    tokens = tokenizer.spans(text)
    spans = chunk_spans(len(tokens), chunk_size, overlap)
    chunks = []
    for j, (start, end) in enumerate(spans):
        body = text[tokens[start][0] : tokens[end - 1][1]]
        chunks.append(Chunk(f"{origin_id}::{origin_kind}::{j}", body, origin_kind, origin_id, (start, end)))
    return chunks


@dataclass(frozen=True)
class ChunkParams:
    chunk_size: int = 1000
    overlap: int = 200


def build_corpus(
    docs: list[RawDocument],
    params: ChunkParams = ChunkParams(),
    csv_tables: list[Table] = (),
    tokenizer: TokenizerPort | None = None,
) -> CorpusStore:
    seen_docs = set()
    for doc in docs:
        if doc.doc_id in seen_docs:
            raise DuplicateDocId(doc.doc_id)
        seen_docs.add(doc.doc_id)

    warnings: list[ParseWarning] = []
    tables: list[Table] = []
    chunks: list[Chunk] = []
    taken: set[str] = set()

    def register(table: Table) -> Table:
        (unique,) = _dedupe([table.name], taken)
        if unique != table.name:
            table = Table(unique, unique, table.columns, table.rows)
        tables.append(table)
        return table

    for doc in docs:
        segments, doc_tables = parse_document(doc, warnings)
        for t in doc_tables:
            register(t)
        prose = "\n\n".join(segments)
        chunks.extend(
            chunk_text(prose, params.chunk_size, params.overlap, tokenizer, "text", doc.doc_id)
        )
    for t in csv_tables:
        register(t)

    schema_map: dict[str, str] = {}
    schemas: dict[str, TableSchema] = {}
    for t in tables:
        schemas[t.table_id] = derive_schema(t)
        for c in chunk_text(table_stream(t), params.chunk_size, params.overlap, tokenizer, "table", t.table_id):
            chunks.append(c)
            schema_map[c.chunk_id] = t.table_id

    store = CorpusStore(
        documents=list(docs), tables=tables, chunks=chunks,
        schema_map=schema_map, schemas=schemas, warnings=warnings,
    )
    store.check_integrity()
    return store


def load_corpus_dir(corpus_dir: str | Path) -> tuple[list[RawDocument], list[Table]]:
    """Read ``.md``/``.txt`` documents and ``.csv`` standalone tables from a directory."""
    root = Path(corpus_dir)
    docs, tables = [], []
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        suffix = path.suffix.lower()
        if suffix in (".md", ".txt"):
            body = path.read_bytes().decode("utf-8")
            doc_id = path.relative_to(root).with_suffix("").as_posix()
            docs.append(RawDocument(doc_id, str(path), body))
        elif suffix == ".csv":
            tables.append(read_csv_table(path))
    return docs, tables
