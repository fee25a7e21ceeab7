"""Hybrid question answering over text and tables: dense retrieval plus SQL execution,
driven by an iterative decomposition loop."""

from pathlib import Path

from .corpus import (
    Chunk,
    Column,
    CorpusStore,
    RawDocument,
    Table,
    TableSchema,
    build_corpus,
    chunk_text,
    derive_schema,
    parse_document,
    render_markdown,
)
from .llm import ChatMessage, Gateway, ProviderConfig, ScriptedProvider, classify_prompt
from .reasoner import AblationFlags, Reasoner, Trace
from .retrieval import HashingEmbedder, LexicalReranker, Retriever, cosine, recall, rerank
from .tablestore import SqlExecRequest, SqlExecResult, TableStore

__version__ = "0.1.0"
DATA_DIR = Path(__file__).parent / "data"
