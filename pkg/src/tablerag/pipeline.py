"""Build the offline stores into a directory and load them back for querying."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .config import AppConfig
from .corpus import CorpusStore, build_corpus, load_corpus_dir
from .llm import HttpEmbedder, HttpReranker
from .reasoner import Reasoner
from .retrieval import HashingEmbedder, LexicalReranker, Retriever, VectorIndex, index_chunks
from .tablestore import TableStore

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class StoreNotFound(FileNotFoundError):
    pass


def make_embedder(cfg: AppConfig):
    p = cfg.providers["embedder"]
    return HttpEmbedder(p) if p.endpoint else HashingEmbedder(cfg.embedding_dim)


def make_reranker(cfg: AppConfig):
    p = cfg.providers["reranker"]
    return HttpReranker(p) if p.endpoint else LexicalReranker()


def build(corpus_dir: str | Path, cfg: AppConfig, embedder=None) -> CorpusStore:
    """Full rebuild of corpus store, vector index and relational database under cfg.out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs, csv_tables = load_corpus_dir(corpus_dir)
    if not docs and not csv_tables:
        logger.warning("0 documents in %s", corpus_dir)
    store = build_corpus(docs, cfg.chunk_params, csv_tables)
    store.save(out)

    db_path = cfg.resolve(cfg.database)
    if db_path.exists():
        db_path.unlink()
    with TableStore(db_path) as db:
        for table in store.tables:
            db.ingest_table(table)

    index = index_chunks(store, embedder or make_embedder(cfg))
    index.save(cfg.resolve(cfg.index))
    manifest = {
        "documents": len(docs),
        "tables": [t.table_id for t in store.tables],
        "chunks": len(store.chunks),
        "embedding_dim": index.dim,
        "warnings": [w.__dict__ for w in store.warnings],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return store


def load_reasoner(cfg: AppConfig, embedder=None, reranker=None) -> tuple[Reasoner, TableStore]:
    out = Path(cfg.out_dir)
    if not (out / MANIFEST).exists():
        raise StoreNotFound(f"store not found: {out}")
    store = CorpusStore.load(out)
    index = VectorIndex.load(cfg.resolve(cfg.index))
    db = TableStore(cfg.resolve(cfg.database))
    retriever = Retriever(index, store, embedder or make_embedder(cfg), reranker or make_reranker(cfg),
                          cfg.recall_n, cfg.rerank_k)
    return Reasoner(store, retriever, db, cfg.reasoner_params), db


def in_memory_reasoner(docs, cfg: AppConfig | None = None, csv_tables=(), embedder=None, reranker=None):
    """Build everything in memory; used by tests and scripts."""
    cfg = cfg or AppConfig()
    store = build_corpus(list(docs), cfg.chunk_params, list(csv_tables))
    db = TableStore(":memory:")
    for table in store.tables:
        db.ingest_table(table)
    embedder = embedder or make_embedder(cfg)
    retriever = Retriever(index_chunks(store, embedder), store, embedder, reranker or make_reranker(cfg),
                          cfg.recall_n, cfg.rerank_k)
    return Reasoner(store, retriever, db, cfg.reasoner_params), db
