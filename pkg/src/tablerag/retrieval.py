"""Dense recall over chunks followed by reranking."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import CorpusStore

logger = logging.getLogger(__name__)

# Scores are rounded before ranking so that mathematically equal cosines tie exactly.
SCORE_DECIMALS = 12


class RetrievalError(Exception):
    pass


class DimensionMismatch(RetrievalError, ValueError):
    pass


class ZeroVector(RetrievalError, ValueError):
    pass


class EmbedderFailure(RetrievalError):
    pass


class RerankerFailure(RetrievalError):
    pass


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise DimensionMismatch(f"{len(u)} != {len(v)}")
    # hypot and pre-scaling keep tiny or huge components from under/overflowing
    nu, nv = math.hypot(*u), math.hypot(*v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine undefined for an all-zero vector")
    c = math.fsum((a / nu) * (b / nv) for a, b in zip(u, v))
    return max(-1.0, min(1.0, c))


class EmbedderPort(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray:
        """Return an array of shape (len(texts), dim)."""
        ...


class RerankerPort(Protocol):
    def score(self, query: str, candidates: list[str]) -> list[float]:
        ...


_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def word_tokens(text: str) -> list[str]:
    return [w.lower() for w in _WORD.findall(text)]


class HashingEmbedder:
    """Signed feature hashing of lowercased word tokens, L2-normalized."""

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            for tok in word_tokens(text):
                j, sign = self._bucket(tok)
                out[i, j] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
        return out


STOPWORDS = frozenset(
    "a an and are as at be by did do does for from had has have in is it its of on or that the "
    "their there these this to was were what when where which who whom whose why with".split()
)


class LexicalReranker:
    """Offline relevance model: query-token coverage with a small length prior.

    score = |q ∩ c| / |q| + 0.001 * |q ∩ c| / |c|, over distinct non-stopword tokens.
    """

    def score(self, query: str, candidates: list[str]) -> list[float]:
        q = set(word_tokens(query)) - STOPWORDS
        scores = []
        for text in candidates:
            c = set(word_tokens(text)) - STOPWORDS
            if not q or not c:
                scores.append(0.0)
                continue
            inter = len(q & c)
            scores.append(inter / len(q) + 0.001 * inter / len(c))
        return scores


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float
    stage: str  # "recall" | "rerank"

    def to_dict(self) -> dict:
        return {"chunk_id": self.chunk_id, "score": self.score, "stage": self.stage}


@dataclass
class RetrievalSet:
    query: str
    recall_hits: list[RetrievalHit] = field(default_factory=list)
    rerank_hits: list[RetrievalHit] = field(default_factory=list)
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "recall_hits": [h.to_dict() for h in self.recall_hits],
            "rerank_hits": [h.to_dict() for h in self.rerank_hits],
            "degraded": self.degraded,
        }


def rank(scored: list[tuple[str, float]], limit: int, stage: str) -> list[RetrievalHit]:
    """Sort (chunk_id, score) descending by score, ties by ascending chunk_id."""
    rounded = [(cid, round(float(s), SCORE_DECIMALS)) for cid, s in scored]
    rounded.sort(key=lambda p: (-p[1], p[0]))
    return [RetrievalHit(cid, s, stage) for cid, s in rounded[:limit]]


class VectorIndex:
    """Exhaustive-scan cosine index; immutable once built."""

    def __init__(self, chunk_ids: list[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if len(chunk_ids) != len(vectors):
            raise ValueError("chunk_ids and vectors differ in length")
        if len(chunk_ids) and (vectors.ndim != 2 or vectors.shape[1] == 0):
            raise ValueError("vectors must be a non-empty 2-D array")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("non-finite embedding values")
        self.chunk_ids = list(chunk_ids)
        norms = np.linalg.norm(vectors, axis=1) if len(vectors) else np.zeros(0)
        safe = np.where(norms > 0, norms, 1.0)
        self._unit = vectors / safe[:, None] if len(vectors) else vectors
        self._unit.setflags(write=False)
        self._raw = vectors
        self._raw.setflags(write=False)

    def __len__(self) -> int:
        return len(self.chunk_ids)

    @property
    def dim(self) -> int:
        return self._raw.shape[1] if len(self) else 0

    def vector(self, i: int) -> np.ndarray:
        return self._raw[i]

    def scores(self, query_vec: np.ndarray) -> np.ndarray:
        q = np.asarray(query_vec, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"query dim {q.shape} != index dim {self.dim}")
        n = np.linalg.norm(q)
        if n == 0:
            return np.zeros(len(self))
        return np.clip(self._unit @ (q / n), -1.0, 1.0)

    def save(self, path: str | Path) -> None:
        np.savez(path, chunk_ids=np.array(self.chunk_ids, dtype=object), vectors=self._raw)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        data = np.load(path, allow_pickle=True)
        return cls([str(c) for c in data["chunk_ids"]], data["vectors"])


def _embed(embedder: EmbedderPort, texts: list[str]) -> np.ndarray:
    try:
        vecs = np.asarray(embedder.embed(texts), dtype=np.float64)
    except EmbedderFailure:
        raise
    except Exception as exc:
        raise EmbedderFailure(str(exc)) from exc
    if vecs.shape[0] != len(texts):
        raise EmbedderFailure(f"embedder returned {vecs.shape[0]} vectors for {len(texts)} texts")
    return vecs


def index_chunks(store: CorpusStore, embedder: EmbedderPort, batch_size: int = 64) -> VectorIndex:
    ids = [c.chunk_id for c in store.chunks]
    if not ids:
        return VectorIndex([], np.zeros((0, 0)))
    parts = [
        _embed(embedder, [c.text for c in store.chunks[i : i + batch_size]])
        for i in range(0, len(ids), batch_size)
    ]
    dims = {p.shape[1] for p in parts}
    if len(dims) != 1:
        raise EmbedderFailure(f"non-uniform embedding dims {sorted(dims)}")
    return VectorIndex(ids, np.vstack(parts))


def recall(index: VectorIndex, query: str, n: int = 30, embedder: EmbedderPort | None = None) -> list[RetrievalHit]:
    if len(index) == 0 or n <= 0:
        return []
    qvec = _embed(embedder, [query])[0]
    scores = index.scores(qvec)
    return rank(list(zip(index.chunk_ids, scores.tolist())), n, "recall")


def rerank(
    query: str,
    hits: list[RetrievalHit],
    k: int,
    reranker: RerankerPort,
    texts: dict[str, str],
) -> tuple[list[RetrievalHit], bool]:
    """Top-k of ``hits`` by reranker score; returns (hits, degraded).

    On reranker failure the recall order truncated to k is returned with degraded=True.
    """
    if not hits:
        return [], False
    try:
        scores = reranker.score(query, [texts[h.chunk_id] for h in hits])
        if len(scores) != len(hits) or not all(math.isfinite(float(s)) for s in scores):
            raise RerankerFailure("reranker returned malformed scores")
    except Exception as exc:  # any reranker fault degrades to recall order
        logger.warning("reranker failed, falling back to recall order: %s", exc)
        return [RetrievalHit(h.chunk_id, h.score, "recall") for h in hits[:k]], True
    return rank([(h.chunk_id, s) for h, s in zip(hits, scores)], k, "rerank"), False


@dataclass
class Retriever:
    """Recall-then-rerank over a built index."""

    index: VectorIndex
    store: CorpusStore
    embedder: EmbedderPort
    reranker: RerankerPort
    recall_n: int = 30
    rerank_k: int = 3

    def __post_init__(self):
        self._texts = {c.chunk_id: c.text for c in self.store.chunks}

    def text(self, chunk_id: str) -> str:
        return self._texts[chunk_id]

    def retrieve(self, query: str) -> RetrievalSet:
        recalled = recall(self.index, query, self.recall_n, self.embedder)
        reranked, degraded = rerank(query, recalled, self.rerank_k, self.reranker, self._texts)
        return RetrievalSet(query, recalled, reranked, degraded)
