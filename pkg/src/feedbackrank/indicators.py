"""Feedback and synthetic indicators: creation, signal mapping, storage.

An indicator records that a query found a document (or chunk) useful or
useless, as a signal in [-1, +1]. Synthetic indicators are hypothetical
queries generated from chunk content (always +1, chunk-scoped); feedback
indicators come from rated user interactions (document-scoped).
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import Chunk, Document
from .embedding import Embedding, EmbeddingProvider, tokenize

logger = logging.getLogger(__name__)

DEFAULT_MAX_FEEDBACK_PER_DOC = 6
DEFAULT_QUERIES_PER_CHUNK = 5

# Fixed timestamp for regenerated indicators keeps index artifacts
# byte-identical across rebuilds of unchanged inputs.
SYNTHETIC_CREATED_AT = "1970-01-01T00:00:00+00:00"

STOP_WORDS = frozenset(
    """a an the and or but if then than of in on at to for with by from as is are was
    were be been being do does did done how what when where who whom whose why which
    i you he she it we they me him her us them my your his its our their this that
    these those am will would can could should shall may might must not no nor so
    too very s t just about into over under again further once here there all any
    both each few more most other some such only own same up down out off""".split()
)


class Source(str, Enum):
    SYNTHETIC = "synthetic"
    FEEDBACK = "feedback"


@dataclass(frozen=True)
class ChunkScope:
    chunk_id: str


@dataclass(frozen=True)
class DocumentScope:
    doc_id: str


Scope = ChunkScope | DocumentScope


@dataclass(frozen=True)
class Indicator:
    """A (query, target, signal) record with its embedding and keywords."""

    query: str
    query_embedding: Embedding
    keywords: tuple[str, ...]
    signal: float
    scope: Scope
    source: Source
    created_at: str
    doc_version: int

    def __post_init__(self) -> None:
        if not -1.0 <= self.signal <= 1.0:
            raise ValueError(f"signal {self.signal} outside [-1, +1]")
        if self.source is Source.SYNTHETIC:
            if not isinstance(self.scope, ChunkScope):
                raise ValueError("synthetic indicators must be chunk-scoped")
            if self.signal != 1.0:
                raise ValueError("synthetic indicators must carry signal +1")
        if self.source is Source.FEEDBACK and not isinstance(self.scope, DocumentScope):
            raise ValueError("feedback indicators must be document-scoped")

    @property
    def target_doc_id(self) -> str:
        if isinstance(self.scope, DocumentScope):
            return self.scope.doc_id
        return self.scope.chunk_id.rsplit("#", 1)[0]


@dataclass(frozen=True)
class FeedbackEvent:
    """One rated interaction: the query, its star rating, and the documents
    the answer referenced, best first."""

    query: str
    star_rating: int
    referenced_docs: tuple[str, ...]
    timestamp: str
    rewritten_intent: str | None = None

    def __post_init__(self) -> None:
        if self.star_rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"star_rating must be 1-5, got {self.star_rating}")
        if not self.referenced_docs:
            raise ValueError("referenced_docs must be non-empty")
        object.__setattr__(self, "referenced_docs", tuple(self.referenced_docs))


class SyntheticQueryProvider(Protocol):
    """Generates hypothetical queries a chunk can answer.

    Implementations may internally verify and filter candidate queries
    (e.g. by checking the chunk answers them) as long as exactly
    ``queries_per_chunk`` queries are returned, deterministically per
    (chunk content, config) for offline providers.
    """

    queries_per_chunk: int

    def generate(self, chunk: Chunk) -> list[str]: ...


class TemplateQueryProvider:
    """Offline stub: template queries built from the chunk's top-TF keywords."""

    _TEMPLATES = (
        "how to {a} {b}",
        "what does {a} {b} do",
        "fix {a} {b} error",
        "{a} {b} configuration steps",
        "when should {a} {b} run",
    )

    def __init__(self, queries_per_chunk: int = DEFAULT_QUERIES_PER_CHUNK):
        if queries_per_chunk < 1:
            raise ValueError("queries_per_chunk must be >= 1")
        self.queries_per_chunk = queries_per_chunk

    def _ranked_keywords(self, chunk: Chunk) -> list[str]:
        order: dict[str, int] = {}
        counts: dict[str, int] = {}
        for token in extract_keywords(chunk.content):
            order[token] = len(order)
            counts[token] = 0
        for token in tokenize(chunk.content):
            if token in counts:
                counts[token] += 1
        ranked = sorted(counts, key=lambda t: (-counts[t], order[t]))
        if ranked:
            return ranked
        return tokenize(chunk.content) or tokenize(chunk.title) or [chunk.doc_id.lower()]

    def generate(self, chunk: Chunk) -> list[str]:
        if not chunk.content.strip():
            raise ValueError(f"chunk {chunk.chunk_id} has empty content")
        keywords = self._ranked_keywords(chunk)
        queries: list[str] = []
        for i in range(self.queries_per_chunk):
            template = self._TEMPLATES[i % len(self._TEMPLATES)]
            offset = i + i // len(self._TEMPLATES)
            a = keywords[offset % len(keywords)]
            b = keywords[(offset + 1) % len(keywords)]
            queries.append(template.format(a=a, b=b))
        return queries


def extract_keywords(text: str) -> list[str]:
    """Lowercased, stop-word-filtered, order-preserving deduplicated tokens."""
    seen: set[str] = set()
    out: list[str] = []
    for token in tokenize(text):
        if token in STOP_WORDS or token in seen:
            continue
        seen.add(token)
        out.append(token)
    return out


def map_star_to_signals(
    event: FeedbackEvent, rank_refine_negative: bool = True
) -> list[tuple[str, float]]:
    """Map a 1-5 star rating onto per-document signals in [-1, +1].

    The base signal is (stars - 3) / 2; the j-th referenced document is
    scaled by max(1 - 0.25 * (j - 1), 0.25), so a 5-star event over three
    documents yields 1.0, 0.75, 0.5. Negative events apply the same rank
    scaling unless ``rank_refine_negative`` is off.
    """
    base = (event.star_rating - 3) / 2.0
    signals: list[tuple[str, float]] = []
    for j, doc_id in enumerate(event.referenced_docs, 1):
        multiplier = max(1.0 - 0.25 * (j - 1), 0.25)
        if base < 0 and not rank_refine_negative:
            multiplier = 1.0
        signals.append((doc_id, base * multiplier))
    return signals


class AttachedIndicators:
    """Indicators attached to one chunk, with embeddings stacked for fast voting."""

    __slots__ = ("indicators", "unit_embeddings", "signals")

    def __init__(self, indicators: list[Indicator]):
        self.indicators = tuple(indicators)
        matrix = np.stack([ind.query_embedding.values for ind in indicators])
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("indicator embedding with zero norm")
        self.unit_embeddings = matrix / norms
        self.signals = np.array([ind.signal for ind in indicators], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.indicators)


class IndicatorRepository:
    """The indicator store: feedback indicators per document (most recent
    first, trimmed to K) and synthetic indicators per chunk."""

    def __init__(self, max_feedback_per_doc: int = DEFAULT_MAX_FEEDBACK_PER_DOC):
        if max_feedback_per_doc < 1:
            raise ValueError("max_feedback_per_doc must be >= 1")
        self.max_feedback_per_doc = max_feedback_per_doc
        self.by_document: dict[str, list[Indicator]] = {}
        self.by_chunk: dict[str, list[Indicator]] = {}
        self.doc_versions: dict[str, int] = {}

    def register_documents(self, documents: Iterable[Document]) -> None:
        for doc in documents:
            self.doc_versions[doc.doc_id] = doc.version

    def add_synthetic(self, indicators: Iterable[Indicator]) -> None:
        for ind in indicators:
            if not isinstance(ind.scope, ChunkScope):
                raise ValueError("add_synthetic requires chunk-scoped indicators")
            self.by_chunk.setdefault(ind.scope.chunk_id, []).append(ind)

    def feedback_indicators(self) -> list[Indicator]:
        out: list[Indicator] = []
        for doc_id in sorted(self.by_document):
            out.extend(self.by_document[doc_id])
        return out

    def synthetic_indicators(self) -> list[Indicator]:
        out: list[Indicator] = []
        for chunk_id in sorted(self.by_chunk):
            out.extend(self.by_chunk[chunk_id])
        return out

    def all_indicators(self) -> list[Indicator]:
        return self.feedback_indicators() + self.synthetic_indicators()

    def counts(self) -> dict[str, int]:
        return {
            "feedback": sum(len(v) for v in self.by_document.values()),
            "synthetic": sum(len(v) for v in self.by_chunk.values()),
        }

    @classmethod
    def from_indicators(
        cls,
        indicators: Iterable[Indicator],
        max_feedback_per_doc: int = DEFAULT_MAX_FEEDBACK_PER_DOC,
    ) -> "IndicatorRepository":
        """Rebuild a repository from a flat indicator list (file order is
        recency order for feedback indicators)."""
        repo = cls(max_feedback_per_doc)
        for ind in indicators:
            if isinstance(ind.scope, DocumentScope):
                entries = repo.by_document.setdefault(ind.scope.doc_id, [])
                if len(entries) < max_feedback_per_doc:
                    entries.append(ind)
            else:
                repo.by_chunk.setdefault(ind.scope.chunk_id, []).append(ind)
        return repo


def ingest_feedback(
    repo: IndicatorRepository,
    event: FeedbackEvent,
    provider: EmbeddingProvider,
    rank_refine_negative: bool = True,
) -> int:
    """Turn one feedback event into document-scoped indicators.

    Each referenced document gets an indicator prepended to its list, which
    is then trimmed to the most recent K. Documents unknown to the repository
    are skipped with a warning (telemetry may reference deleted docs).
    Returns the number of indicators written.
    """
    embedding = provider.embed(event.query)
    keywords = tuple(extract_keywords(event.query))
    written = 0
    for doc_id, signal in map_star_to_signals(event, rank_refine_negative):
        version = repo.doc_versions.get(doc_id)
        if version is None:
            logger.warning("feedback references unknown document %r; skipped", doc_id)
            continue
        indicator = Indicator(
            query=event.query,
            query_embedding=embedding,
            keywords=keywords,
            signal=signal,
            scope=DocumentScope(doc_id),
            source=Source.FEEDBACK,
            created_at=event.timestamp,
            doc_version=version,
        )
        entries = repo.by_document.setdefault(doc_id, [])
        entries.insert(0, indicator)
        del entries[repo.max_feedback_per_doc :]
        written += 1
    return written


def generate_synthetic_indicators(
    chunk: Chunk,
    provider: SyntheticQueryProvider,
    emb: EmbeddingProvider,
) -> list[Indicator]:
    """Generate exactly ``queries_per_chunk`` chunk-scoped +1 indicators.

    All-or-nothing per chunk: a provider failure discards partial results.
    """
    if not chunk.content.strip():
        raise ValueError(f"chunk {chunk.chunk_id} has empty content")
    queries = provider.generate(chunk)
    if len(queries) != provider.queries_per_chunk:
        raise ValueError(
            f"provider returned {len(queries)} queries, expected {provider.queries_per_chunk}"
        )
    return [
        Indicator(
            query=query,
            query_embedding=emb.embed(query),
            keywords=tuple(extract_keywords(query)),
            signal=1.0,
            scope=ChunkScope(chunk.chunk_id),
            source=Source.SYNTHETIC,
            created_at=SYNTHETIC_CREATED_AT,
            doc_version=chunk.doc_version,
        )
        for query in queries
    ]


def evict_stale(repo: IndicatorRepository, corpus: Iterable[Document]) -> int:
    """Remove indicators whose document is gone or has a newer version."""
    current = {doc.doc_id: doc.version for doc in corpus}

    def is_stale(ind: Indicator) -> bool:
        version = current.get(ind.target_doc_id)
        return version is None or ind.doc_version < version

    evicted = 0
    for mapping in (repo.by_document, repo.by_chunk):
        for key in list(mapping):
            kept = [ind for ind in mapping[key] if not is_stale(ind)]
            evicted += len(mapping[key]) - len(kept)
            if kept:
                mapping[key] = kept
            else:
                del mapping[key]
    return evicted


def indicator_to_record(ind: Indicator) -> dict:
    scope: dict[str, str]
    if isinstance(ind.scope, ChunkScope):
        scope = {"kind": "chunk", "id": ind.scope.chunk_id}
    else:
        scope = {"kind": "document", "id": ind.scope.doc_id}
    return {
        "query": ind.query,
        "embedding": ind.query_embedding.tolist(),
        "keywords": list(ind.keywords),
        "signal": ind.signal,
        "scope": scope,
        "source": ind.source.value,
        "created_at": ind.created_at,
        "doc_version": ind.doc_version,
    }


def indicator_from_record(record: Mapping) -> Indicator:
    scope_rec = record["scope"]
    scope: Scope
    if scope_rec["kind"] == "chunk":
        scope = ChunkScope(scope_rec["id"])
    elif scope_rec["kind"] == "document":
        scope = DocumentScope(scope_rec["id"])
    else:
        raise ValueError(f"unknown scope kind {scope_rec['kind']!r}")
    return Indicator(
        query=record["query"],
        query_embedding=Embedding(np.array(record["embedding"], dtype=np.float64)),
        keywords=tuple(record["keywords"]),
        signal=float(record["signal"]),
        scope=scope,
        source=Source(record["source"]),
        created_at=record["created_at"],
        doc_version=int(record["doc_version"]),
    )


def write_indicators_jsonl(indicators: Iterable[Indicator], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for ind in indicators:
            handle.write(json.dumps(indicator_to_record(ind), sort_keys=True) + "\n")


def read_indicators_jsonl(path: str | Path) -> list[Indicator]:
    out: list[Indicator] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                out.append(indicator_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: bad indicator on line {lineno}: {exc}") from exc
    return out
