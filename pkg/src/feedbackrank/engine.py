"""Engine facade: configuration, offline index build, online querying,
and feedback capture. The CLI and the HTTP service are both thin layers
over this module."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .corpus import (
    DEFAULT_MAX_CHUNK_SIZE,
    Chunk,
    Document,
    chunk_document,
    load_corpus,
)
from .embedding import (
    DEFAULT_DIM,
    CachedEmbeddingProvider,
    EmbeddingProvider,
    HashedEmbeddingProvider,
)
from .index import (
    DEFAULT_BM25_B,
    DEFAULT_BM25_K1,
    DEFAULT_DENSE_FIELDS,
    SearchIndex,
    build_index,
    load_index,
)
from .indicators import (
    DEFAULT_MAX_FEEDBACK_PER_DOC,
    DEFAULT_QUERIES_PER_CHUNK,
    FeedbackEvent,
    IndicatorRepository,
    TemplateQueryProvider,
    evict_stale,
    generate_synthetic_indicators,
    ingest_feedback,
    read_indicators_jsonl,
    write_indicators_jsonl,
)
from .ranker import (
    QueryBundle,
    QueryInput,
    RankedResult,
    RankerConfig,
    ScoredChunk,
    retrieve_adaptive,
)

logger = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    """Everything a deployment tunes, including all ranking knobs."""

    corpus_path: str = "corpus.jsonl"
    index_dir: str = "index"
    indicator_store_path: str = "indicators.jsonl"
    embedding_dim: int = DEFAULT_DIM
    embedding_cache_path: str | None = None
    queries_per_chunk: int = DEFAULT_QUERIES_PER_CHUNK
    max_feedback_per_doc: int = DEFAULT_MAX_FEEDBACK_PER_DOC
    max_chunk_size: int = DEFAULT_MAX_CHUNK_SIZE
    dense_fields: tuple[str, ...] = DEFAULT_DENSE_FIELDS
    use_synthetic_indicators: bool = True
    use_feedback_indicators: bool = True
    rank_refine_negative: bool = True
    bm25_k1: float = DEFAULT_BM25_K1
    bm25_b: float = DEFAULT_BM25_B
    ranker: RankerConfig = field(default_factory=RankerConfig)

    def __post_init__(self) -> None:
        self.dense_fields = tuple(self.dense_fields)
        if isinstance(self.ranker, dict):
            self.ranker = RankerConfig(**self.ranker)

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["dense_fields"] = list(self.dense_fields)
        return data


@dataclass(frozen=True)
class IndexStats:
    documents: int
    chunks: int
    synthetic_indicators: int
    feedback_indicators: int
    evicted: int


def _events_path(store_path: str | Path) -> Path:
    store = Path(store_path)
    return store.with_name(store.stem + "-events.jsonl")


def event_to_record(event: FeedbackEvent) -> dict:
    return {
        "query": event.query,
        "intent": event.rewritten_intent,
        "stars": event.star_rating,
        "docs": list(event.referenced_docs),
        "timestamp": event.timestamp,
    }


def event_from_record(record: dict) -> FeedbackEvent:
    return FeedbackEvent(
        query=record["query"],
        star_rating=int(record["stars"]),
        referenced_docs=tuple(record["docs"]),
        timestamp=record["timestamp"],
        rewritten_intent=record.get("intent"),
    )


def read_events_jsonl(path: str | Path) -> list[FeedbackEvent]:
    events: list[FeedbackEvent] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                events.append(event_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: bad feedback event on line {lineno}: {exc}") from exc
    return events


class Engine:
    """One retrieval engine instance bound to a config.

    ``corpus`` may be injected directly (benchmarks run fully in memory);
    otherwise documents are loaded from ``config.corpus_path``.
    """

    def __init__(
        self,
        config: EngineConfig,
        *,
        corpus: list[Document] | None = None,
        provider: EmbeddingProvider | None = None,
    ):
        self.config = config
        if provider is None:
            provider = HashedEmbeddingProvider(dim=config.embedding_dim)
            if config.embedding_cache_path:
                provider = CachedEmbeddingProvider(provider, config.embedding_cache_path)
        self.provider = provider
        self._corpus = corpus
        self._store_lock = threading.Lock()
        self.index: SearchIndex | None = None
        self.repo: IndicatorRepository | None = None

    # -- corpus and repository -------------------------------------------------

    def corpus(self) -> list[Document]:
        if self._corpus is None:
            self._corpus = load_corpus(self.config.corpus_path)
        return self._corpus

    def chunk_corpus(self) -> list[Chunk]:
        chunks: list[Chunk] = []
        for doc in self.corpus():
            chunks.extend(chunk_document(doc, self.config.max_chunk_size))
        return chunks

    def _load_feedback_repo(self) -> IndicatorRepository:
        repo = IndicatorRepository(self.config.max_feedback_per_doc)
        store_path = self.config.indicator_store_path
        if (
            self.config.use_feedback_indicators
            and store_path
            and Path(store_path).is_file()
        ):
            stored = read_indicators_jsonl(store_path)
            repo = IndicatorRepository.from_indicators(
                stored, self.config.max_feedback_per_doc
            )
        repo.register_documents(self.corpus())
        return repo

    # -- offline phase -----------------------------------------------------------

    def build(
        self,
        *,
        persist: bool = True,
        synthetic_exclude: frozenset[str] | set[str] = frozenset(),
    ) -> IndexStats:
        """Chunk the corpus, generate synthetic indicators, merge stored
        feedback (evicting stale entries), and build the search index.

        ``synthetic_exclude`` suppresses synthetic generation for specific
        chunk ids (evaluation harnesses hold chunks out this way).
        """
        documents = self.corpus()
        chunks = self.chunk_corpus()
        repo = self._load_feedback_repo()
        evicted = evict_stale(repo, documents)

        if self.config.use_synthetic_indicators:
            synth_provider = TemplateQueryProvider(self.config.queries_per_chunk)
            for chunk in chunks:
                if chunk.chunk_id in synthetic_exclude:
                    continue
                repo.add_synthetic(
                    generate_synthetic_indicators(chunk, synth_provider, self.provider)
                )

        index = build_index(
            chunks,
            repo,
            self.provider,
            dense_fields=self.config.dense_fields,
            bm25_k1=self.config.bm25_k1,
            bm25_b=self.config.bm25_b,
        )
        if persist:
            index.save(self.config.index_dir)
        self.index = index
        self.repo = repo
        counts = repo.counts()
        return IndexStats(
            documents=len(documents),
            chunks=len(chunks),
            synthetic_indicators=counts["synthetic"],
            feedback_indicators=counts["feedback"],
            evicted=evicted,
        )

    def rebuild_from_repo(self) -> None:
        """Rebuild the index in memory after repository mutations (no I/O)."""
        if self.repo is None:
            raise RuntimeError("no repository; call build() first")
        self.index = build_index(
            self.chunk_corpus(),
            self.repo,
            self.provider,
            dense_fields=self.config.dense_fields,
            bm25_k1=self.config.bm25_k1,
            bm25_b=self.config.bm25_b,
        )

    def load(self) -> None:
        """Load the persisted index artifacts."""
        self.index = load_index(self.config.index_dir, self.provider)

    # -- online phase -------------------------------------------------------------

    def bundle(self, query: str, intent: str | None = None) -> QueryBundle:
        inputs = [QueryInput(text=query, embedding=self.provider.embed(query))]
        if intent and intent.strip():
            inputs.append(QueryInput(text=intent, embedding=self.provider.embed(intent)))
        if len(inputs) > self.config.ranker.max_inputs:
            raise ValueError(f"at most {self.config.ranker.max_inputs} query inputs allowed")
        return QueryBundle(inputs=tuple(inputs))

    def query(
        self,
        query: str,
        intent: str | None = None,
        k: int | None = None,
        threshold: float | None = None,
    ) -> RankedResult:
        if self.index is None:
            raise RuntimeError("index not built or loaded")
        cfg = self.config.ranker
        if k is not None or threshold is not None:
            cfg = replace(
                cfg,
                top_k=k if k is not None else cfg.top_k,
                threshold=threshold if threshold is not None else cfg.threshold,
            )
        return retrieve_adaptive(self.index, self.bundle(query, intent), cfg)

    # -- feedback capture ----------------------------------------------------------

    def record_feedback(self, event: FeedbackEvent) -> tuple[int, list[str]]:
        """Append the event to the event log and fold it into the indicator
        store with per-document trimming. Takes effect at the next build.

        Returns (indicators written, skipped unknown doc ids).
        """
        if not self.config.indicator_store_path:
            raise ValueError("no indicator store path configured")
        with self._store_lock:
            repo = IndicatorRepository(self.config.max_feedback_per_doc)
            store = Path(self.config.indicator_store_path)
            if store.is_file():
                repo = IndicatorRepository.from_indicators(
                    read_indicators_jsonl(store), self.config.max_feedback_per_doc
                )
            repo.register_documents(self.corpus())
            written = ingest_feedback(
                repo, event, self.provider, self.config.rank_refine_negative
            )
            known = set(repo.doc_versions)
            skipped = [d for d in event.referenced_docs if d not in known]
            store.parent.mkdir(parents=True, exist_ok=True)
            write_indicators_jsonl(repo.feedback_indicators(), store)
            events_path = _events_path(store)
            with open(events_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(event_to_record(event), sort_keys=True) + "\n")
        return written, skipped


def result_records(result: RankedResult) -> list[dict]:
    """Serialize a ranked result into the stable output schema."""
    return [
        {
            "chunk_id": chunk.chunk_id,
            "doc_id": chunk.doc_id,
            "vote": chunk.vote_score,
            "rrf": chunk.rrf_score,
            "round": result.rounds,
            "indicators": [
                {"query": c.query, "signal": c.signal, "c": c.c}
                for c in chunk.contributing
            ],
        }
        for chunk in result.chunks
    ]


def retrieved_doc_ids(chunks: tuple[ScoredChunk, ...] | list[ScoredChunk]) -> list[str]:
    """Ordered unique document ids from a ranked chunk list."""
    seen: set[str] = set()
    out: list[str] = []
    for chunk in chunks:
        if chunk.doc_id not in seen:
            seen.add(chunk.doc_id)
            out.append(chunk.doc_id)
    return out
