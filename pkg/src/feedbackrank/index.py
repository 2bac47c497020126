"""Searchable store over chunks and their attached indicators.

Text fields carry an Okapi BM25 inverted index; embedding fields are exact
brute-force cosine scans (corpora here are hundreds to a few thousand
chunks, so the scan IS the index). Document-scoped indicators attach to
every chunk of their document; chunk-scoped indicators attach to their
chunk only. The index is immutable after build: rebuilds produce a new
value the caller swaps in.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import Chunk
from .embedding import Embedding, EmbeddingProvider, tokenize
from .indicators import (
    AttachedIndicators,
    ChunkScope,
    Indicator,
    IndicatorRepository,
    extract_keywords,
    indicator_from_record,
    indicator_to_record,
)
from .ranker import CandidatePool, FieldRankedList, QueryBundle, fuse_lists

logger = logging.getLogger(__name__)

DEFAULT_DENSE_FIELDS = ("title", "content", "title_embedding", "content_embedding")
TEXT_FIELDS = ("title", "content", "keywords", "indicator_query")
VECTOR_FIELDS = ("title_embedding", "content_embedding", "indicator_embedding")

DEFAULT_BM25_K1 = 1.2
DEFAULT_BM25_B = 0.75


class _TextFieldIndex:
    """Okapi BM25 over one text field; rows may be a sparse subset of chunks."""

    def __init__(self, tokens_by_row: dict[int, list[str]], k1: float, b: float):
        self.k1 = k1
        self.b = b
        self.n = len(tokens_by_row)
        self.doc_len = {row: len(tokens) for row, tokens in tokens_by_row.items()}
        total = sum(self.doc_len.values())
        self.avgdl = total / self.n if self.n else 0.0
        self.term_freqs = {row: Counter(tokens) for row, tokens in tokens_by_row.items()}
        df: Counter[str] = Counter()
        for freqs in self.term_freqs.values():
            df.update(freqs.keys())
        self.df = dict(df)
        # Lucene-style idf: always positive, so tscore stays non-negative.
        self.idf = {
            term: math.log(1.0 + (self.n - n_t + 0.5) / (n_t + 0.5))
            for term, n_t in self.df.items()
        }
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for row in sorted(self.term_freqs):
            for term, tf in self.term_freqs[row].items():
                self.postings.setdefault(term, []).append((row, tf))

    def _term_score(self, term: str, tf: int, row: int) -> float:
        norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[row] / self.avgdl)
        return self.idf[term] * tf * (self.k1 + 1.0) / (tf + norm)

    def score_one(self, query_tokens: list[str], row: int) -> float:
        freqs = self.term_freqs.get(row)
        if not freqs or self.avgdl == 0.0:
            return 0.0
        score = 0.0
        for term in query_tokens:
            tf = freqs.get(term)
            if tf:
                score += self._term_score(term, tf, row)
        return score

    def score_matching(self, query_tokens: list[str]) -> dict[int, float]:
        """Scores for every row containing at least one query term."""
        if self.avgdl == 0.0:
            return {}
        scores: dict[int, float] = {}
        for term in query_tokens:
            for row, tf in self.postings.get(term, ()):
                scores[row] = scores.get(row, 0.0) + self._term_score(term, tf, row)
        return scores

    def stats(self) -> dict:
        return {"docs": self.n, "avgdl": self.avgdl, "terms": len(self.df)}


class _VectorFieldIndex:
    """Brute-force cosine scan over one embedding field."""

    def __init__(self, rows: list[int], matrix: np.ndarray):
        self.rows = np.array(rows, dtype=np.int64)
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("zero-norm embedding in vector field")
        self.unit = matrix / norms

    def vscores(self, query: Embedding) -> np.ndarray:
        qnorm = query.norm()
        if qnorm == 0.0:
            raise ValueError("zero-norm query embedding")
        if query.dim != self.unit.shape[1]:
            raise ValueError(
                f"embedding dimension mismatch: {query.dim} != {self.unit.shape[1]}"
            )
        cos = np.clip(self.unit @ (query.values / qnorm), -1.0, 1.0)
        return 1.0 / (2.0 - cos)

    def stats(self) -> dict:
        return {"docs": int(self.rows.shape[0]), "dim": int(self.unit.shape[1])}


class SearchIndex:
    """Immutable search structure over chunks plus attached indicators."""

    def __init__(
        self,
        chunks: list[Chunk],
        repo: IndicatorRepository,
        provider: EmbeddingProvider,
        *,
        dense_fields: Iterable[str] = DEFAULT_DENSE_FIELDS,
        bm25_k1: float = DEFAULT_BM25_K1,
        bm25_b: float = DEFAULT_BM25_B,
    ):
        ids = [c.chunk_id for c in chunks]
        if len(set(ids)) != len(ids):
            dupes = sorted({cid for cid in ids if ids.count(cid) > 1})
            raise ValueError(f"duplicate chunk ids: {dupes}")
        self.provider = provider
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b
        self.dense_fields = tuple(dense_fields)
        unknown = set(self.dense_fields) - set(TEXT_FIELDS) - set(VECTOR_FIELDS)
        if unknown:
            raise ValueError(f"unknown dense fields: {sorted(unknown)}")

        self._chunks = list(chunks)
        self._row_of = {c.chunk_id: i for i, c in enumerate(self._chunks)}
        self.chunk_table: dict[str, Chunk] = {c.chunk_id: c for c in self._chunks}
        self._doc_of = {c.chunk_id: c.doc_id for c in self._chunks}
        self._attach_indicators(repo)
        self._build_fields(provider)

    def _attach_indicators(self, repo: IndicatorRepository) -> None:
        chunks_by_doc: dict[str, list[str]] = {}
        for chunk in self._chunks:
            chunks_by_doc.setdefault(chunk.doc_id, []).append(chunk.chunk_id)

        per_chunk: dict[str, list[Indicator]] = {}
        for doc_id in sorted(repo.by_document):
            targets = chunks_by_doc.get(doc_id)
            if not targets:
                logger.warning("indicator references unknown document %r; skipped", doc_id)
                continue
            for chunk_id in targets:
                per_chunk.setdefault(chunk_id, []).extend(repo.by_document[doc_id])
        for chunk_id in sorted(repo.by_chunk):
            if chunk_id not in self._row_of:
                logger.warning("indicator references unknown chunk %r; skipped", chunk_id)
                continue
            per_chunk.setdefault(chunk_id, []).extend(repo.by_chunk[chunk_id])

        self.attached: dict[str, AttachedIndicators] = {
            chunk_id: AttachedIndicators(inds) for chunk_id, inds in per_chunk.items()
        }

    def _build_fields(self, provider: EmbeddingProvider) -> None:
        rows = range(len(self._chunks))
        title_tokens = {r: tokenize(self._chunks[r].title) for r in rows}
        content_tokens = {r: tokenize(self._chunks[r].content) for r in rows}
        keyword_tokens = {r: extract_keywords(self._chunks[r].content) for r in rows}
        indicator_tokens: dict[int, list[str]] = {}
        for chunk_id, attached in self.attached.items():
            joined: list[str] = []
            for ind in attached.indicators:
                joined.extend(tokenize(ind.query))
            indicator_tokens[self._row_of[chunk_id]] = joined

        self.text_fields: dict[str, _TextFieldIndex] = {
            "title": _TextFieldIndex(title_tokens, self.bm25_k1, self.bm25_b),
            "content": _TextFieldIndex(content_tokens, self.bm25_k1, self.bm25_b),
            "keywords": _TextFieldIndex(keyword_tokens, self.bm25_k1, self.bm25_b),
            "indicator_query": _TextFieldIndex(indicator_tokens, self.bm25_k1, self.bm25_b),
        }

        self.vector_fields: dict[str, _VectorFieldIndex] = {}
        if self._chunks:
            titles = np.stack(
                [provider.embed(c.title or c.chunk_id).values for c in self._chunks]
            )
            contents = np.stack([provider.embed(c.content).values for c in self._chunks])
            self.vector_fields["title_embedding"] = _VectorFieldIndex(list(rows), titles)
            self.vector_fields["content_embedding"] = _VectorFieldIndex(list(rows), contents)

        # One row per (chunk, indicator) pair; probes max-aggregate per chunk.
        self._indicator_rows: np.ndarray | None = None
        self._indicator_unit: np.ndarray | None = None
        pair_rows: list[int] = []
        pair_vectors: list[np.ndarray] = []
        for chunk_id in sorted(self.attached):
            attached = self.attached[chunk_id]
            for i in range(len(attached)):
                pair_rows.append(self._row_of[chunk_id])
                pair_vectors.append(attached.unit_embeddings[i])
        if pair_rows:
            self._indicator_rows = np.array(pair_rows, dtype=np.int64)
            self._indicator_unit = np.stack(pair_vectors)

    # -- basic surface -----------------------------------------------------

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def chunks(self) -> list[Chunk]:
        return list(self._chunks)

    def indicator_count(self) -> int:
        return 0 if self._indicator_rows is None else int(self._indicator_rows.shape[0])

    def field_stats(self) -> dict:
        stats: dict[str, dict] = {name: f.stats() for name, f in self.text_fields.items()}
        stats.update({name: f.stats() for name, f in self.vector_fields.items()})
        stats["indicator_embedding"] = {"pairs": self.indicator_count()}
        return stats

    # -- scoring -----------------------------------------------------------

    def tscore(self, field: str, query: str, chunk_id: str) -> float:
        """Okapi BM25 score of one chunk for a text query; 0 when nothing matches."""
        if field not in TEXT_FIELDS:
            raise ValueError(f"unknown text field {field!r}")
        row = self._row_of.get(chunk_id)
        if row is None:
            raise ValueError(f"unknown chunk {chunk_id!r}")
        return self.text_fields[field].score_one(tokenize(query), row)

    def search_field(self, field: str, query: str | Embedding, m: int) -> FieldRankedList:
        """Top-m chunks by one field's score; ties break by ascending chunk_id.

        Text fields return only chunks containing at least one query term;
        vector fields rank every chunk carrying the field.
        """
        if m < 1:
            raise ValueError("m must be >= 1")
        if isinstance(query, Embedding):
            if field not in VECTOR_FIELDS:
                raise ValueError(f"unknown vector field {field!r}")
            if not self._chunks:
                return FieldRankedList(field=field, entries=())
            if field == "indicator_embedding":
                scores = self._probe_indicators(query)
            else:
                vfield = self.vector_fields[field]
                values = vfield.vscores(query)
                scores = {
                    self._chunks[int(row)].chunk_id: float(values[i])
                    for i, row in enumerate(vfield.rows)
                }
        else:
            if field not in TEXT_FIELDS:
                raise ValueError(f"unknown text field {field!r}")
            by_row = self.text_fields[field].score_matching(tokenize(query))
            scores = {self._chunks[row].chunk_id: s for row, s in by_row.items()}
        return FieldRankedList.from_scores(field, scores, m)

    def _probe_indicators(self, query: Embedding) -> dict[str, float]:
        """vscore of the best-matching indicator per chunk (max-aggregation)."""
        if self._indicator_unit is None:
            return {}
        qnorm = query.norm()
        if qnorm == 0.0:
            raise ValueError("zero-norm query embedding")
        if query.dim != self._indicator_unit.shape[1]:
            raise ValueError("embedding dimension mismatch for indicator probe")
        cos = np.clip(self._indicator_unit @ (query.values / qnorm), -1.0, 1.0)
        values = 1.0 / (2.0 - cos)
        best = np.full(len(self._chunks), -np.inf)
        np.maximum.at(best, self._indicator_rows, values)
        return {
            self._chunks[row].chunk_id: float(best[row])
            for row in np.nonzero(best > -np.inf)[0]
        }

    # -- retrieval strategies ------------------------------------------------

    def hybrid_search(
        self,
        inputs: QueryBundle,
        m: int,
        dense_fields: Iterable[str] | None = None,
        rrf_constant: float = 60.0,
    ) -> tuple[list[FieldRankedList], list[tuple[str, float]]]:
        """Probe every (input, dense field) pair and fuse the lists by rrf.

        Returns (constituent lists, fused top-m) — the constituent lists feed
        the downstream two-track re-rank.
        """
        fields = tuple(dense_fields) if dense_fields is not None else self.dense_fields
        if not fields:
            raise ValueError("dense_fields must be non-empty")
        constituents: list[FieldRankedList] = []
        for input_idx, query_input in enumerate(inputs.inputs):
            for field in fields:
                probe: str | Embedding
                probe = query_input.embedding if field in VECTOR_FIELDS else query_input.text
                ranked = self.search_field(field, probe, m)
                constituents.append(
                    FieldRankedList(field=f"{field}:{input_idx}", entries=ranked.entries)
                )
        fused = fuse_lists(constituents, rrf_constant)[:m]
        return constituents, fused

    def indicator_probe(self, inputs: QueryBundle, m: int) -> list[FieldRankedList]:
        """One vector search per input against the indicator embeddings.

        Each chunk scores as its best-matching indicator; chunks without
        indicators never match.
        """
        probes: list[FieldRankedList] = []
        for input_idx, query_input in enumerate(inputs.inputs):
            scores = self._probe_indicators(query_input.embedding)
            probes.append(
                FieldRankedList.from_scores(f"indicator_embedding:{input_idx}", scores, m)
            )
        return probes

    def build_candidate_pool(
        self,
        inputs: QueryBundle,
        hybrid_m: int,
        indicator_m: int,
        rrf_constant: float = 60.0,
        dense_fields: Iterable[str] | None = None,
    ) -> CandidatePool:
        """Union the hybrid-search and indicator-probe results into one pool."""
        constituents, _ = self.hybrid_search(inputs, hybrid_m, dense_fields, rrf_constant)
        probes = [p for p in self.indicator_probe(inputs, indicator_m) if len(p)]
        union: set[str] = set()
        for ranked in constituents:
            union.update(ranked.chunk_ids())
        for ranked in probes:
            union.update(ranked.chunk_ids())
        per_strategy: dict[str, tuple[FieldRankedList, ...]] = {
            "hybrid": tuple(constituents)
        }
        if probes:
            per_strategy["indicator"] = tuple(probes)
        return CandidatePool(
            chunks=frozenset(union),
            per_strategy=per_strategy,
            attached=self.attached,
            doc_of=self._doc_of,
            index_size=len(self._chunks),
        )

    # -- persistence ---------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write JSONL artifacts sufficient to rebuild this index deterministically."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "chunks.jsonl", "w", encoding="utf-8") as handle:
            for chunk in self._chunks:
                handle.write(
                    json.dumps(
                        {
                            "chunk_id": chunk.chunk_id,
                            "doc_id": chunk.doc_id,
                            "ordinal": chunk.ordinal,
                            "title": chunk.title,
                            "content": chunk.content,
                            "content_length": chunk.content_length,
                            "doc_version": chunk.doc_version,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        with open(directory / "indicators.jsonl", "w", encoding="utf-8") as handle:
            for chunk_id in sorted(self.attached):
                for ind in self.attached[chunk_id].indicators:
                    record = indicator_to_record(ind)
                    record["attached_to"] = chunk_id
                    handle.write(json.dumps(record, sort_keys=True) + "\n")
        meta = {
            "embedding": {"name": self.provider.name, "dim": self.provider.dim},
            "bm25": {"k1": self.bm25_k1, "b": self.bm25_b},
            "dense_fields": list(self.dense_fields),
            "chunk_count": len(self._chunks),
            "indicator_pairs": self.indicator_count(),
            "field_stats": self.field_stats(),
        }
        with open(directory / "meta.json", "w", encoding="utf-8") as handle:
            json.dump(meta, handle, indent=2, sort_keys=True)
            handle.write("\n")


def build_index(
    chunks: list[Chunk],
    repo: IndicatorRepository,
    provider: EmbeddingProvider,
    *,
    dense_fields: Iterable[str] = DEFAULT_DENSE_FIELDS,
    bm25_k1: float = DEFAULT_BM25_K1,
    bm25_b: float = DEFAULT_BM25_B,
) -> SearchIndex:
    """Build an immutable SearchIndex from chunks and an indicator repository."""
    return SearchIndex(
        chunks,
        repo,
        provider,
        dense_fields=dense_fields,
        bm25_k1=bm25_k1,
        bm25_b=bm25_b,
    )


def load_index(directory: str | Path, provider: EmbeddingProvider) -> SearchIndex:
    """Rebuild a SearchIndex from persisted artifacts.

    Chunk embeddings are recomputed (deterministic providers make this
    byte-stable); indicator embeddings are read back from the artifacts.
    """
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no index artifacts at {directory}")
    with open(meta_path, encoding="utf-8") as handle:
        meta = json.load(handle)
    if meta["embedding"]["name"] != provider.name or meta["embedding"]["dim"] != provider.dim:
        raise ValueError(
            "index was built with embedding provider "
            f"{meta['embedding']['name']}/{meta['embedding']['dim']}, "
            f"got {provider.name}/{provider.dim}"
        )

    chunks: list[Chunk] = []
    with open(directory / "chunks.jsonl", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            rec = json.loads(line)
            chunks.append(
                Chunk(
                    chunk_id=rec["chunk_id"],
                    doc_id=rec["doc_id"],
                    ordinal=rec["ordinal"],
                    title=rec["title"],
                    content=rec["content"],
                    content_length=rec["content_length"],
                    doc_version=rec["doc_version"],
                )
            )

    repo = IndicatorRepository()
    indicators_path = directory / "indicators.jsonl"
    if indicators_path.exists():
        with open(indicators_path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                rec = json.loads(line)
                ind = indicator_from_record(rec)
                if isinstance(ind.scope, ChunkScope):
                    repo.by_chunk.setdefault(ind.scope.chunk_id, []).append(ind)
                elif rec.get("attached_to") == f"{ind.scope.doc_id}#0":
                    # Document-scoped indicators are written once per attached
                    # chunk; rebuild from the first chunk's copies only.
                    repo.by_document.setdefault(ind.scope.doc_id, []).append(ind)

    return SearchIndex(
        chunks,
        repo,
        provider,
        dense_fields=tuple(meta["dense_fields"]),
        bm25_k1=meta["bm25"]["k1"],
        bm25_b=meta["bm25"]["b"],
    )
