"""Document model, deterministic chunking, and JSONL corpus ingestion."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

DEFAULT_MAX_CHUNK_SIZE = 2000

_BLANK_LINE = re.compile(r"\n\s*\n")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_HEADING = re.compile(r"^#{1,6}\s+(?P<text>\S.*)$")


@dataclass(frozen=True)
class Document:
    """A knowledge-base document. ``version`` increases on every content change."""

    doc_id: str
    title: str
    body: str
    version: int = 1


@dataclass(frozen=True)
class Chunk:
    """A contiguous slice of a document; the unit of retrieval.

    ``chunk_id`` is ``<doc_id>#<ordinal>`` so chunks join back to their
    document for document-granularity indicators. ``doc_version`` is copied
    from the source document so stale indicators can be evicted later.
    """

    chunk_id: str
    doc_id: str
    ordinal: int
    title: str
    content: str
    content_length: int
    doc_version: int = 1


def _split_oversized(piece: str, limit: int) -> list[str]:
    """Break one piece into parts of at most ``limit`` chars.

    Prefers sentence boundaries; falls back to hard character slices.
    """
    if len(piece) <= limit:
        return [piece]
    sentences = [s for s in _SENTENCE_END.split(piece) if s.strip()]
    if len(sentences) > 1:
        out: list[str] = []
        for sentence in sentences:
            out.extend(_split_oversized(sentence, limit))
        return out
    return [piece[i : i + limit] for i in range(0, len(piece), limit)]


def _pack(pieces: list[str], sep: str, limit: int) -> list[str]:
    """Greedily join pieces (each already <= limit) without exceeding limit."""
    groups: list[str] = []
    current: list[str] = []
    current_len = 0
    for piece in pieces:
        joined_len = current_len + len(sep) + len(piece) if current else len(piece)
        if current and joined_len > limit:
            groups.append(sep.join(current))
            current = [piece]
            current_len = len(piece)
        else:
            current.append(piece)
            current_len = joined_len
    if current:
        groups.append(sep.join(current))
    return groups


def _chunk_title(doc: Document, content: str) -> str:
    base = doc.title.strip() or doc.doc_id
    heading = _HEADING.match(content.split("\n", 1)[0])
    if heading:
        return f"{base}: {heading.group('text').strip()}"
    return base


def chunk_document(doc: Document, max_chunk_size: int = DEFAULT_MAX_CHUNK_SIZE) -> list[Chunk]:
    """Split a document into chunks of at most ``max_chunk_size`` characters.

    Boundaries prefer blank-line paragraph breaks, then sentence ends, then
    hard character splits. Deterministic: the same (document, size) always
    yields the same chunks, and concatenating the chunks reproduces the body
    modulo boundary whitespace.
    """
    if max_chunk_size < 1:
        raise ValueError("max_chunk_size must be >= 1")
    if not doc.body.strip():
        raise ValueError(f"empty document: {doc.doc_id}")

    paragraphs = [p.strip() for p in _BLANK_LINE.split(doc.body) if p.strip()]
    units: list[str] = []
    for paragraph in paragraphs:
        if len(paragraph) <= max_chunk_size:
            units.append(paragraph)
        else:
            pieces = _split_oversized(paragraph, max_chunk_size)
            units.extend(_pack(pieces, " ", max_chunk_size))

    contents = _pack(units, "\n\n", max_chunk_size)
    return [
        Chunk(
            chunk_id=f"{doc.doc_id}#{i}",
            doc_id=doc.doc_id,
            ordinal=i,
            title=_chunk_title(doc, content),
            content=content,
            content_length=len(content),
            doc_version=doc.version,
        )
        for i, content in enumerate(contents)
    ]


_REQUIRED_FIELDS = {"doc_id": str, "title": str, "body": str, "version": int}


def load_corpus(path: str | Path) -> list[Document]:
    """Load documents from a JSONL file, one object per line.

    Raises ValueError with the offending line number for malformed lines and
    names the id for duplicate ``doc_id`` entries.
    """
    documents: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if not isinstance(record, dict):
                raise ValueError(f"{path}: line {lineno} is not an object")
            for field, expected in _REQUIRED_FIELDS.items():
                if field not in record:
                    raise ValueError(f"{path}: line {lineno} missing field {field!r}")
                if not isinstance(record[field], expected) or isinstance(record[field], bool):
                    raise ValueError(
                        f"{path}: line {lineno} field {field!r} must be {expected.__name__}"
                    )
            doc_id = record["doc_id"]
            if doc_id in seen:
                raise ValueError(f"{path}: duplicate doc_id {doc_id!r} on line {lineno}")
            seen.add(doc_id)
            documents.append(
                Document(
                    doc_id=doc_id,
                    title=record["title"],
                    body=record["body"],
                    version=record["version"],
                )
            )
    return documents


def dump_corpus(documents: list[Document], path: str | Path) -> None:
    """Write documents to a JSONL corpus file (inverse of load_corpus)."""
    with open(path, "w", encoding="utf-8") as handle:
        for doc in documents:
            handle.write(
                json.dumps(
                    {
                        "doc_id": doc.doc_id,
                        "title": doc.title,
                        "body": doc.body,
                        "version": doc.version,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
