"""Chunking and corpus loading."""

import random

import pytest

from feedbackrank.corpus import Document, chunk_document, dump_corpus, load_corpus


def strip_ws(text: str) -> str:
    return "".join(text.split())


def test_small_body_single_chunk():
    doc = Document(doc_id="d1", title="T", body="A.\n\nB.")
    chunks = chunk_document(doc, max_chunk_size=100)
    assert len(chunks) == 1
    assert chunks[0].content == "A.\n\nB."


def test_paragraph_boundary_split():
    doc = Document(doc_id="d1", title="T", body="A.\n\nB.")
    chunks = chunk_document(doc, max_chunk_size=3)
    assert [c.content for c in chunks] == ["A.", "B."]
    assert [c.chunk_id for c in chunks] == ["d1#0", "d1#1"]
    assert [c.ordinal for c in chunks] == [0, 1]


def test_large_body_reconcatenation():
    # Oracle: whitespace-stripped concatenation must reproduce the body.
    rng = random.Random(42)
    words = ["".join(rng.choice("abcdefg") for _ in range(rng.randint(3, 9))) for _ in range(40)]
    paragraphs = []
    while sum(len(p) for p in paragraphs) < 10_000:
        sentence_count = rng.randint(2, 6)
        sentences = [
            " ".join(rng.choice(words) for _ in range(rng.randint(5, 25))) + "."
            for _ in range(sentence_count)
        ]
        paragraphs.append(" ".join(sentences))
    body = "\n\n".join(paragraphs)
    doc = Document(doc_id="big", title="Big", body=body)

    chunks = chunk_document(doc, max_chunk_size=2000)
    assert len(chunks) >= 5
    assert all(c.content_length <= 2000 for c in chunks)
    assert all(c.content_length == len(c.content) for c in chunks)
    assert strip_ws("".join(c.content for c in chunks)) == strip_ws(body)


def test_oversized_sentence_hard_split():
    body = "x" * 50
    chunks = chunk_document(Document("d", "T", body), max_chunk_size=20)
    assert all(len(c.content) <= 20 for c in chunks)
    assert strip_ws("".join(c.content for c in chunks)) == body


def test_sentence_boundary_preferred_over_hard_split():
    body = "First sentence here. Second sentence there. Third one now."
    chunks = chunk_document(Document("d", "T", body), max_chunk_size=30)
    assert all(len(c.content) <= 30 for c in chunks)
    # Each chunk should end at a sentence boundary, not mid-word.
    assert all(c.content.rstrip().endswith(".") for c in chunks)


def test_chunking_deterministic():
    rng = random.Random(7)
    body = "\n\n".join(
        " ".join(rng.choice("lorem ipsum dolor sit amet".split()) for _ in range(60)) + "."
        for _ in range(10)
    )
    doc = Document("d", "T", body)
    first = chunk_document(doc, max_chunk_size=200)
    second = chunk_document(doc, max_chunk_size=200)
    assert first == second


def test_empty_body_rejected():
    with pytest.raises(ValueError, match="empty document"):
        chunk_document(Document("d", "T", "   \n "), max_chunk_size=10)


def test_bad_max_chunk_size_rejected():
    with pytest.raises(ValueError):
        chunk_document(Document("d", "T", "body"), max_chunk_size=0)


def test_heading_folded_into_title():
    body = "# Setup steps\nInstall the tool first.\n\nThen run it."
    chunks = chunk_document(Document("d", "Guide", body), max_chunk_size=45)
    assert chunks[0].title == "Guide: Setup steps"
    assert chunks[1].title == "Guide"


def test_empty_title_falls_back_to_doc_id():
    chunks = chunk_document(Document("doc-9", "", "Some body."), max_chunk_size=100)
    assert chunks[0].title == "doc-9"


def test_load_corpus_two_lines(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"doc_id": "a", "title": "A", "body": "aaa", "version": 1}\n'
        '{"doc_id": "b", "title": "B", "body": "bbb", "version": 2}\n'
    )
    docs = load_corpus(path)
    assert [d.doc_id for d in docs] == ["a", "b"]
    assert docs[1].version == 2


def test_load_corpus_duplicate_id_names_it(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"doc_id": "a", "title": "A", "body": "aaa", "version": 1}\n'
        '{"doc_id": "a", "title": "A2", "body": "xxx", "version": 1}\n'
    )
    with pytest.raises(ValueError, match="duplicate doc_id 'a'"):
        load_corpus(path)


def test_load_corpus_empty_file(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text("")
    assert load_corpus(path) == []


def test_load_corpus_malformed_line_reports_number(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"doc_id": "a", "title": "A", "body": "aaa", "version": 1}\n'
        "not json\n"
    )
    with pytest.raises(ValueError, match="line 2"):
        load_corpus(path)


def test_load_corpus_missing_field_reports_number(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"doc_id": "a", "title": "A", "version": 1}\n')
    with pytest.raises(ValueError, match="line 1.*body"):
        load_corpus(path)


def test_dump_load_roundtrip(tmp_path):
    docs = [
        Document("a", "A", "body one.", 1),
        Document("b", "B", "body two.\n\nMore.", 3),
    ]
    path = tmp_path / "corpus.jsonl"
    dump_corpus(docs, path)
    assert load_corpus(path) == docs
