"""Deterministic synthetic corpora for benchmarks and fixtures.

Documents are grouped into families sharing vocabulary, so dense retrieval
is ambiguous inside a family (several plausible documents per query) while
still carrying enough signal to be learnable. A separate fixture builder
produces queries whose vocabulary never appears in any document, seeding
the query/content misalignment that feedback indicators are meant to fix.
"""

from __future__ import annotations

import random

from .corpus import Document

_SYLLABLES = (
    "ba be bi bo bu da de di do du ka ke ki ko ku la le li lo lu ma me mi mo mu "
    "na ne ni no nu ra re ri ro ru sa se si so su ta te ti to tu va ve vi vo vu "
    "za ze zi zo zu gor gal pin mer tol vek rud haf lun dex".split()
)

_FILLER_SENTENCES = (
    "The service must be checked before it can be used again.",
    "This is not the only way to do it but it is the most common.",
    "When in doubt the team should be asked about the details.",
    "It can be done once the other steps are out of the way.",
    "Most of these will only be seen under very heavy use.",
)


def pseudo_word(rng: random.Random, min_syllables: int = 2, max_syllables: int = 3) -> str:
    count = rng.randint(min_syllables, max_syllables)
    return "".join(rng.choice(_SYLLABLES) for _ in range(count))


def pseudo_words(rng: random.Random, n: int) -> list[str]:
    """n distinct pseudo-words."""
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        word = pseudo_word(rng)
        if word not in seen:
            seen.add(word)
            out.append(word)
    return out


def _paragraph(
    rng: random.Random,
    family_words: list[str],
    doc_words: list[str],
    topic_words: list[str],
    target_chars: int,
) -> str:
    sentences: list[str] = []
    length = 0
    while length < target_chars:
        roll = rng.random()
        if roll < 0.45:
            sentence = (
                f"The {rng.choice(family_words)} {rng.choice(doc_words)} should be "
                f"set before the {rng.choice(family_words)} can use it."
            )
        elif roll < 0.75:
            sentence = (
                f"Run the {rng.choice(doc_words)} check when the "
                f"{rng.choice(family_words)} reports a {rng.choice(topic_words)} state."
            )
        elif roll < 0.9:
            sentence = (
                f"A {rng.choice(topic_words)} issue in the {rng.choice(family_words)} "
                f"often means the {rng.choice(family_words)} is out of date."
            )
        else:
            sentence = rng.choice(_FILLER_SENTENCES)
        sentences.append(sentence)
        length += len(sentence) + 1
    return " ".join(sentences)


def synthetic_corpus(
    seed: int,
    n_docs: int = 96,
    families: int = 8,
    chunks_per_doc: int = 5,
    paragraph_chars: int = 260,
) -> list[Document]:
    """A corpus of ``n_docs`` documents in ``families`` vocabulary families.

    Paragraphs are sized so the default fixture chunking (max_chunk_size
    around ``paragraph_chars`` + slack) yields roughly one chunk per
    paragraph, i.e. ``chunks_per_doc`` chunks per document.
    """
    rng = random.Random(seed)
    topic_words = pseudo_words(rng, 18)
    family_vocab = [pseudo_words(rng, 6) for _ in range(families)]
    documents: list[Document] = []
    for i in range(n_docs):
        family = i % families
        family_words = family_vocab[family]
        doc_words = pseudo_words(rng, 2)
        title = f"{family_words[0]} {doc_words[0]} handbook"
        paragraphs = [
            _paragraph(rng, family_words, doc_words, topic_words, paragraph_chars)
            for _ in range(chunks_per_doc)
        ]
        documents.append(
            Document(
                doc_id=f"doc-{i:04d}",
                title=title,
                body="\n\n".join(paragraphs),
                version=1,
            )
        )
    return documents


def misaligned_queries(
    seed: int,
    documents: list[Document],
    n_queries: int = 30,
) -> list[tuple[str, str]]:
    """(query, golden doc id) pairs whose vocabulary never appears in the corpus.

    Dense retrieval over these queries is noise, which is exactly the
    misalignment regime feedback indicators are designed to repair.
    """
    rng = random.Random(seed + 7919)
    taken = {
        token
        for doc in documents
        for token in (doc.title + " " + doc.body).lower().split()
    }
    queries: list[tuple[str, str]] = []
    used: set[str] = set()
    while len(queries) < n_queries:
        a, b = pseudo_word(rng, 3, 4), pseudo_word(rng, 3, 4)
        if a in taken or b in taken or a == b:
            continue
        query = f"resolve {a} {b} outage"
        if query in used:
            continue
        used.add(query)
        golden = documents[len(queries) % len(documents)].doc_id
        queries.append((query, golden))
    return queries
