"""Retrieval quality metrics."""

from __future__ import annotations

from collections.abc import Sequence, Set
from dataclasses import dataclass


@dataclass(frozen=True)
class EvalRecord:
    """One evaluated query: its golden documents and what was retrieved."""

    query: str
    golden: frozenset[str]
    retrieved: tuple[str, ...]
    config_name: str


def recall(golden: Set[str], retrieved: Sequence[str], k: int) -> float:
    """|golden ∩ top-k retrieved| / |golden|."""
    if not golden:
        raise ValueError("golden set must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    top = set(retrieved[:k])
    return len(golden & top) / len(golden)


def hit_at_n(golden: Set[str], retrieved: Sequence[str], n: int) -> int:
    """1 iff at least one golden document appears in the top-n results."""
    if not golden:
        raise ValueError("golden set must be non-empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    return 1 if golden & set(retrieved[:n]) else 0


def doc_set_similarity(old_retrieved: Set[str], new_retrieved: Set[str]) -> float:
    """|old ∩ new| / |old| — overlap between two retrieved document sets.

    Lower values indicate greater divergence from the old retrieval.
    """
    if not old_retrieved:
        raise ValueError("old retrieved set must be non-empty")
    return len(set(old_retrieved) & set(new_retrieved)) / len(old_retrieved)
