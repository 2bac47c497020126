"""Two-track scoring and re-ranking.

Track one is reciprocal rank fusion over the per-field ranked lists that
retrieved a chunk; track two is the vote: a threshold-gated, similarity-
weighted mean of the signals of the indicators attached to the chunk. The
final order is (vote desc, rrf desc, chunk_id asc) after negative-vote
pruning and per-vote-group filters, with an expansion loop that doubles
fetch sizes until enough chunks survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

from .embedding import Embedding
from .indicators import AttachedIndicators

if TYPE_CHECKING:  # pragma: no cover - import only for type hints
    from .index import SearchIndex

DEFAULT_RRF_CONSTANT = 60.0
DEFAULT_INDICATOR_FETCH = 50
VOTE_GROUP_DECIMALS = 6


@dataclass(frozen=True)
class QueryInput:
    text: str
    embedding: Embedding


@dataclass(frozen=True)
class QueryBundle:
    """The set of user inputs: the raw query plus optional rewrites."""

    inputs: tuple[QueryInput, ...]

    def __post_init__(self) -> None:
        if not self.inputs:
            raise ValueError("query bundle must contain at least one input")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    def unit_matrix(self) -> np.ndarray:
        matrix = np.stack([q.embedding.values for q in self.inputs])
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("query embedding with zero norm")
        return matrix / norms


@dataclass(frozen=True)
class FieldRankedList:
    """Chunks ordered by one field's raw score, best first.

    Scores are non-increasing; ties break by ascending chunk_id. Ranks are
    1-based.
    """

    field: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(
            self, "_ranks", {cid: i for i, (cid, _) in enumerate(self.entries, 1)}
        )

    @classmethod
    def from_scores(cls, field: str, scores: Mapping[str, float], m: int) -> "FieldRankedList":
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(field=field, entries=tuple(ordered[:m]))

    def rank_of(self, chunk_id: str) -> int | None:
        return self._ranks.get(chunk_id)  # type: ignore[attr-defined]

    def chunk_ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CandidatePool:
    """Union of the chunks retrieved by every strategy, plus everything the
    re-ranker needs: the constituent ranked lists, per-chunk indicator
    attachments, and the chunk-to-document mapping."""

    chunks: frozenset[str]
    per_strategy: dict[str, tuple[FieldRankedList, ...]]
    attached: Mapping[str, AttachedIndicators]
    doc_of: Mapping[str, str]
    index_size: int

    def all_lists(self) -> list[FieldRankedList]:
        out: list[FieldRankedList] = []
        for strategy in sorted(self.per_strategy):
            out.extend(self.per_strategy[strategy])
        return out


@dataclass(frozen=True)
class IndicatorContribution:
    """One admitted (indicator, input) pair, for explainability."""

    query: str
    signal: float
    c: float


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    doc_id: str
    rrf_score: float
    vote_score: float
    vote_group: float
    contributing: tuple[IndicatorContribution, ...] = ()


@dataclass(frozen=True)
class RankedResult:
    chunks: tuple[ScoredChunk, ...]
    rounds: int


@dataclass
class RankerConfig:
    """Every re-ranking tunable.

    threshold: minimum vscore between an input and an indicator query for
        the indicator to count toward the vote.
    group_truncation: chunks kept per non-zero vote group, by rrf.
    margin_percent: optional within-group filter dropping chunks whose rrf
        falls below this fraction of the group's best rrf (disabled by default).
    expansion_target: fraction of top_k that must survive re-ranking before
        the retrieval loop stops expanding.
    hybrid_fetch: initial fetch size for the hybrid dense search (defaults
        to top_k); indicator_fetch: initial fetch size per indicator probe.
    """

    threshold: float = 0.75
    top_k: int = 10
    group_truncation: int = 1
    margin_percent: float | None = None
    expansion_target: float = 0.5
    max_expansion_rounds: int = 4
    rrf_constant: float = DEFAULT_RRF_CONSTANT
    hybrid_fetch: int | None = None
    indicator_fetch: int = DEFAULT_INDICATOR_FETCH
    max_inputs: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.group_truncation < 1:
            raise ValueError("group_truncation must be >= 1")
        if self.margin_percent is not None and not 0.0 < self.margin_percent <= 1.0:
            raise ValueError("margin_percent must be in (0, 1]")
        if not 0.0 < self.expansion_target <= 1.0:
            raise ValueError("expansion_target must be in (0, 1]")
        if self.max_expansion_rounds < 1:
            raise ValueError("max_expansion_rounds must be >= 1")
        if self.rrf_constant <= 0.0:
            raise ValueError("rrf_constant must be > 0")
        if self.hybrid_fetch is not None and self.hybrid_fetch < 1:
            raise ValueError("hybrid_fetch must be >= 1")
        if self.indicator_fetch < 1:
            raise ValueError("indicator_fetch must be >= 1")
        if self.max_inputs < 1:
            raise ValueError("max_inputs must be >= 1")


def rrf(
    chunk_id: str,
    lists: Iterable[FieldRankedList],
    k_const: float = DEFAULT_RRF_CONSTANT,
) -> float:
    """Sum of 1 / (k_const + rank) over the lists containing the chunk.

    Ranks are 1-based; lists not containing the chunk contribute nothing.
    Errors if the chunk appears in no list.
    """
    total = 0.0
    found = False
    for ranked in lists:
        rank = ranked.rank_of(chunk_id)
        if rank is not None:
            total += 1.0 / (k_const + rank)
            found = True
    if not found:
        raise ValueError(f"chunk {chunk_id!r} appears in no ranked list")
    return total


def fuse_lists(
    lists: Iterable[FieldRankedList], k_const: float = DEFAULT_RRF_CONSTANT
) -> list[tuple[str, float]]:
    """Fuse ranked lists into one order by rrf score, ties by chunk_id."""
    lists = list(lists)
    union: set[str] = set()
    for ranked in lists:
        union.update(ranked.chunk_ids())
    fused = [(cid, rrf(cid, lists, k_const)) for cid in union]
    fused.sort(key=lambda kv: (-kv[1], kv[0]))
    return fused


def _vote_detail(
    attached: AttachedIndicators | None,
    inputs: QueryBundle,
    threshold: float,
) -> tuple[float, tuple[IndicatorContribution, ...]]:
    if attached is None or len(attached) == 0:
        return 0.0, ()
    cos = np.clip(attached.unit_embeddings @ inputs.unit_matrix().T, -1.0, 1.0)
    scores = 1.0 / (2.0 - cos)
    admitted = scores >= threshold
    count = int(admitted.sum())
    if count == 0:
        return 0.0, ()
    value = float((scores * admitted * attached.signals[:, None]).sum() / count)
    contributions = tuple(
        IndicatorContribution(
            query=attached.indicators[i].query,
            signal=attached.indicators[i].signal,
            c=float(scores[i, u]),
        )
        for i, u in zip(*np.nonzero(admitted))
    )
    return value, contributions


def vote(
    attached: AttachedIndicators | None,
    inputs: QueryBundle,
    threshold: float,
) -> float:
    """Threshold-gated, similarity-weighted mean of indicator signals.

    Each (indicator, input) pair with vscore >= threshold contributes
    vscore * signal; the sum is divided by the number of admitted pairs.
    No admitted pairs means a neutral 0 vote.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    return _vote_detail(attached, inputs, threshold)[0]


def _quantize_vote(value: float) -> float:
    return round(value, VOTE_GROUP_DECIMALS) + 0.0


def score_pool(
    pool: CandidatePool, inputs: QueryBundle, cfg: RankerConfig
) -> list[ScoredChunk]:
    """Compute rrf and vote for every pooled chunk."""
    lists = pool.all_lists()
    scored: list[ScoredChunk] = []
    for chunk_id in sorted(pool.chunks):
        rrf_score = rrf(chunk_id, lists, cfg.rrf_constant)
        value, contributions = _vote_detail(
            pool.attached.get(chunk_id), inputs, cfg.threshold
        )
        scored.append(
            ScoredChunk(
                chunk_id=chunk_id,
                doc_id=pool.doc_of[chunk_id],
                rrf_score=rrf_score,
                vote_score=value,
                vote_group=_quantize_vote(value),
                contributing=contributions,
            )
        )
    return scored


def rank_scored_chunks(scored: list[ScoredChunk], cfg: RankerConfig) -> list[ScoredChunk]:
    """Prune, filter per vote group, and order scored chunks.

    Vote groups with a negative (quantized) vote are dropped entirely. Each
    non-zero group is truncated to the top ``group_truncation`` chunks by
    rrf and optionally margin-filtered. The zero-vote group is the
    no-information track and passes through unfiltered, so an indicator-free
    query degrades to plain rrf order. The final order is
    (vote desc, rrf desc, chunk_id asc), truncated to top_k.
    """
    groups: dict[float, list[ScoredChunk]] = {}
    for chunk in scored:
        if chunk.vote_group < 0.0:
            continue
        groups.setdefault(chunk.vote_group, []).append(chunk)

    survivors: list[ScoredChunk] = []
    for key, members in groups.items():
        members.sort(key=lambda c: (-c.rrf_score, c.chunk_id))
        if key != 0.0:
            members = members[: cfg.group_truncation]
            if cfg.margin_percent is not None and members:
                cutoff = cfg.margin_percent * members[0].rrf_score
                members = [c for c in members if c.rrf_score >= cutoff]
        survivors.extend(members)

    survivors.sort(key=lambda c: (-c.vote_group, -c.rrf_score, c.chunk_id))
    return survivors[: cfg.top_k]


def two_track_rerank(
    pool: CandidatePool, inputs: QueryBundle, cfg: RankerConfig
) -> list[ScoredChunk]:
    """Score every pooled chunk on both tracks, then prune, filter, and order."""
    if not pool.chunks:
        raise ValueError("empty candidate pool")
    return rank_scored_chunks(score_pool(pool, inputs, cfg), cfg)


def retrieve_adaptive(
    index: "SearchIndex", inputs: QueryBundle, cfg: RankerConfig
) -> RankedResult:
    """Retrieve, re-rank, and expand until enough chunks survive.

    Each round pools the hybrid dense search with the indicator probes and
    re-ranks. If fewer than ceil(expansion_target * top_k) chunks survive
    (negative-vote pruning can empty a round) and the pool has not already
    covered the corpus, every fetch size doubles and the round repeats, up
    to max_expansion_rounds.
    """
    hybrid_m = cfg.hybrid_fetch if cfg.hybrid_fetch is not None else cfg.top_k
    indicator_m = cfg.indicator_fetch
    needed = math.ceil(cfg.expansion_target * cfg.top_k)

    for round_no in range(1, cfg.max_expansion_rounds + 1):
        pool = index.build_candidate_pool(inputs, hybrid_m, indicator_m, cfg.rrf_constant)
        if not pool.chunks:
            return RankedResult(chunks=(), rounds=round_no)
        ranked = two_track_rerank(pool, inputs, cfg)
        covered = len(pool.chunks) >= pool.index_size
        if len(ranked) >= needed or covered or round_no == cfg.max_expansion_rounds:
            return RankedResult(chunks=tuple(ranked), rounds=round_no)
        hybrid_m *= 2
        indicator_m *= 2
    raise AssertionError("unreachable")  # pragma: no cover
