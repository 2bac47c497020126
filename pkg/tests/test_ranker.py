"""Two-track scoring and re-ranking math."""

import math
import random

import numpy as np
import pytest

from feedbackrank.embedding import Embedding, HashedEmbeddingProvider
from feedbackrank.indicators import (
    AttachedIndicators,
    DocumentScope,
    Indicator,
    Source,
)
from feedbackrank.ranker import (
    FieldRankedList,
    QueryBundle,
    QueryInput,
    RankerConfig,
    ScoredChunk,
    fuse_lists,
    rank_scored_chunks,
    rrf,
    vote,
)

PROVIDER = HashedEmbeddingProvider(dim=16)


def unit_input(dim=8) -> QueryInput:
    vec = np.zeros(dim)
    vec[0] = 1.0
    return QueryInput(text="q", embedding=Embedding(vec))


def embedding_with_cosine(c: float, dim=8) -> Embedding:
    """Embedding whose cosine against unit_input's vector is exactly c."""
    vec = np.zeros(dim)
    vec[0] = c
    vec[1] = math.sqrt(max(0.0, 1.0 - c * c))
    return Embedding(vec)


def indicator_with_vscore(v: float, signal: float, query="hist", dim=8) -> Indicator:
    cos = 2.0 - 1.0 / v
    return Indicator(
        query=query,
        query_embedding=embedding_with_cosine(cos, dim),
        keywords=(),
        signal=signal,
        scope=DocumentScope("d"),
        source=Source.FEEDBACK,
        created_at="t",
        doc_version=1,
    )


def ranked(field: str, *chunk_ids: str) -> FieldRankedList:
    return FieldRankedList(
        field=field,
        entries=tuple((cid, 1.0 - 0.1 * i) for i, cid in enumerate(chunk_ids)),
    )


# -- rrf -----------------------------------------------------------------------

def test_rrf_rank_one_single_list():
    assert rrf("a", [ranked("f", "a", "b")], 60.0) == pytest.approx(1 / 61, abs=1e-12)


def test_rrf_rank_one_two_lists():
    lists = [ranked("f1", "a", "b"), ranked("f2", "a", "c")]
    assert rrf("a", lists, 60.0) == pytest.approx(2 / 61, abs=1e-12)


def test_rrf_ranks_two_and_five():
    lists = [
        ranked("f1", "x", "a", "y"),
        ranked("f2", "p", "q", "r", "s", "a"),
    ]
    assert rrf("a", lists, 60.0) == pytest.approx(1 / 62 + 1 / 65, abs=1e-12)


def test_rrf_chunk_in_no_list_errors():
    with pytest.raises(ValueError, match="no ranked list"):
        rrf("missing", [ranked("f", "a", "b")], 60.0)


def test_fuse_single_list_preserves_order():
    fused = fuse_lists([ranked("f", "a", "b", "c")])
    assert [cid for cid, _ in fused] == ["a", "b", "c"]


def test_fuse_majority_breaks_disagreement():
    # Two fields disagree on ranks 1/2 vs 2/1; a third field breaks the tie.
    # By hand: a -> 1/61 + 1/62 + 1/61, b -> 1/62 + 1/61 + 1/62.
    lists = [ranked("f1", "a", "b"), ranked("f2", "b", "a"), ranked("f3", "a", "b")]
    fused = dict(fuse_lists(lists))
    assert fused["a"] == pytest.approx(2 / 61 + 1 / 62, abs=1e-12)
    assert fused["b"] == pytest.approx(2 / 62 + 1 / 61, abs=1e-12)
    assert [cid for cid, _ in fuse_lists(lists)][0] == "a"


def test_fused_dominant_chunk_first():
    lists = [ranked("f1", "a", "b", "c"), ranked("f2", "a", "c", "b")]
    assert fuse_lists(lists)[0][0] == "a"


# -- vote -----------------------------------------------------------------------

def test_vote_single_admitted_indicator():
    attached = AttachedIndicators([indicator_with_vscore(0.9, +1.0)])
    bundle = QueryBundle(inputs=(unit_input(),))
    assert vote(attached, bundle, 0.75) == pytest.approx(0.9, abs=1e-9)


def test_vote_below_threshold_is_zero():
    attached = AttachedIndicators([indicator_with_vscore(0.7, +1.0)])
    bundle = QueryBundle(inputs=(unit_input(),))
    assert vote(attached, bundle, 0.75) == 0.0


def test_vote_mixed_signals_hand_computed():
    # (0.8 * +1 + 0.9 * -1) / 2 = -0.05
    attached = AttachedIndicators(
        [indicator_with_vscore(0.8, +1.0), indicator_with_vscore(0.9, -1.0)]
    )
    bundle = QueryBundle(inputs=(unit_input(),))
    assert vote(attached, bundle, 0.75) == pytest.approx(-0.05, abs=1e-9)


def test_vote_no_indicators_is_zero():
    bundle = QueryBundle(inputs=(unit_input(),))
    assert vote(None, bundle, 0.75) == 0.0


def test_vote_boundary_admits_at_threshold():
    attached = AttachedIndicators([indicator_with_vscore(0.75, +1.0)])
    bundle = QueryBundle(inputs=(unit_input(),))
    value = vote(attached, bundle, 0.75)
    assert value == pytest.approx(0.75, abs=1e-9)


def test_vote_denominator_counts_admitted_pairs_only():
    # One admitted (0.9) and one rejected (0.5): mean over the single
    # admitted pair, not all pairs.
    attached = AttachedIndicators(
        [indicator_with_vscore(0.9, +1.0), indicator_with_vscore(0.5, +1.0)]
    )
    bundle = QueryBundle(inputs=(unit_input(),))
    assert vote(attached, bundle, 0.75) == pytest.approx(0.9, abs=1e-9)


def test_vote_multiple_inputs_oracle():
    # Independent brute-force evaluation over (indicator, input) pairs.
    rng = random.Random(23)
    for _ in range(100):
        n_ind = rng.randint(1, 5)
        n_inputs = rng.randint(1, 2)
        threshold = rng.uniform(0.4, 0.99)
        indicators = [
            indicator_with_vscore(rng.uniform(0.34, 1.0), rng.uniform(-1, 1),
                                  query=f"q{i}")
            for i in range(n_ind)
        ]
        inputs = []
        for _ in range(n_inputs):
            angle = rng.uniform(0, math.pi)
            vec = np.zeros(8)
            vec[0], vec[1] = math.cos(angle), math.sin(angle)
            inputs.append(QueryInput(text="u", embedding=Embedding(vec)))
        bundle = QueryBundle(inputs=tuple(inputs))

        total, count = 0.0, 0
        for ind in indicators:
            for q in inputs:
                cos = float(
                    np.dot(ind.query_embedding.values, q.embedding.values)
                    / (np.linalg.norm(ind.query_embedding.values)
                       * np.linalg.norm(q.embedding.values))
                )
                vs = 1.0 / (2.0 - max(-1.0, min(1.0, cos)))
                if vs >= threshold:
                    total += vs * ind.signal
                    count += 1
        expected = total / count if count else 0.0
        actual = vote(AttachedIndicators(indicators), bundle, threshold)
        assert actual == pytest.approx(expected, abs=1e-9)


def test_admission_monotone_in_threshold():
    rng = random.Random(5)
    for _ in range(100):
        indicators = [
            indicator_with_vscore(rng.uniform(0.34, 1.0), 1.0, query=f"q{i}")
            for i in range(4)
        ]
        attached = AttachedIndicators(indicators)
        bundle = QueryBundle(inputs=(unit_input(),))
        lo, hi = sorted((rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)))
        from feedbackrank.ranker import _vote_detail

        admitted_lo = {c.query for c in _vote_detail(attached, bundle, lo)[1]}
        admitted_hi = {c.query for c in _vote_detail(attached, bundle, hi)[1]}
        assert admitted_hi <= admitted_lo


# -- ordering and filters ----------------------------------------------------------

def chunk(cid, vote_value, rrf_value, doc=None):
    return ScoredChunk(
        chunk_id=cid,
        doc_id=doc or cid,
        rrf_score=rrf_value,
        vote_score=vote_value,
        vote_group=round(vote_value, 6) + 0.0,
    )


def test_negative_vote_pruned_regardless_of_rrf():
    cfg = RankerConfig(top_k=10)
    out = rank_scored_chunks([chunk("B", -0.94, 0.99), chunk("C", 0.0, 0.01)], cfg)
    assert [c.chunk_id for c in out] == ["C"]


def test_worked_group_truncation_example():
    # {A: (.9, .01), D: (.9, .02), C: (0, .03), B: (-.94, .05)}, N=1
    # -> B pruned, A truncated inside the 0.9 group, zero group passes.
    cfg = RankerConfig(top_k=10, group_truncation=1)
    scored = [
        chunk("A", 0.9, 0.01),
        chunk("D", 0.9, 0.02),
        chunk("C", 0.0, 0.03),
        chunk("B", -0.94, 0.05),
    ]
    out = rank_scored_chunks(scored, cfg)
    assert [c.chunk_id for c in out] == ["D", "C"]


def test_all_votes_zero_degrades_to_rrf_order():
    cfg = RankerConfig(top_k=10, group_truncation=1)
    scored = [chunk(f"c{i}", 0.0, 0.1 * (10 - i)) for i in range(6)]
    out = rank_scored_chunks(scored, cfg)
    assert [c.chunk_id for c in out] == [f"c{i}" for i in range(6)]


def test_zero_group_not_truncated_nonzero_groups_are():
    cfg = RankerConfig(top_k=10, group_truncation=2)
    scored = [chunk(f"z{i}", 0.0, 0.5 - 0.01 * i) for i in range(5)]
    scored += [chunk(f"p{i}", 0.8, 0.4 - 0.01 * i) for i in range(4)]
    out = rank_scored_chunks(scored, cfg)
    positives = [c for c in out if c.vote_group == 0.8]
    zeros = [c for c in out if c.vote_group == 0.0]
    assert len(positives) == 2
    assert len(zeros) == 5


def test_margin_filter_within_group():
    cfg = RankerConfig(top_k=10, group_truncation=5, margin_percent=0.5)
    scored = [
        chunk("a", 0.8, 1.0),
        chunk("b", 0.8, 0.6),
        chunk("c", 0.8, 0.4),  # below 0.5 * 1.0 -> dropped
    ]
    out = rank_scored_chunks(scored, cfg)
    assert [c.chunk_id for c in out] == ["a", "b"]


def test_margin_filter_only_removes_never_reorders():
    rng = random.Random(31)
    for _ in range(100):
        scored = [
            chunk(f"c{i}", rng.choice([0.0, 0.5, 0.9]), rng.uniform(0.01, 1.0))
            for i in range(12)
        ]
        base_cfg = RankerConfig(top_k=12, group_truncation=12)
        with_margin = RankerConfig(top_k=12, group_truncation=12, margin_percent=0.6)
        base_out = [c.chunk_id for c in rank_scored_chunks(list(scored), base_cfg)]
        margin_out = [c.chunk_id for c in rank_scored_chunks(list(scored), with_margin)]
        # margin output must be a subsequence of the unfiltered output
        it = iter(base_out)
        assert all(cid in it for cid in margin_out)


def test_global_order_is_lexicographic():
    rng = random.Random(13)
    cfg = RankerConfig(top_k=50, group_truncation=3)
    scored = [
        chunk(f"c{i:02d}", rng.choice([0.0, 0.25, 0.7, 1.0]), rng.uniform(0.01, 1.0))
        for i in range(30)
    ]
    out = rank_scored_chunks(scored, cfg)
    keys = [(-c.vote_group, -c.rrf_score, c.chunk_id) for c in out]
    assert keys == sorted(keys)


def test_truncates_to_top_k():
    cfg = RankerConfig(top_k=3)
    scored = [chunk(f"c{i}", 0.0, 1.0 - 0.01 * i) for i in range(10)]
    assert len(rank_scored_chunks(scored, cfg)) == 3


def test_tiny_negative_vote_quantizes_to_zero_group():
    cfg = RankerConfig(top_k=10)
    out = rank_scored_chunks([chunk("a", -1e-9, 0.5)], cfg)
    assert len(out) == 1
    assert out[0].vote_group == 0.0


def test_ranker_config_validation():
    with pytest.raises(ValueError):
        RankerConfig(threshold=0.0)
    with pytest.raises(ValueError):
        RankerConfig(threshold=1.5)
    with pytest.raises(ValueError):
        RankerConfig(top_k=0)
    with pytest.raises(ValueError):
        RankerConfig(margin_percent=0.0)
    with pytest.raises(ValueError):
        RankerConfig(expansion_target=0.0)
    with pytest.raises(ValueError):
        RankerConfig(rrf_constant=0.0)
