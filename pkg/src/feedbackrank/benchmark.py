"""Iterative-learning benchmark: retrieval under continuous synthetic feedback.

Each iteration issues a mix of new and repeated queries, rates every
retrieval (5 stars when the golden document was retrieved, 1 star
otherwise), folds the resulting feedback indicators back in, and records
recall and hit-rate split by old/new queries. Everything is reproducible
from the seed.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .corpus import Document
from .datagen import synthetic_corpus
from .engine import Engine, EngineConfig, retrieved_doc_ids
from .ranker import RankerConfig
from .indicators import FeedbackEvent, TemplateQueryProvider, ingest_feedback
from .metrics import hit_at_n, recall

DEFAULT_HIT_KS = (3, 5, 7, 10)
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SimulationConfig:
    iterations: int = 200
    queries_per_iteration: int = 30
    new_per_iteration: int = 10
    repeated_per_iteration: int = 20
    rng_seed: int = 0
    rating_rule: str = "5-star if golden retrieved else 1-star"
    hit_ks: tuple[int, ...] = DEFAULT_HIT_KS

    def __post_init__(self) -> None:
        if self.new_per_iteration + self.repeated_per_iteration != self.queries_per_iteration:
            raise ValueError("new + repeated must equal queries_per_iteration")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class EngineVariant:
    """One engine configuration under test."""

    name: str
    use_synthetic: bool
    use_feedback: bool
    threshold: float = 0.75


def default_variants(threshold: float = 0.75) -> list[EngineVariant]:
    return [
        EngineVariant("baseline", use_synthetic=False, use_feedback=False),
        EngineVariant("synthetic", use_synthetic=True, use_feedback=False),
        EngineVariant(
            f"feedback({threshold})", use_synthetic=False, use_feedback=True,
            threshold=threshold,
        ),
        EngineVariant(
            f"feedback({threshold})+synthetic", use_synthetic=True, use_feedback=True,
            threshold=threshold,
        ),
    ]


def parse_variant(spec: str) -> EngineVariant:
    """Parse a variant spec: baseline | synthetic | feedback[:T] | feedback+synthetic[:T]."""
    name, _, raw_threshold = spec.partition(":")
    threshold = float(raw_threshold) if raw_threshold else 0.75
    name = name.strip().lower()
    if name == "baseline":
        return EngineVariant("baseline", use_synthetic=False, use_feedback=False)
    if name == "synthetic":
        return EngineVariant("synthetic", use_synthetic=True, use_feedback=False)
    if name == "feedback":
        return EngineVariant(
            f"feedback({threshold})", use_synthetic=False, use_feedback=True,
            threshold=threshold,
        )
    if name in ("feedback+synthetic", "synthetic+feedback"):
        return EngineVariant(
            f"feedback({threshold})+synthetic", use_synthetic=True, use_feedback=True,
            threshold=threshold,
        )
    raise ValueError(f"unknown engine variant {spec!r}")


@dataclass(frozen=True)
class MetricRow:
    config: str
    iteration: int
    split: str
    metric: str
    k: int
    value: float


@dataclass
class BenchmarkResult:
    rows: list[MetricRow]
    manifest: dict


def _engine_for_variant(
    corpus: list[Document], variant: EngineVariant, base: EngineConfig
) -> Engine:
    config = replace(
        base,
        use_synthetic_indicators=variant.use_synthetic,
        use_feedback_indicators=variant.use_feedback,
        indicator_store_path="",  # feedback stays in memory during simulation
        ranker=replace(base.ranker, threshold=variant.threshold),
    )
    return Engine(config, corpus=list(corpus))


def build_query_pool(
    corpus: list[Document], base: EngineConfig
) -> tuple[list[tuple[str, str]], frozenset[str]]:
    """Synthetic benchmark queries from one held-out chunk per document.

    Held-out chunks get no synthetic indicators at index time, so queries
    derived from them are genuinely unseen; the source document is the
    golden retrieval target.
    """
    probe_engine = Engine(base, corpus=list(corpus))
    chunks = probe_engine.chunk_corpus()
    held_out: dict[str, tuple[int, str]] = {}
    for chunk in chunks:
        current = held_out.get(chunk.doc_id)
        if current is None or chunk.ordinal > current[0]:
            held_out[chunk.doc_id] = (chunk.ordinal, chunk.chunk_id)
    held_ids = frozenset(cid for _, cid in held_out.values())

    provider = TemplateQueryProvider(base.queries_per_chunk)
    pool: list[tuple[str, str]] = []
    seen: set[str] = set()
    for chunk in chunks:
        if chunk.chunk_id not in held_ids:
            continue
        for query in provider.generate(chunk):
            if query in seen:
                continue
            seen.add(query)
            pool.append((query, chunk.doc_id))
    return pool, held_ids


def _build_schedule(
    pool: list[tuple[str, str]], sim: SimulationConfig
) -> list[dict[str, list[tuple[str, str]]]]:
    """Per-iteration query schedule, shared across all configurations.

    Repeated queries are sampled uniformly (with replacement) over every
    previously issued query; the first iteration samples over its own new
    queries.
    """
    rng = random.Random(sim.rng_seed)
    order = rng.sample(range(len(pool)), len(pool))
    schedule: list[dict[str, list[tuple[str, str]]]] = []
    issued: list[tuple[str, str]] = []
    cursor = 0
    for _ in range(sim.iterations):
        new = [pool[order[cursor + i]] for i in range(sim.new_per_iteration)]
        cursor += sim.new_per_iteration
        issued.extend(new)
        repeated = [
            issued[rng.randrange(len(issued))]
            for _ in range(sim.repeated_per_iteration)
        ]
        schedule.append({"new": new, "old": repeated})
    return schedule


def run_iterative_benchmark(
    corpus: list[Document],
    variants: list[EngineVariant],
    sim: SimulationConfig,
    base_config: EngineConfig | None = None,
) -> BenchmarkResult:
    base = base_config or EngineConfig()
    pool, held_ids = build_query_pool(corpus, base)
    required = sim.iterations * sim.new_per_iteration
    if len(pool) < required:
        raise ValueError(
            f"query pool has {len(pool)} queries, need {required} "
            f"({sim.iterations} iterations x {sim.new_per_iteration} new)"
        )
    schedule = _build_schedule(pool, sim)
    top_k = base.ranker.top_k

    rows: list[MetricRow] = []
    for variant in variants:
        engine = _engine_for_variant(corpus, variant, base)
        engine.build(persist=False, synthetic_exclude=held_ids)
        assert engine.repo is not None
        event_counter = 0
        for iteration, batch in enumerate(schedule):
            events: list[FeedbackEvent] = []
            for split in ("new", "old"):
                recalls: list[float] = []
                hits: dict[int, list[int]] = {k: [] for k in sim.hit_ks}
                for query, golden in batch[split]:
                    result = engine.query(query)
                    docs = retrieved_doc_ids(result.chunks)
                    golden_set = {golden}
                    recalls.append(recall(golden_set, docs, top_k))
                    for k in sim.hit_ks:
                        hits[k].append(hit_at_n(golden_set, docs, k))
                    if variant.use_feedback and docs:
                        timestamp = (_EPOCH + timedelta(seconds=event_counter)).isoformat()
                        event_counter += 1
                        if golden in docs[:top_k]:
                            stars, referenced = 5, (golden,)
                        else:
                            stars, referenced = 1, tuple(docs[:3])
                        events.append(
                            FeedbackEvent(
                                query=query,
                                star_rating=stars,
                                referenced_docs=referenced,
                                timestamp=timestamp,
                            )
                        )
                rows.append(
                    MetricRow(variant.name, iteration, split, "recall", top_k,
                              sum(recalls) / len(recalls))
                )
                for k in sim.hit_ks:
                    rows.append(
                        MetricRow(variant.name, iteration, split, "hit", k,
                                  sum(hits[k]) / len(hits[k]))
                    )
            if events:
                for event in events:
                    ingest_feedback(
                        engine.repo, event, engine.provider,
                        engine.config.rank_refine_negative,
                    )
                engine.rebuild_from_repo()

    manifest = {
        "seed": sim.rng_seed,
        "iterations": sim.iterations,
        "queries_per_iteration": sim.queries_per_iteration,
        "new_per_iteration": sim.new_per_iteration,
        "repeated_per_iteration": sim.repeated_per_iteration,
        "rating_rule": sim.rating_rule,
        "hit_ks": list(sim.hit_ks),
        "top_k": top_k,
        "query_pool_size": len(pool),
        "corpus_documents": len(corpus),
        "variants": [
            {
                "name": v.name,
                "use_synthetic": v.use_synthetic,
                "use_feedback": v.use_feedback,
                "threshold": v.threshold,
            }
            for v in variants
        ],
        "engine": {
            "embedding_dim": base.embedding_dim,
            "max_chunk_size": base.max_chunk_size,
            "queries_per_chunk": base.queries_per_chunk,
            "max_feedback_per_doc": base.max_feedback_per_doc,
            "dense_fields": list(base.dense_fields),
            "ranker": {
                "threshold": base.ranker.threshold,
                "top_k": base.ranker.top_k,
                "group_truncation": base.ranker.group_truncation,
                "margin_percent": base.ranker.margin_percent,
                "expansion_target": base.ranker.expansion_target,
                "max_expansion_rounds": base.ranker.max_expansion_rounds,
                "rrf_constant": base.ranker.rrf_constant,
                "indicator_fetch": base.ranker.indicator_fetch,
            },
        },
    }
    return BenchmarkResult(rows=rows, manifest=manifest)


def write_metrics_csv(rows: list[MetricRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["config", "iteration", "split", "metric", "k", "value"])
        for row in rows:
            writer.writerow(
                [row.config, row.iteration, row.split, row.metric, row.k,
                 f"{row.value:.6f}"]
            )


def write_manifest(manifest: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def mean_metric(
    rows: list[MetricRow], config: str, split: str, metric: str = "recall"
) -> float:
    values = [
        r.value
        for r in rows
        if r.config == config and r.split == split and r.metric == metric
    ]
    if not values:
        raise ValueError(f"no rows for {config}/{split}/{metric}")
    return sum(values) / len(values)


def quick_benchmark_corpus(seed: int = 1, n_docs: int = 96) -> list[Document]:
    """The standard desk-scale benchmark corpus."""
    return synthetic_corpus(seed=seed, n_docs=n_docs)


def benchmark_base_config(max_chunk_size: int = 320, top_k: int = 10) -> EngineConfig:
    """Engine knobs tuned for the synthetic corpus: chunk size matched to
    its paragraph length so each document splits into its intended chunks."""
    return EngineConfig(
        max_chunk_size=max_chunk_size,
        ranker=RankerConfig(top_k=top_k),
    )
