"""Fine-grained scenario harness over a feedback history.

Four scenarios: re-issuing highly rated queries (recall should reach the
referenced documents), re-issuing poorly rated queries (retrieval should
diverge from the old documents), near-duplicates of highly rated queries,
and genuinely unseen queries (retrieval should track the baseline).
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import Document
from .embedding import vscore
from .engine import Engine, EngineConfig, retrieved_doc_ids
from .indicators import FeedbackEvent, TemplateQueryProvider, ingest_feedback
from .metrics import doc_set_similarity, recall
from .benchmark import EngineVariant

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO_KS = (3, 7, 12)
SIMILARITY_CUTOFF = 0.9  # vscore at or above this marks a query as "similar"


@dataclass(frozen=True)
class ScenarioRow:
    config: str
    scenario: str
    metric: str
    k: int
    value: float


@dataclass
class ScenarioReport:
    rows: list[ScenarioRow]
    manifest: dict


def _engine_with_history(
    corpus: list[Document],
    history: list[FeedbackEvent],
    variant: EngineVariant,
    base: EngineConfig,
) -> Engine:
    config = replace(
        base,
        use_synthetic_indicators=variant.use_synthetic,
        use_feedback_indicators=variant.use_feedback,
        indicator_store_path="",
        ranker=replace(base.ranker, threshold=variant.threshold),
    )
    engine = Engine(config, corpus=list(corpus))
    engine.build(persist=False)
    if variant.use_feedback and history:
        assert engine.repo is not None
        for event in history:
            ingest_feedback(engine.repo, event, engine.provider,
                            config.rank_refine_negative)
        engine.rebuild_from_repo()
    return engine


def perturb_query(query: str, variant_index: int) -> str:
    """A near-duplicate of a query: token rotation or token duplication.

    Both keep the bag-of-tokens embedding close enough that the perturbed
    query scores at or above the similarity cutoff against its source.
    """
    tokens = query.split()
    if len(tokens) < 2:
        return f"{query} {query.split()[0]}" if tokens else query
    if variant_index % 2 == 0:
        return " ".join(tokens[1:] + tokens[:1])
    return " ".join(tokens + [tokens[0]])


def _similar_to_exactly_one(
    candidate: str, history_queries: list[str], engine: Engine
) -> bool:
    emb = engine.provider.embed(candidate)
    matches = 0
    for query in history_queries:
        if vscore(emb, engine.provider.embed(query)) >= SIMILARITY_CUTOFF:
            matches += 1
            if matches > 1:
                return False
    return matches == 1


def _unseen_queries(
    corpus: list[Document],
    history: list[FeedbackEvent],
    engine: Engine,
    count: int,
    seed: int,
) -> list[str]:
    rng = random.Random(seed)
    provider = TemplateQueryProvider()
    chunks = engine.chunk_corpus()
    order = rng.sample(range(len(chunks)), len(chunks))
    history_embs = [engine.provider.embed(e.query) for e in history]
    out: list[str] = []
    seen: set[str] = set()
    for idx in order:
        for query in provider.generate(chunks[idx]):
            if query in seen:
                continue
            seen.add(query)
            emb = engine.provider.embed(query)
            if any(vscore(emb, h) >= SIMILARITY_CUTOFF for h in history_embs):
                continue
            out.append(query)
            if len(out) >= count:
                return out
    return out


def run_scenarios(
    corpus: list[Document],
    history: list[FeedbackEvent],
    variants: list[EngineVariant],
    base_config: EngineConfig | None = None,
    *,
    ks: tuple[int, ...] = DEFAULT_SCENARIO_KS,
    unseen_count: int = 200,
    seed: int = 0,
) -> ScenarioReport:
    base = base_config or EngineConfig()
    if not any(v.name == "baseline" for v in variants):
        raise ValueError("scenario matrix requires a baseline variant")

    engines = {
        v.name: _engine_with_history(corpus, history, v, base) for v in variants
    }
    max_k = max(ks)

    exact_high = [e for e in history if e.star_rating >= 4]
    exact_low = [e for e in history if e.star_rating <= 2]
    history_queries = [e.query for e in history]

    rows: list[ScenarioRow] = []

    def retrieve_docs(engine: Engine, query: str) -> list[str]:
        result = engine.query(query, k=max(max_k, base.ranker.top_k))
        return retrieved_doc_ids(result.chunks)

    # Exact High-Feedback: the referenced documents should come back.
    if exact_high:
        for name, engine in engines.items():
            per_k: dict[int, list[float]] = {k: [] for k in ks}
            for event in exact_high:
                docs = retrieve_docs(engine, event.query)
                golden = set(event.referenced_docs)
                for k in ks:
                    per_k[k].append(recall(golden, docs, k))
            for k in ks:
                rows.append(
                    ScenarioRow(name, "exact_high", "recall", k,
                                sum(per_k[k]) / len(per_k[k]))
                )
    else:
        logger.info("no highly rated history events; exact_high scenario skipped")

    # Exact Low-Feedback: retrieval should move away from the old documents.
    if exact_low:
        for name, engine in engines.items():
            per_k = {k: [] for k in ks}
            for event in exact_low:
                docs = retrieve_docs(engine, event.query)
                old = set(event.referenced_docs)
                for k in ks:
                    per_k[k].append(doc_set_similarity(old, set(docs[:k])))
            for k in ks:
                rows.append(
                    ScenarioRow(name, "exact_low", "doc_set_similarity", k,
                                sum(per_k[k]) / len(per_k[k]))
                )
    else:
        logger.info("no low-rated history events; exact_low scenario skipped")

    # Similar High-Feedback: near-duplicates of highly rated queries.
    similar_cases: list[tuple[str, frozenset[str]]] = []
    baseline_engine = engines["baseline"]
    for i, event in enumerate(exact_high):
        candidate = perturb_query(event.query, i)
        if candidate != event.query and _similar_to_exactly_one(
            candidate, history_queries, baseline_engine
        ):
            similar_cases.append((candidate, frozenset(event.referenced_docs)))
    if similar_cases:
        for name, engine in engines.items():
            per_k = {k: [] for k in ks}
            for candidate, golden in similar_cases:
                docs = retrieve_docs(engine, candidate)
                for k in ks:
                    per_k[k].append(recall(golden, docs, k))
            for k in ks:
                rows.append(
                    ScenarioRow(name, "similar_high", "recall", k,
                                sum(per_k[k]) / len(per_k[k]))
                )
    else:
        logger.info("no similar-query cases available; similar_high scenario skipped")

    # Unseen queries: retrieval should track the baseline.
    unseen = _unseen_queries(corpus, history, baseline_engine, unseen_count, seed)
    if unseen:
        baseline_docs = {q: retrieve_docs(baseline_engine, q) for q in unseen}
        for name, engine in engines.items():
            per_k = {k: [] for k in ks}
            for query in unseen:
                docs = baseline_docs[query] if name == "baseline" else retrieve_docs(
                    engine, query
                )
                for k in ks:
                    per_k[k].append(
                        doc_set_similarity(set(baseline_docs[query][:k]), set(docs[:k]))
                    )
            for k in ks:
                rows.append(
                    ScenarioRow(name, "unseen", "doc_set_similarity", k,
                                sum(per_k[k]) / len(per_k[k]))
                )
    else:
        logger.info("no unseen queries available; unseen scenario skipped")

    manifest = {
        "seed": seed,
        "ks": list(ks),
        "unseen_count": unseen_count,
        "similarity_cutoff": SIMILARITY_CUTOFF,
        "history_events": len(history),
        "exact_high_events": len(exact_high),
        "exact_low_events": len(exact_low),
        "similar_cases": len(similar_cases),
        "unseen_queries": len(unseen),
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
    }
    return ScenarioReport(rows=rows, manifest=manifest)


def write_scenario_csv(rows: list[ScenarioRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["config", "scenario", "metric", "k", "value"])
        for row in rows:
            writer.writerow([row.config, row.scenario, row.metric, row.k,
                             f"{row.value:.6f}"])


def write_scenario_manifest(manifest: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
