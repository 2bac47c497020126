"""HTTP service wrapping the engine: query, feedback capture, index rebuild.

Queries are read-only against an immutable index snapshot, so they can run
under unrestricted concurrency; a rebuild constructs a fresh index and
swaps it in atomically. Feedback is batched: it lands in the indicator
store and takes effect at the next rebuild.
"""

from __future__ import annotations

from contextlib import asynccontextmanager
from datetime import datetime, timezone

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .engine import Engine, EngineConfig, result_records
from .indicators import FeedbackEvent


class IndicatorContributionModel(BaseModel):
    query: str
    signal: float
    c: float


class RankedChunkModel(BaseModel):
    chunk_id: str
    doc_id: str
    vote: float
    rrf: float
    round: int
    indicators: list[IndicatorContributionModel]


class QueryRequest(BaseModel):
    query: str = Field(min_length=1)
    intent: str | None = None
    k: int | None = Field(default=None, ge=1)
    threshold: float | None = Field(default=None, gt=0.0, le=1.0)


class QueryResponse(BaseModel):
    rounds: int
    results: list[RankedChunkModel]


class FeedbackRequest(BaseModel):
    query: str = Field(min_length=1)
    stars: int = Field(ge=1, le=5)
    docs: list[str] = Field(min_length=1)
    intent: str | None = None


class FeedbackResponse(BaseModel):
    written: int
    skipped: list[str]
    note: str = "feedback takes effect at the next index rebuild"


class RebuildResponse(BaseModel):
    documents: int
    chunks: int
    synthetic_indicators: int
    feedback_indicators: int
    evicted: int


class HealthResponse(BaseModel):
    status: str
    chunks: int
    indicator_pairs: int


def create_app(
    config: EngineConfig | None = None, engine: Engine | None = None
) -> FastAPI:
    """Build the service around an engine.

    Pass a prepared engine (tests do) or a config; with a config the app
    loads existing index artifacts on startup and falls back to building
    them from the corpus.
    """
    if engine is None:
        if config is None:
            raise ValueError("create_app needs a config or an engine")
        engine = Engine(config)
    bound_engine = engine

    @asynccontextmanager
    async def _lifespan(_: FastAPI):
        if bound_engine.index is None:
            try:
                bound_engine.load()
            except FileNotFoundError:
                bound_engine.build()
        yield

    app = FastAPI(title="feedbackrank", version=__version__, lifespan=_lifespan)
    app.state.engine = engine

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        if engine.index is None:
            return HealthResponse(status="empty", chunks=0, indicator_pairs=0)
        return HealthResponse(
            status="ok",
            chunks=len(engine.index),
            indicator_pairs=engine.index.indicator_count(),
        )

    @app.get("/config")
    def get_config() -> dict:
        return engine.config.to_dict()

    @app.post("/query", response_model=QueryResponse)
    def query(request: QueryRequest) -> QueryResponse:
        if engine.index is None:
            raise HTTPException(status_code=503, detail="index not ready")
        try:
            result = engine.query(
                request.query, request.intent, k=request.k, threshold=request.threshold
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return QueryResponse(
            rounds=result.rounds,
            results=[RankedChunkModel(**record) for record in result_records(result)],
        )

    @app.post("/feedback", response_model=FeedbackResponse)
    def feedback(request: FeedbackRequest) -> FeedbackResponse:
        event = FeedbackEvent(
            query=request.query,
            star_rating=request.stars,
            referenced_docs=tuple(request.docs),
            timestamp=datetime.now(timezone.utc).isoformat(),
            rewritten_intent=request.intent,
        )
        try:
            written, skipped = engine.record_feedback(event)
        except (OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return FeedbackResponse(written=written, skipped=skipped)

    @app.post("/index/rebuild", response_model=RebuildResponse)
    def rebuild() -> RebuildResponse:
        try:
            stats = engine.build()
        except (OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return RebuildResponse(
            documents=stats.documents,
            chunks=stats.chunks,
            synthetic_indicators=stats.synthetic_indicators,
            feedback_indicators=stats.feedback_indicators,
            evicted=stats.evicted,
        )

    return app
