"""feedbackrank: feedback-adaptive hybrid retrieval.

Chunks are retrieved by BM25 and embedding-cosine field searches fused
with reciprocal rank fusion, then re-ranked by a second track of "votes"
aggregated from stored feedback and synthetic query indicators, so
retrieval improves over time without retraining any model.
"""

__version__ = "0.1.0"

from .corpus import Chunk, Document, chunk_document, load_corpus
from .embedding import Embedding, HashedEmbeddingProvider, vscore
from .engine import Engine, EngineConfig
from .indicators import (
    FeedbackEvent,
    Indicator,
    IndicatorRepository,
    extract_keywords,
    map_star_to_signals,
)
from .index import SearchIndex, build_index, load_index
from .metrics import doc_set_similarity, hit_at_n, recall
from .ranker import (
    QueryBundle,
    QueryInput,
    RankedResult,
    RankerConfig,
    ScoredChunk,
    retrieve_adaptive,
    rrf,
    two_track_rerank,
    vote,
)

__all__ = [
    "__version__",
    "Chunk",
    "Document",
    "chunk_document",
    "load_corpus",
    "Embedding",
    "HashedEmbeddingProvider",
    "vscore",
    "Engine",
    "EngineConfig",
    "FeedbackEvent",
    "Indicator",
    "IndicatorRepository",
    "extract_keywords",
    "map_star_to_signals",
    "SearchIndex",
    "build_index",
    "load_index",
    "doc_set_similarity",
    "hit_at_n",
    "recall",
    "QueryBundle",
    "QueryInput",
    "RankedResult",
    "RankerConfig",
    "ScoredChunk",
    "retrieve_adaptive",
    "rrf",
    "two_track_rerank",
    "vote",
]
