"""Embedding providers and the cosine-based similarity transform.

The offline provider hashes each token to an index and a sign in a
fixed-size vector and accumulates signed counts. That keeps it fully
deterministic while preserving the property the ranking math relies on:
texts sharing more tokens have a higher expected cosine.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

DEFAULT_DIM = 256

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, shared by BM25, keywords, and hashing."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True, eq=False)
class Embedding:
    """A fixed-length real vector. Values are immutable float64."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def tolist(self) -> list[float]:
        return self.values.tolist()


def cosine(a: Embedding, b: Embedding) -> float:
    """Standard cosine similarity; errors on dimension mismatch or zero norm."""
    if a.dim != b.dim:
        raise ValueError(f"embedding dimension mismatch: {a.dim} != {b.dim}")
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero-norm embedding")
    value = float(np.dot(a.values, b.values) / (na * nb))
    return max(-1.0, min(1.0, value))


def vscore(a: Embedding, b: Embedding) -> float:
    """Similarity transform 1 / (2 - cos(a, b)), in [1/3, 1].

    Monotonically increasing in cosine: 1.0 for identical directions,
    0.5 for orthogonal vectors, 1/3 for opposite vectors.
    """
    return 1.0 / (2.0 - cosine(a, b))


class EmbeddingProvider(Protocol):
    """Deterministic text-to-vector provider.

    Implementations must return the same embedding for the same text within
    a run; remote providers satisfy this by caching (see CachedEmbeddingProvider).
    """

    name: str
    dim: int

    def embed(self, text: str) -> Embedding: ...


def _token_bucket(token: str, dim: int) -> tuple[int, float]:
    """Stable (index, sign) bucket for a token: the hashing trick."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    sign = 1.0 if (value >> 63) & 1 == 0 else -1.0
    return value % dim, sign


class HashedEmbeddingProvider:
    """Offline provider: signed hashed bag-of-tokens, L2-normalized."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.name = "hashed-bag"
        self.dim = dim
        self._memo: dict[str, Embedding] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> Embedding:
        trimmed = text.strip()
        if not trimmed:
            raise ValueError("cannot embed empty text")
        with self._lock:
            cached = self._memo.get(trimmed)
        if cached is not None:
            return cached
        tokens = tokenize(trimmed) or [trimmed.lower()]
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            index, sign = _token_bucket(token, self.dim)
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Opposed-sign collisions cancelled everything; fall back to a
            # single bucket for the whole text so the norm invariant holds.
            index, _ = _token_bucket(trimmed.lower(), self.dim)
            vec[index] = 1.0
            norm = 1.0
        emb = Embedding(vec / norm)
        with self._lock:
            self._memo[trimmed] = emb
        return emb


class CachedEmbeddingProvider:
    """File-backed cache around any provider, keyed by (provider name, text hash).

    Lets non-deterministic remote providers satisfy the determinism contract
    within and across runs. Writes are serialized internally.
    """

    def __init__(self, inner: EmbeddingProvider, path: str | Path):
        self._inner = inner
        self.name = inner.name
        self.dim = inner.dim
        self._path = Path(path)
        self._lock = threading.Lock()
        self._cache: dict[str, Embedding] = {}
        if self._path.exists():
            with open(self._path, encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if record["dim"] != self.dim:
                        raise ValueError(
                            f"cache {self._path} holds dim {record['dim']}, provider has {self.dim}"
                        )
                    self._cache[record["key"]] = Embedding(np.array(record["values"]))

    def _key(self, text: str) -> str:
        payload = f"{self.name}\x00{text}".encode("utf-8")
        return hashlib.blake2b(payload, digest_size=16).hexdigest()

    def embed(self, text: str) -> Embedding:
        trimmed = text.strip()
        if not trimmed:
            raise ValueError("cannot embed empty text")
        key = self._key(trimmed)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        emb = self._inner.embed(trimmed)
        record = {"key": key, "dim": emb.dim, "values": emb.tolist()}
        with self._lock:
            self._cache[key] = emb
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        return emb
