"""Vector index and selection mechanisms: cosine top-k and exhaustive rescoring.

All piece embeddings live in one shared space and are unit-normalized at
build time, so selection reduces to a dot product against the (normalized)
query. Ties in similarity are broken by ascending piece insertion order,
which keeps reports reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Corpus, Piece
from .errors import PartialScoringError, ScoreRangeError, ValidationError

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length real vector, optionally unit-normalized."""

    values: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValidationError("embedding vector must be non-empty")
        if self.normalized:
            norm = math.sqrt(math.fsum(v * v for v in self.values))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise ValidationError(f"vector flagged normalized but |v| = {norm}")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def unit(self) -> "EmbeddingVector":
        """Return the unit-normalized copy of this vector."""
        if self.normalized:
            return self
        norm = math.sqrt(math.fsum(v * v for v in self.values))
        if norm == 0.0:
            raise ValidationError("zero vector cannot be normalized")
        return EmbeddingVector(tuple(v / norm for v in self.values), normalized=True)


@dataclass(frozen=True)
class RetrievalResult:
    """One selected piece: its similarity (cosine or relevance score) and rank."""

    piece_id: str
    similarity: float
    rank: int


def cosine_similarity(a: Sequence[float] | EmbeddingVector, b: Sequence[float] | EmbeddingVector) -> float:
    """Cosine of the angle between two vectors: dot(a,b) / (|a| |b|)."""
    va = a.values if isinstance(a, EmbeddingVector) else tuple(a)
    vb = b.values if isinstance(b, EmbeddingVector) else tuple(b)
    if len(va) != len(vb):
        raise ValidationError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    dot = math.fsum(x * y for x, y in zip(va, vb))
    norm_a = math.sqrt(math.fsum(x * x for x in va))
    norm_b = math.sqrt(math.fsum(y * y for y in vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValidationError("cosine similarity undefined for zero vectors")
    return dot / (norm_a * norm_b)


class VectorIndex:
    """Immutable store of (piece_id, unit vector) pairs in insertion order."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValidationError("index matrix must be 2-dimensional")
        if len(ids) != matrix.shape[0]:
            raise ValidationError("ids and matrix row count differ")
        if len(set(ids)) != len(ids):
            raise ValidationError("index piece ids must be unique")
        norms = np.linalg.norm(matrix, axis=1)
        if matrix.shape[0] and np.max(np.abs(norms - 1.0)) > NORM_TOLERANCE:
            raise ValidationError("index vectors must be unit-normalized")
        self._ids = tuple(ids)
        self._matrix = matrix
        self._matrix.setflags(write=False)

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1]

    def __len__(self) -> int:
        return len(self._ids)

    def save(self, path: Path) -> None:
        np.savez(path, ids=np.array(self._ids, dtype=np.str_), matrix=self._matrix)

    @classmethod
    def load(cls, path: Path) -> "VectorIndex":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"index file not found: {path}")
        data = np.load(path, allow_pickle=False)
        return cls([str(i) for i in data["ids"]], data["matrix"])


class Embedder(Protocol):
    """Embedding endpoint: both modalities map into one shared space."""

    def embed_text(self, text: str) -> Sequence[float]: ...

    def embed_image(self, data: bytes) -> Sequence[float]: ...


def _embed_piece(corpus: Corpus, piece: Piece, embedder: Embedder) -> np.ndarray:
    if piece.modality == "image":
        raw = embedder.embed_image(corpus.content_bytes(piece.id))
    else:
        raw = embedder.embed_text(corpus.content_text(piece.id))
    vec = np.asarray(raw, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ValidationError(f"piece {piece.id!r}: embedder returned a non-vector")
    return vec


def build_index(corpus: Corpus, embedder: Embedder, max_in_flight: int = 1) -> VectorIndex:
    """Embed every piece and build the unit-normalized index.

    Requests may run concurrently up to ``max_in_flight``; results are
    assembled in corpus order so concurrency never changes the index.
    """
    pieces = corpus.pieces
    if max_in_flight < 1:
        raise ValidationError("max_in_flight must be >= 1")
    if max_in_flight == 1 or len(pieces) <= 1:
        raw_vectors = [_embed_piece(corpus, piece, embedder) for piece in pieces]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            raw_vectors = list(pool.map(lambda p: _embed_piece(corpus, p, embedder), pieces))

    dimension: int | None = None
    rows = []
    for piece, vec in zip(pieces, raw_vectors):
        if dimension is None:
            dimension = vec.size
        elif vec.size != dimension:
            raise ValidationError(
                f"piece {piece.id!r}: embedding dimension {vec.size} != index dimension {dimension}"
            )
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValidationError(f"piece {piece.id!r}: embedder returned a zero vector")
        rows.append(vec / norm)

    matrix = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    return VectorIndex([p.id for p in pieces], matrix)


def top_k_select(index: VectorIndex, query_vec: Sequence[float] | EmbeddingVector, k: int) -> list[RetrievalResult]:
    """The k entries with highest cosine similarity to the query.

    Ties are broken by ascending insertion order; fewer than k results are
    returned when the index is smaller.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(index) == 0:
        raise ValidationError("cannot select from an empty index")
    values = query_vec.values if isinstance(query_vec, EmbeddingVector) else tuple(query_vec)
    if len(values) != index.dimension:
        raise ValidationError(f"query dimension {len(values)} != index dimension {index.dimension}")
    query = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(query))
    if norm == 0.0:
        raise ValidationError("zero query vector cannot be normalized")
    sims = index.matrix @ (query / norm)
    order = np.argsort(-sims, kind="stable")[:k]
    return [
        RetrievalResult(piece_id=index.ids[i], similarity=float(sims[i]), rank=rank)
        for rank, i in enumerate(order, start=1)
    ]


class PieceScorer(Protocol):
    """Relevance-scorer contract over whole pieces: returns a score in [0,1]."""

    def score(self, query: str, piece: Piece) -> float: ...


def rescore_select(corpus: Corpus, query: str, rs_scorer: PieceScorer, k: int) -> list[RetrievalResult]:
    """Score every (query, piece) pair with the relevance scorer and keep the top k.

    This trades a large constant factor of extra model calls for better
    selection; per-rank averages from this path can be compared against the
    dot-product path via the rank-profile metric.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    pieces = corpus.pieces
    if not pieces:
        raise ValidationError("cannot select from an empty corpus")

    scores: dict[str, float] = {}
    unscored: list[str] = []
    failures: list[str] = []
    for piece in pieces:
        try:
            value = float(rs_scorer.score(query, piece))
        except ScoreRangeError:
            raise
        except ValidationError:
            raise
        except Exception as exc:
            unscored.append(piece.id)
            failures.append(f"{piece.id}: {exc}")
            continue
        if not (0.0 <= value <= 1.0):
            raise ScoreRangeError(
                f"piece {piece.id!r}: relevance score {value} outside [0, 1]"
            )
        scores[piece.id] = value
    if unscored:
        raise PartialScoringError(
            f"rescoring failed for {len(unscored)} piece(s): " + "; ".join(failures),
            unscored=unscored,
        )

    order = sorted(range(len(pieces)), key=lambda i: (-scores[pieces[i].id], i))[:k]
    return [
        RetrievalResult(piece_id=pieces[i].id, similarity=scores[pieces[i].id], rank=rank)
        for rank, i in enumerate(order, start=1)
    ]
