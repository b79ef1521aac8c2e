"""The RAG system under test: select pieces, build context, generate, trace.

Two selection strategies (cosine top-k, exhaustive relevance rescoring) and
two generation modes (per-piece VLM narration fused by a text LLM, or a
single multimodal call on the raw images). Every run records a trace that
the scoring pass and the evaluation engine consume.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import Corpus
from .errors import EndpointError, PipelineError, ValidationError
from .index import Embedder, RetrievalResult, VectorIndex, top_k_select, rescore_select
from .scorers import (
    Attachment,
    GenerationBackend,
    RelevancePieceScorer,
    ScoreCache,
    ScoreResponse,
    ScorerBackend,
    score_correctness,
    score_relevance,
)
from .spans import MarkerLexicon, Rewriter, Span, process_response

logger = logging.getLogger(__name__)

COSINE_TOPK = "cosine_topk"
RS_RESCORING = "rs_rescoring"
PER_PIECE = "per_piece_vlm_then_llm"
DIRECT_MLLM = "direct_mllm"

DESCRIBE_IMAGE_PROMPT = "Describe the image"
CONTEXT_PLACEHOLDER = "[context unavailable]"


def _default_fusion_prompt() -> str:
    return resources.files("ragscore.assets.prompts").joinpath("context_fusion_v1.txt").read_text(encoding="utf-8")


def _backend_name(backend) -> str | None:
    if backend is None:
        return None
    return getattr(backend, "backend_id", None) or type(backend).__name__


@dataclass
class RagConfig:
    """Selection strategy, generation mode, and the endpoint bindings."""

    k: int = 5
    selection: str = COSINE_TOPK
    generation_mode: str = PER_PIECE
    context_error_policy: str = "fail"
    embedder: Embedder | None = None
    vlm: GenerationBackend | None = None
    llm: GenerationBackend | None = None
    mllm: GenerationBackend | None = None
    rs_scorer: ScorerBackend | None = None
    describe_prompt: str = DESCRIBE_IMAGE_PROMPT
    fusion_prompt: str | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.selection not in (COSINE_TOPK, RS_RESCORING):
            raise ValidationError(f"unknown selection strategy {self.selection!r}")
        if self.generation_mode not in (PER_PIECE, DIRECT_MLLM):
            raise ValidationError(f"unknown generation mode {self.generation_mode!r}")
        if self.context_error_policy not in ("fail", "skip"):
            raise ValidationError(f"unknown context error policy {self.context_error_policy!r}")
        if self.fusion_prompt is None:
            self.fusion_prompt = _default_fusion_prompt()

    def require_mode_endpoints(self) -> None:
        if self.selection == COSINE_TOPK and self.embedder is None:
            raise ValidationError("cosine_topk selection requires an embedder binding")
        if self.selection == RS_RESCORING and self.rs_scorer is None:
            raise ValidationError("rs_rescoring selection requires a relevance scorer binding")
        if self.generation_mode == PER_PIECE and (self.vlm is None or self.llm is None):
            raise ValidationError("per-piece generation requires vlm and llm bindings")
        if self.generation_mode == DIRECT_MLLM and self.mllm is None:
            raise ValidationError("direct generation requires an mllm binding")

    def snapshot(self) -> dict:
        return {
            "k": self.k,
            "selection": self.selection,
            "generation_mode": self.generation_mode,
            "context_error_policy": self.context_error_policy,
            "endpoints": {
                "embedder": _backend_name(self.embedder),
                "vlm": _backend_name(self.vlm),
                "llm": _backend_name(self.llm),
                "mllm": _backend_name(self.mllm),
                "rs_scorer": _backend_name(self.rs_scorer),
            },
        }


@dataclass(frozen=True)
class RagTrace:
    """Full record of one query run, immutable once recorded."""

    query: str
    retrieved: tuple[RetrievalResult, ...]
    contexts: tuple[str, ...]
    response: str
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_record(self, mask_timings: bool = False) -> dict:
        timings = {k: 0.0 for k in self.timings} if mask_timings else dict(self.timings)
        return {
            "query": self.query,
            "retrieved": [
                {"piece_id": r.piece_id, "similarity": r.similarity, "rank": r.rank}
                for r in self.retrieved
            ],
            "contexts": list(self.contexts),
            "response": self.response,
            "timings": timings,
            "config": self.config,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RagTrace":
        return cls(
            query=record["query"],
            retrieved=tuple(
                RetrievalResult(piece_id=r["piece_id"], similarity=r["similarity"], rank=r["rank"])
                for r in record["retrieved"]
            ),
            contexts=tuple(record.get("contexts", [])),
            response=record["response"],
            timings=dict(record.get("timings", {})),
            config=dict(record.get("config", {})),
        )


def generate_context(corpus: Corpus, retrieved: Sequence[RetrievalResult], config: RagConfig) -> list[str]:
    """Narrate each retrieved image into text, in retrieval order."""
    contexts: list[str] = []
    for result in retrieved:
        attachment = Attachment.from_path(corpus.content_path(result.piece_id))
        try:
            text = config.vlm.generate(config.describe_prompt, [attachment])
        except EndpointError:
            if config.context_error_policy == "fail":
                raise
            logger.warning("context generation failed for piece %s; using placeholder", result.piece_id)
            text = CONTEXT_PLACEHOLDER
        contexts.append(text)
    return contexts


def generate_response(
    query: str,
    config: RagConfig,
    contexts: Sequence[str] = (),
    corpus: Corpus | None = None,
    retrieved: Sequence[RetrievalResult] = (),
) -> str:
    """Produce the final answer from text contexts or raw images."""
    if config.generation_mode == PER_PIECE:
        if not contexts:
            raise ValidationError("per-piece generation requires nonempty contexts")
        blocks = "\n".join(f"Image {i}: {text}" for i, text in enumerate(contexts, start=1))
        prompt = config.fusion_prompt.replace("{contexts}", blocks).replace("{query}", query)
        response = config.llm.generate(prompt)
    else:
        attachments = [
            Attachment.from_path(corpus.content_path(r.piece_id)) for r in retrieved
        ]
        response = config.mllm.generate(query, attachments)
    if not response or not response.strip():
        raise EndpointError("generation endpoint returned an empty response")
    return response


def run_query(query: str, corpus: Corpus, index: VectorIndex | None, config: RagConfig) -> RagTrace:
    """Select, contextualize, respond; returns the complete trace.

    A failure at any stage raises with the partial trace attached so callers
    can inspect what was produced before the failure.
    """
    if not query or not query.strip():
        raise ValidationError("query must be nonempty")
    config.require_mode_endpoints()

    timings: dict[str, float] = {}
    retrieved: tuple[RetrievalResult, ...] = ()
    contexts: tuple[str, ...] = ()

    def partial() -> RagTrace:
        return RagTrace(
            query=query,
            retrieved=retrieved,
            contexts=contexts,
            response="",
            timings=dict(timings),
            config=config.snapshot(),
        )

    start_total = time.perf_counter()
    start = time.perf_counter()
    try:
        if config.selection == COSINE_TOPK:
            if index is None:
                raise ValidationError("cosine_topk selection requires a built index")
            query_vec = config.embedder.embed_text(query)
            retrieved = tuple(top_k_select(index, query_vec, config.k))
        else:
            scorer = RelevancePieceScorer(corpus, config.rs_scorer)
            retrieved = tuple(rescore_select(corpus, query, scorer, config.k))
    except ValidationError:
        raise
    except Exception as exc:
        raise PipelineError(f"selection failed: {exc}", partial_trace=partial()) from exc
    timings["select"] = time.perf_counter() - start

    if config.generation_mode == PER_PIECE:
        start = time.perf_counter()
        try:
            contexts = tuple(generate_context(corpus, retrieved, config))
        except Exception as exc:
            raise PipelineError(f"context generation failed: {exc}", partial_trace=partial()) from exc
        timings["context"] = time.perf_counter() - start

    start = time.perf_counter()
    try:
        response = generate_response(
            query, config, contexts=contexts, corpus=corpus, retrieved=retrieved
        )
    except Exception as exc:
        raise PipelineError(f"response generation failed: {exc}", partial_trace=partial()) from exc
    timings["respond"] = time.perf_counter() - start
    timings["total"] = time.perf_counter() - start_total

    return RagTrace(
        query=query,
        retrieved=retrieved,
        contexts=contexts,
        response=response,
        timings=timings,
        config=config.snapshot(),
    )


# ---------------------------------------------------------------------------
# Scoring pass over recorded traces


@dataclass(frozen=True)
class RelevanceRow:
    piece_id: str
    rank: int
    logit: float
    score: float


@dataclass(frozen=True)
class ScoredSpan:
    span: Span
    correctness: ScoreResponse | None


@dataclass(frozen=True)
class ScoredTrace:
    trace: RagTrace
    relevance: tuple[RelevanceRow, ...]
    spans: tuple[ScoredSpan, ...]

    def to_record(self, mask_timings: bool = False) -> dict:
        return {
            "trace": self.trace.to_record(mask_timings=mask_timings),
            "relevance": [
                {"piece_id": r.piece_id, "rank": r.rank, "logit": r.logit, "score": r.score}
                for r in self.relevance
            ],
            "spans": [
                {
                    "index": s.span.index,
                    "text": s.span.text,
                    "source_range": list(s.span.source_range),
                    "category": s.span.category,
                    "image_refs": list(s.span.image_refs),
                    "correctness": (
                        None
                        if s.correctness is None
                        else {"logit": s.correctness.logit, "score": s.correctness.score}
                    ),
                }
                for s in self.spans
            ],
        }

    @classmethod
    def from_record(cls, record: dict) -> "ScoredTrace":
        return cls(
            trace=RagTrace.from_record(record["trace"]),
            relevance=tuple(
                RelevanceRow(piece_id=r["piece_id"], rank=r["rank"], logit=r["logit"], score=r["score"])
                for r in record["relevance"]
            ),
            spans=tuple(
                ScoredSpan(
                    span=Span(
                        index=s["index"],
                        text=s["text"],
                        source_range=tuple(s["source_range"]),
                        category=s["category"],
                        image_refs=tuple(s["image_refs"]),
                    ),
                    correctness=(
                        None
                        if s["correctness"] is None
                        else ScoreResponse(logit=s["correctness"]["logit"], score=s["correctness"]["score"])
                    ),
                )
                for s in record["spans"]
            ),
        )


def score_trace(
    trace: RagTrace,
    corpus: Corpus,
    rs_backend: ScorerBackend,
    cs_backend: ScorerBackend,
    lexicon: MarkerLexicon,
    rewriter: Rewriter | None = None,
    cache: ScoreCache | None = None,
) -> ScoredTrace:
    """Relevance-score every retrieval and correctness-score every objective span.

    Subjective spans are never sent to the correctness backend. Statements
    with explicit image references are scored against only the referenced
    retrieved images.
    """
    image_paths = [corpus.content_path(r.piece_id) for r in trace.retrieved]

    relevance = []
    for result, path in zip(trace.retrieved, image_paths):
        resp = score_relevance(path, trace.query, rs_backend, cache=cache)
        relevance.append(
            RelevanceRow(piece_id=result.piece_id, rank=result.rank, logit=resp.logit, score=resp.score)
        )

    scored_spans: list[ScoredSpan] = []
    for span in process_response(trace.response, lexicon, rewriter):
        if span.category == "objective":
            correctness = score_correctness(image_paths, span.text, cs_backend, cache=cache)
        else:
            correctness = None
        scored_spans.append(ScoredSpan(span=span, correctness=correctness))

    return ScoredTrace(trace=trace, relevance=tuple(relevance), spans=tuple(scored_spans))


# ---------------------------------------------------------------------------
# Line-delimited persistence


def write_traces(path: Path, traces: Sequence[RagTrace]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for trace in traces:
            handle.write(json.dumps(trace.to_record(), sort_keys=True) + "\n")


def read_traces(path: Path) -> list[RagTrace]:
    return [RagTrace.from_record(json.loads(line)) for line in _lines(path)]


def write_scored_traces(path: Path, scored: Sequence[ScoredTrace]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for item in scored:
            handle.write(json.dumps(item.to_record(), sort_keys=True) + "\n")


def read_scored_traces(path: Path) -> list[ScoredTrace]:
    return [ScoredTrace.from_record(json.loads(line)) for line in _lines(path)]


def _lines(path: Path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield line
