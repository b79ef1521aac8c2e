"""Scorer contracts: prompts, score math, caching, and backends.

A scorer backend receives a rendered prompt plus image attachments and
returns a single raw logit; the harness maps it through the logistic sigmoid
to a score in (0, 1). Relevance scoring attaches exactly one image;
correctness scoring attaches the full retrieved set, or only the referenced
subset when the statement carries explicit ``<imageN>`` references.

Deterministic fixture backends (table replay, content-hash embeddings,
table-driven generation) let every workflow run with no model endpoints at
all; HTTP backends speak a small JSON wire contract so any hosted model can
serve as a scorer.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .corpus import Corpus, Piece
from .errors import (
    EndpointError,
    MalformedReplyError,
    ScoreRangeError,
    ValidationError,
)
from .spans import extract_image_refs

RELEVANCE = "relevance"
CORRECTNESS = "correctness"

RS_PROMPT_TEMPLATE = (
    "Evaluate the relevancy of the given statement with the image <image>. "
    "Evaluate by either 'relevant' or 'irrelevant'. The statement is: {statement}."
)
CS_FULL_PROMPT_TEMPLATE = (
    "I am giving you {k} images. Evaluate this statement with these images "
    "and answer by either 'correct' or 'incorrect': {statement}"
)
CS_SCOPED_PROMPT_TEMPLATE = (
    "I am giving you a statement. Evaluate this statement and answer by "
    "either 'correct' or 'incorrect': {statement}"
)

_IMAGE_PLACEHOLDER = "<image>"


def render_rs_prompt(statement: str) -> str:
    """Render the relevance prompt with the statement inlined."""
    if not statement or not statement.strip():
        raise ValidationError("statement must be nonempty")
    if _IMAGE_PLACEHOLDER in statement:
        raise ValidationError(
            f"statement collides with the reserved {_IMAGE_PLACEHOLDER} placeholder"
        )
    return RS_PROMPT_TEMPLATE.format(statement=statement)


def render_cs_prompt(k: int, statement: str) -> str:
    """Render the correctness prompt.

    Statements with explicit image references use the reference-scoped
    variant (only the referenced images get attached by the caller); all
    others use the k-image variant.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not statement or not statement.strip():
        raise ValidationError("statement must be nonempty")
    if extract_image_refs(statement):
        return CS_SCOPED_PROMPT_TEMPLATE.format(statement=statement)
    return CS_FULL_PROMPT_TEMPLATE.format(k=k, statement=statement)


def sigmoid_score(logit: float) -> float:
    """Logistic sigmoid of a raw logit, numerically stable for large |logit|."""
    logit = float(logit)
    if not math.isfinite(logit):
        raise ValidationError(f"logit must be finite, got {logit}")
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    e = math.exp(logit)
    return e / (1.0 + e)


def rlhf_pair_loss(y_p: float, y_n: float, eps: float = 1e-6) -> float:
    """Pairwise score loss: -log(max(sigmoid(y_p) - sigmoid(y_n), eps)).

    The eps clamp regularizes the non-positive-gap region, where the bare
    expression is undefined, while preserving the ordering pressure.
    """
    if not (0.0 < eps < 1.0):
        raise ValidationError(f"eps must lie in (0, 1), got {eps}")
    gap = sigmoid_score(y_p) - sigmoid_score(y_n)
    return -math.log(max(gap, eps))


@dataclass(frozen=True)
class Attachment:
    """One image handed to a backend: its ref (path) and raw bytes."""

    ref: str
    data: bytes

    @property
    def name(self) -> str:
        return Path(self.ref).name

    @classmethod
    def from_path(cls, path: str | Path) -> "Attachment":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"image not found: {path}")
        return cls(ref=str(path), data=path.read_bytes())


@dataclass(frozen=True)
class ScoreRequest:
    template: str
    statement: str
    image_refs: tuple[str, ...]
    backend_id: str

    def __post_init__(self):
        if self.template not in (RELEVANCE, CORRECTNESS):
            raise ValidationError(f"unknown template {self.template!r}")
        if self.template == RELEVANCE and len(self.image_refs) != 1:
            raise ValidationError("relevance requests carry exactly one image")
        if self.template == CORRECTNESS and len(self.image_refs) < 1:
            raise ValidationError("correctness requests carry at least one image")


@dataclass(frozen=True)
class ScoreResponse:
    logit: float
    score: float

    def __post_init__(self):
        if abs(self.score - sigmoid_score(self.logit)) > 1e-9:
            raise ValidationError("score must equal sigmoid(logit)")

    @classmethod
    def from_logit(cls, logit: float) -> "ScoreResponse":
        return cls(logit=float(logit), score=sigmoid_score(logit))


class ScorerBackend(Protocol):
    backend_id: str

    def score_logit(self, request: ScoreRequest, prompt: str, attachments: Sequence[Attachment]) -> float: ...


class GenerationBackend(Protocol):
    def generate(self, prompt: str, images: Sequence[Attachment] = ()) -> str: ...


class ScoreCache:
    """Thread-safe response cache with single-flight semantics.

    A request in flight for a key blocks duplicate dispatch for the same
    key; waiters reuse the leader's result. Keys are content hashes, so
    identical content at different paths still hits.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, ScoreResponse] = {}
        self._pending: dict[str, threading.Event] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def get_or_compute(self, key: str, compute: Callable[[], ScoreResponse]) -> ScoreResponse:
        while True:
            with self._lock:
                if key in self._entries:
                    return self._entries[key]
                event = self._pending.get(key)
                if event is None:
                    self._pending[key] = threading.Event()
                    break
            event.wait()
        try:
            value = compute()
        except BaseException:
            with self._lock:
                self._pending.pop(key).set()
            raise
        with self._lock:
            self._entries[key] = value
            self._pending.pop(key).set()
        return value


def cache_key(backend_id: str, prompt: str, attachments: Sequence[Attachment]) -> str:
    digest = hashlib.sha256()
    digest.update(backend_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prompt.encode("utf-8"))
    for attachment in attachments:
        digest.update(b"\x00")
        digest.update(hashlib.sha256(attachment.data).digest())
    return digest.hexdigest()


def _dispatch(
    backend: ScorerBackend,
    request: ScoreRequest,
    prompt: str,
    attachments: Sequence[Attachment],
    cache: ScoreCache | None,
) -> ScoreResponse:
    def compute() -> ScoreResponse:
        logit = backend.score_logit(request, prompt, attachments)
        if not isinstance(logit, (int, float)) or isinstance(logit, bool) or not math.isfinite(float(logit)):
            raise MalformedReplyError(f"backend {backend.backend_id!r} returned a non-scalar logit: {logit!r}")
        return ScoreResponse.from_logit(float(logit))

    if cache is None:
        return compute()
    return cache.get_or_compute(cache_key(backend.backend_id, prompt, attachments), compute)


def score_relevance(
    image: str | Path,
    query: str,
    backend: ScorerBackend,
    cache: ScoreCache | None = None,
) -> ScoreResponse:
    """Relevance of one image to the query, as logit plus sigmoid score."""
    attachment = Attachment.from_path(image)
    prompt = render_rs_prompt(query)
    request = ScoreRequest(
        template=RELEVANCE,
        statement=query,
        image_refs=(attachment.ref,),
        backend_id=backend.backend_id,
    )
    return _dispatch(backend, request, prompt, (attachment,), cache)


def score_correctness(
    images: Sequence[str | Path],
    statement: str,
    backend: ScorerBackend,
    cache: ScoreCache | None = None,
) -> ScoreResponse:
    """Correctness of a statement against the retrieved images.

    When the statement carries explicit ``<imageN>`` references, only those
    images (1-based, in reference order) are attached, with the
    reference-scoped prompt.
    """
    images = list(images)
    if not images:
        raise ValidationError("correctness scoring needs at least one image")
    refs = extract_image_refs(statement)
    if refs:
        out_of_range = [r for r in refs if r > len(images)]
        if out_of_range:
            raise ValidationError(
                f"statement references image(s) {out_of_range} but only {len(images)} were retrieved"
            )
        selected = [images[r - 1] for r in refs]
    else:
        selected = images
    attachments = tuple(Attachment.from_path(p) for p in selected)
    prompt = render_cs_prompt(len(images), statement)
    request = ScoreRequest(
        template=CORRECTNESS,
        statement=statement,
        image_refs=tuple(a.ref for a in attachments),
        backend_id=backend.backend_id,
    )
    return _dispatch(backend, request, prompt, attachments, cache)


# ---------------------------------------------------------------------------
# Deterministic fixture backends


def _fixture_key(statement: str, names: Sequence[str]) -> tuple[str, tuple[str, ...]]:
    return statement, tuple(sorted(names))


class FixtureScorerBackend:
    """Replays a fixed table of logits keyed by (statement, image name set)."""

    def __init__(
        self,
        table: Mapping[tuple[str, tuple[str, ...]], float] | None = None,
        default_logit: float | None = None,
        backend_id: str = "fixture-scorer",
    ):
        self.backend_id = backend_id
        self.default_logit = default_logit
        self._table: dict[tuple[str, tuple[str, ...]], float] = {}
        for (statement, names), logit in (table or {}).items():
            key = _fixture_key(statement, names)
            if key in self._table:
                raise ValidationError(f"duplicate fixture table key {key!r}")
            self._table[key] = float(logit)

    def score_logit(self, request: ScoreRequest, prompt: str, attachments: Sequence[Attachment]) -> float:
        key = _fixture_key(request.statement, [a.name for a in attachments])
        if key in self._table:
            return self._table[key]
        if self.default_logit is None:
            raise EndpointError(f"fixture backend {self.backend_id!r} has no entry for {key!r}")
        return self.default_logit

    @classmethod
    def from_file(cls, path: str | Path, backend_id: str = "fixture-scorer") -> "FixtureScorerBackend":
        """Load a table from JSON: {"default_logit": .., "entries": [{statement, images, logit}]}."""
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        table = {}
        for entry in spec.get("entries", []):
            key = (entry["statement"], tuple(entry.get("images", [])))
            table[key] = float(entry["logit"])
        return cls(table=table, default_logit=spec.get("default_logit"), backend_id=backend_id)


def fixture_scorer(
    table: Mapping[tuple[str, tuple[str, ...]], float],
    default_logit: float | None = None,
    backend_id: str = "fixture-scorer",
) -> FixtureScorerBackend:
    """Deterministic test backend replaying a logit table.

    Without a default logit the backend is strict: unknown keys raise.
    """
    return FixtureScorerBackend(table=table, default_logit=default_logit, backend_id=backend_id)


class HashEmbedder:
    """Deterministic content-hash embedder for offline runs and tests.

    Each input's bytes seed a PRNG that draws a fixed-dimension unit vector,
    so identical content always embeds identically.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        if dim < 1:
            raise ValidationError("embedding dimension must be >= 1")
        self.dim = dim
        self.seed = seed

    def _vector(self, kind: bytes, payload: bytes) -> list[float]:
        digest = hashlib.sha256(kind + b"\x00" + payload + b"\x00" + str(self.seed).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        return [float(v) for v in vec]

    def embed_text(self, text: str) -> list[float]:
        return self._vector(b"text", text.encode("utf-8"))

    def embed_image(self, data: bytes) -> list[float]:
        return self._vector(b"image", data)


class FixtureGenerator:
    """Table-driven text generation for tests and offline pipelines.

    The first entry whose ``prompt_contains`` substring and image-name set
    both match wins; otherwise the default text is returned, or an error is
    raised when no default is configured.
    """

    def __init__(self, entries: Sequence[Mapping] = (), default_text: str | None = None):
        self._entries = list(entries)
        self.default_text = default_text

    def generate(self, prompt: str, images: Sequence[Attachment] = ()) -> str:
        names = sorted(a.name for a in images)
        for entry in self._entries:
            needle = entry.get("prompt_contains")
            if needle is not None and needle not in prompt:
                continue
            expected = entry.get("images")
            if expected is not None and sorted(expected) != names:
                continue
            return entry["text"]
        if self.default_text is None:
            raise EndpointError(f"fixture generator has no entry matching prompt {prompt[:80]!r}")
        return self.default_text

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureGenerator":
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(entries=spec.get("entries", []), default_text=spec.get("default_text"))


class RelevancePieceScorer:
    """Adapts the relevance backend to the piece-level rescoring contract."""

    def __init__(self, corpus: Corpus, backend: ScorerBackend, cache: ScoreCache | None = None):
        self.corpus = corpus
        self.backend = backend
        self.cache = cache

    def score(self, query: str, piece: Piece) -> float:
        if piece.modality != "image":
            raise ValidationError(f"piece {piece.id!r}: relevance scoring requires an image piece")
        response = score_relevance(self.corpus.content_path(piece.id), query, self.backend, cache=self.cache)
        return response.score


# ---------------------------------------------------------------------------
# HTTP endpoint clients


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for one model endpoint."""

    base_url: str
    auth_env: str | None = None
    timeout: float = 30.0
    retries: int = 2
    max_in_flight: int = 4

    def __post_init__(self):
        if not self.base_url:
            raise ValidationError("endpoint base_url must be nonempty")
        if self.timeout <= 0:
            raise ValidationError("endpoint timeout must be > 0")
        if self.retries < 0:
            raise ValidationError("endpoint retry budget must be >= 0")
        if self.max_in_flight < 1:
            raise ValidationError("endpoint max_in_flight must be >= 1")


class _HttpEndpoint:
    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None):
        import os

        self.config = config
        headers = {}
        if config.auth_env:
            token = os.environ.get(config.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self._slots = threading.Semaphore(config.max_in_flight)

    def _post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for _ in range(self.config.retries + 1):
            try:
                with self._slots:
                    reply = self._client.post(self.config.base_url, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if reply.status_code >= 500:
                last_error = EndpointError(f"endpoint {self.config.base_url} replied {reply.status_code}")
                continue
            if reply.status_code >= 400:
                raise EndpointError(f"endpoint {self.config.base_url} replied {reply.status_code}")
            try:
                body = reply.json()
            except ValueError as exc:
                raise MalformedReplyError(f"endpoint {self.config.base_url} returned non-JSON body") from exc
            if not isinstance(body, dict):
                raise MalformedReplyError(f"endpoint {self.config.base_url} returned a non-object body")
            return body
        raise EndpointError(
            f"endpoint {self.config.base_url} failed after {self.config.retries + 1} attempt(s): {last_error}"
        )

    def close(self) -> None:
        self._client.close()


class HttpScorerBackend(_HttpEndpoint):
    """Scorer endpoint: POST {prompt, images: [base64]} -> {logit}."""

    def __init__(self, config: EndpointConfig, backend_id: str, transport: httpx.BaseTransport | None = None):
        super().__init__(config, transport)
        self.backend_id = backend_id

    def score_logit(self, request: ScoreRequest, prompt: str, attachments: Sequence[Attachment]) -> float:
        payload = {
            "prompt": prompt,
            "images": [base64.b64encode(a.data).decode("ascii") for a in attachments],
        }
        body = self._post(payload)
        logit = body.get("logit")
        if not isinstance(logit, (int, float)) or isinstance(logit, bool):
            raise MalformedReplyError(f"scorer endpoint returned a non-scalar logit: {logit!r}")
        return float(logit)


class HttpEmbedder(_HttpEndpoint):
    """Embedding endpoint: POST {text} or {image: base64} -> {vector}."""

    def _vector(self, payload: dict) -> list[float]:
        body = self._post(payload)
        vector = body.get("vector")
        if not isinstance(vector, list) or not vector or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector
        ):
            raise MalformedReplyError(f"embedding endpoint returned an invalid vector: {vector!r}")
        return [float(v) for v in vector]

    def embed_text(self, text: str) -> list[float]:
        return self._vector({"text": text})

    def embed_image(self, data: bytes) -> list[float]:
        return self._vector({"image": base64.b64encode(data).decode("ascii")})


class HttpGenerator(_HttpEndpoint):
    """Generation endpoint: POST {prompt, images?: [base64]} -> {text}."""

    def generate(self, prompt: str, images: Sequence[Attachment] = ()) -> str:
        payload: dict = {"prompt": prompt}
        if images:
            payload["images"] = [base64.b64encode(a.data).decode("ascii") for a in images]
        body = self._post(payload)
        text = body.get("text")
        if not isinstance(text, str):
            raise MalformedReplyError(f"generation endpoint returned non-text body: {text!r}")
        return text
