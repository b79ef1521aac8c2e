"""Harness configuration: one INI file binds paths, endpoints, and settings.

Endpoint sections are named ``[endpoint.<role>]`` with roles embedder,
rs_scorer, cs_scorer, vlm, llm, mllm, rewriter. Each is either an HTTP
endpoint (kind = http) or a deterministic fixture (kind = fixture_table for
scorers/generators, kind = fixture_hash for the embedder), so full runs work
offline. Relative paths resolve against the config file's directory.

Example::

    [paths]
    corpus_root = corpus
    data_dir = data

    [selection]
    strategy = cosine_topk
    k = 5

    [generation]
    mode = per_piece_vlm_then_llm
    context_error_policy = fail

    [labeler]
    rs_threshold = 0.7
    cs_threshold = 0.7

    [limits]
    max_in_flight = 4

    [service]
    host = 127.0.0.1
    port = 8080

    [endpoint.embedder]
    kind = fixture_hash
    dim = 32
    seed = 7

    [endpoint.rs_scorer]
    kind = fixture_table
    table = fixtures/rs_table.json
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .pipeline import COSINE_TOPK, DIRECT_MLLM, PER_PIECE, RS_RESCORING, RagConfig
from .scorers import (
    EndpointConfig,
    FixtureGenerator,
    FixtureScorerBackend,
    HashEmbedder,
    HttpEmbedder,
    HttpGenerator,
    HttpScorerBackend,
)

ENDPOINT_ROLES = ("embedder", "rs_scorer", "cs_scorer", "vlm", "llm", "mllm", "rewriter")
_SCORER_ROLES = ("rs_scorer", "cs_scorer")
_GENERATOR_ROLES = ("vlm", "llm", "mllm", "rewriter")


@dataclass
class EndpointSpec:
    role: str
    kind: str
    options: dict = field(default_factory=dict)


@dataclass
class HarnessConfig:
    corpus_root: Path
    data_dir: Path
    manifest: Path | None = None
    selection: str = COSINE_TOPK
    k: int = 5
    generation_mode: str = PER_PIECE
    context_error_policy: str = "fail"
    rs_threshold: float = 0.7
    cs_threshold: float = 0.7
    max_in_flight: int = 4
    host: str = "127.0.0.1"
    port: int = 8080
    report_path: Path | None = None
    static_dir: Path | None = None
    endpoints: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.rs_threshold <= 1.0) or not (0.0 <= self.cs_threshold <= 1.0):
            raise ValidationError("labeler thresholds must lie in [0, 1]")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.selection not in (COSINE_TOPK, RS_RESCORING):
            raise ValidationError(f"unknown selection strategy {self.selection!r}")
        if self.generation_mode not in (PER_PIECE, DIRECT_MLLM):
            raise ValidationError(f"unknown generation mode {self.generation_mode!r}")


def load_config(path: str | Path) -> HarnessConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ValidationError(f"config file {path} is not valid INI: {exc}") from exc

    base = path.parent

    def resolve(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    def get(section: str, option: str, fallback=None):
        if parser.has_option(section, option):
            return parser.get(section, option)
        return fallback

    try:
        corpus_root = resolve(get("paths", "corpus_root", "."))
        data_dir = resolve(get("paths", "data_dir", "data"))
        manifest_raw = get("paths", "manifest")
        report_raw = get("paths", "report")
        static_raw = get("service", "static_dir")

        endpoints = {}
        for section in parser.sections():
            if not section.startswith("endpoint."):
                continue
            role = section.split(".", 1)[1]
            if role not in ENDPOINT_ROLES:
                raise ValidationError(f"unknown endpoint role {role!r} in config")
            options = dict(parser.items(section))
            kind = options.pop("kind", None)
            if kind is None:
                raise ValidationError(f"endpoint {role!r} is missing its kind")
            if "table" in options:
                options["table"] = str(resolve(options["table"]))
            endpoints[role] = EndpointSpec(role=role, kind=kind, options=options)

        config = HarnessConfig(
            corpus_root=corpus_root,
            data_dir=data_dir,
            manifest=resolve(manifest_raw) if manifest_raw else None,
            selection=get("selection", "strategy", COSINE_TOPK),
            k=int(get("selection", "k", "5")),
            generation_mode=get("generation", "mode", PER_PIECE),
            context_error_policy=get("generation", "context_error_policy", "fail"),
            rs_threshold=float(get("labeler", "rs_threshold", "0.7")),
            cs_threshold=float(get("labeler", "cs_threshold", "0.7")),
            max_in_flight=int(get("limits", "max_in_flight", "4")),
            host=get("service", "host", "127.0.0.1"),
            port=int(get("service", "port", "8080")),
            report_path=resolve(report_raw) if report_raw else None,
            static_dir=resolve(static_raw) if static_raw else None,
            endpoints=endpoints,
        )
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"config file {path}: {exc}") from exc
    return config


def _http_endpoint_config(spec: EndpointSpec, max_in_flight: int) -> EndpointConfig:
    options = spec.options
    if "url" not in options:
        raise ValidationError(f"endpoint {spec.role!r}: http endpoints need a url")
    return EndpointConfig(
        base_url=options["url"],
        auth_env=options.get("auth_env"),
        timeout=float(options.get("timeout", 30.0)),
        retries=int(options.get("retries", 2)),
        max_in_flight=int(options.get("max_in_flight", max_in_flight)),
    )


def build_endpoint(spec: EndpointSpec, max_in_flight: int = 4):
    """Construct the client object for one configured endpoint."""
    if spec.kind == "http":
        cfg = _http_endpoint_config(spec, max_in_flight)
        if spec.role in _SCORER_ROLES:
            return HttpScorerBackend(cfg, backend_id=spec.role)
        if spec.role in _GENERATOR_ROLES:
            return HttpGenerator(cfg)
        if spec.role == "embedder":
            return HttpEmbedder(cfg)
        raise ValidationError(f"unsupported http role {spec.role!r}")
    if spec.kind == "fixture_hash":
        if spec.role != "embedder":
            raise ValidationError("fixture_hash endpoints are embedders only")
        return HashEmbedder(dim=int(spec.options.get("dim", 32)), seed=int(spec.options.get("seed", 0)))
    if spec.kind == "fixture_table":
        table = spec.options.get("table")
        if table is None:
            raise ValidationError(f"endpoint {spec.role!r}: fixture_table endpoints need a table file")
        if spec.role in _SCORER_ROLES:
            return FixtureScorerBackend.from_file(table, backend_id=f"fixture-{spec.role}")
        if spec.role in _GENERATOR_ROLES:
            return FixtureGenerator.from_file(table)
        raise ValidationError(f"unsupported fixture_table role {spec.role!r}")
    raise ValidationError(f"unknown endpoint kind {spec.kind!r} for role {spec.role!r}")


def build_backends(config: HarnessConfig) -> dict:
    """Instantiate every configured endpoint, keyed by role."""
    return {
        role: build_endpoint(spec, max_in_flight=config.max_in_flight)
        for role, spec in sorted(config.endpoints.items())
    }


def build_rag_config(config: HarnessConfig, backends: dict | None = None) -> RagConfig:
    """Assemble the pipeline configuration from the harness configuration."""
    backends = backends if backends is not None else build_backends(config)
    return RagConfig(
        k=config.k,
        selection=config.selection,
        generation_mode=config.generation_mode,
        context_error_policy=config.context_error_policy,
        embedder=backends.get("embedder"),
        vlm=backends.get("vlm"),
        llm=backends.get("llm"),
        mllm=backends.get("mllm"),
        rs_scorer=backends.get("rs_scorer"),
    )
