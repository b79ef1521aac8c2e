"""Command-line entry points for every workflow.

Each subcommand is a thin shell over one library operation; identical inputs
through the CLI and through direct calls produce identical outputs. Exit
codes: 0 success, 1 validation failure, 2 endpoint failure, 3 internal
error. Failures print a single machine-parseable line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import metrics as metrics_mod
from . import report as report_mod
from .config import HarnessConfig, build_backends, build_rag_config, load_config
from .corpus import ingest_corpus
from .errors import EndpointError, HarnessError, ValidationError
from .index import VectorIndex, build_index, top_k_select
from .metrics import HumanRating, alignment_reward, optimize_threshold, sweep_thresholds
from .pipeline import (
    COSINE_TOPK,
    read_traces,
    run_query,
    score_trace,
    write_scored_traces,
    write_traces,
)
from .spans import MarkerLexicon, process_response

CONFIG_ENV = "RAGSCORE_CONFIG"


def _load_config(args) -> HarnessConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if not path:
        raise ValidationError("no config file given (use --config or RAGSCORE_CONFIG)")
    return load_config(path)


def _emit(args, text: str) -> None:
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _json_line(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True) + "\n"


def _read_scores_file(path: str) -> list[float]:
    values: list[float] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} line {lineno}: invalid JSON ({exc.msg})") from exc
        if isinstance(record, dict):
            record = record.get("score")
        if not isinstance(record, (int, float)) or isinstance(record, bool):
            raise ValidationError(f"{path} line {lineno}: expected a score number")
        values.append(float(record))
    if not values:
        raise ValidationError(f"{path}: no scores found")
    return values


def _lexicon(args) -> MarkerLexicon:
    path = getattr(args, "lexicon", None)
    return MarkerLexicon.from_file(path) if path else MarkerLexicon.default()


# -- subcommand handlers ----------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_config(args) if (args.config or os.environ.get(CONFIG_ENV)) else None
    manifest = Path(args.manifest) if args.manifest else (config.manifest if config else None)
    if manifest is None:
        raise ValidationError("ingest needs --manifest (or a manifest in the config)")
    root = Path(args.root) if args.root else (config.corpus_root if config else None)
    corpus = ingest_corpus(manifest, root=root)
    by_modality: dict[str, int] = {}
    for piece in corpus:
        by_modality[piece.modality] = by_modality.get(piece.modality, 0) + 1
    _emit(args, _json_line({"pieces": len(corpus), "by_modality": by_modality, "root": str(corpus.root)}))
    return 0


def cmd_index(args) -> int:
    config = _load_config(args)
    manifest = Path(args.manifest) if args.manifest else config.manifest
    if manifest is None:
        raise ValidationError("index needs --manifest (or a manifest in the config)")
    corpus = ingest_corpus(manifest, root=config.corpus_root)
    backends = build_backends(config)
    embedder = backends.get("embedder")
    if embedder is None:
        raise ValidationError("no embedder endpoint configured")
    index = build_index(corpus, embedder, max_in_flight=config.max_in_flight)
    index.save(args.out)
    sys.stdout.write(_json_line({"pieces": len(index), "dimension": index.dimension, "out": str(args.out)}))
    return 0


def cmd_retrieve(args) -> int:
    config = _load_config(args)
    index = VectorIndex.load(args.index)
    embedder = build_backends(config).get("embedder")
    if embedder is None:
        raise ValidationError("no embedder endpoint configured")
    results = top_k_select(index, embedder.embed_text(args.query), args.k)
    lines = "".join(f"{r.rank}\t{r.piece_id}\t{r.similarity:.6f}\n" for r in results)
    _emit(args, lines)
    return 0


def cmd_run(args) -> int:
    config = _load_config(args)
    manifest = Path(args.manifest) if args.manifest else config.manifest
    if manifest is None:
        raise ValidationError("run needs --manifest (or a manifest in the config)")
    queries = list(args.query or [])
    if args.queries:
        queries += [q.strip() for q in Path(args.queries).read_text(encoding="utf-8").splitlines() if q.strip()]
    if not queries:
        raise ValidationError("run needs at least one --query or a --queries file")

    corpus = ingest_corpus(manifest, root=config.corpus_root)
    rag_config = build_rag_config(config)
    index = None
    if rag_config.selection == COSINE_TOPK:
        index = build_index(corpus, rag_config.embedder, max_in_flight=config.max_in_flight)
    traces = [run_query(query, corpus, index, rag_config) for query in queries]
    write_traces(args.out, traces)
    sys.stdout.write(_json_line({"queries": len(traces), "out": str(args.out)}))
    return 0


def cmd_score(args) -> int:
    config = _load_config(args)
    manifest = Path(args.manifest) if args.manifest else config.manifest
    if manifest is None:
        raise ValidationError("score needs --manifest (or a manifest in the config)")
    corpus = ingest_corpus(manifest, root=config.corpus_root)
    backends = build_backends(config)
    rs_backend = backends.get("rs_scorer")
    cs_backend = backends.get("cs_scorer")
    if rs_backend is None or cs_backend is None:
        raise ValidationError("score needs rs_scorer and cs_scorer endpoints configured")
    lexicon = _lexicon(args)
    rewriter = backends.get("rewriter")
    scored = [
        score_trace(trace, corpus, rs_backend, cs_backend, lexicon, rewriter=rewriter)
        for trace in read_traces(args.traces)
    ]
    write_scored_traces(args.out, scored)
    sys.stdout.write(_json_line({"traces": len(scored), "out": str(args.out)}))
    return 0


def cmd_spans(args) -> int:
    if args.response is not None:
        response = args.response
    elif getattr(args, "infile", None):
        response = Path(args.infile).read_text(encoding="utf-8")
    else:
        raise ValidationError("spans needs --response or --in")
    rewriter = None
    if args.config or os.environ.get(CONFIG_ENV):
        config = _load_config(args)
        rewriter = build_backends(config).get("rewriter")
    spans = process_response(response, _lexicon(args), rewriter=rewriter)
    lines = "".join(
        _json_line(
            {
                "index": s.index,
                "text": s.text,
                "category": s.category,
                "image_refs": list(s.image_refs),
                "source_range": list(s.source_range),
            }
        )
        for s in spans
    )
    _emit(args, lines)
    return 0


def cmd_calibrate(args) -> int:
    pos = _read_scores_file(args.scores[0])
    neg = _read_scores_file(args.scores[1])
    curve = sweep_thresholds(pos, neg, args.step)
    eta = optimize_threshold(curve)
    document = {
        "step": args.step,
        "optimized_threshold": eta,
        "points": [
            {"eta": point_eta, "true0": stats.true0, "true1": stats.true1, "accuracy": stats.accuracy}
            for point_eta, stats in curve
        ],
    }
    if args.out:
        Path(args.out).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(_json_line({"optimized_threshold": eta, "points": len(curve)}))
    return 0


def _read_ratings_file(path: str) -> list[HumanRating]:
    ratings = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            ratings.append(
                HumanRating(
                    question_id=str(record["question_id"]),
                    piece_id=str(record["piece_id"]),
                    rating=int(record["rating"]),
                    annotator_id=str(record.get("annotator_id", "anonymous")),
                    timestamp=float(record.get("timestamp", 0.0)),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
            raise ValidationError(f"{path} line {lineno}: {exc}") from exc
    if not ratings:
        raise ValidationError(f"{path}: no ratings found")
    return ratings


def _read_pair_scores_file(path: str) -> dict[tuple[str, str], float]:
    scores: dict[tuple[str, str], float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            scores[(str(record["question_id"]), str(record["piece_id"]))] = float(record["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path} line {lineno}: {exc}") from exc
    return scores


def cmd_align(args) -> int:
    result = alignment_reward(_read_ratings_file(args.ratings), _read_pair_scores_file(args.scores))
    _emit(
        args,
        _json_line(
            {
                "weighted_match": result.weighted_match,
                "mean_reward": result.mean_reward,
                "raw_reward_sum": result.raw_reward_sum,
                "max_reward_sum": result.max_reward_sum,
                "pairs_considered": result.pairs_considered,
                "pairs_disregarded": result.pairs_disregarded,
            }
        ),
    )
    return 0


def cmd_compare(args) -> int:
    from .pipeline import read_scored_traces

    labels = args.labels or [Path(p).stem for p in args.scored]
    if len(labels) != len(args.scored):
        raise ValidationError("--labels must match the number of scored files")
    runs: dict[str, list[tuple[float, str]]] = {}
    for label, path in zip(labels, args.scored):
        rows: list[tuple[float, str]] = []
        for scored in read_scored_traces(path):
            for item in scored.spans:
                cs = item.correctness.score if item.correctness is not None else 0.0
                rows.append((cs, item.span.category))
        runs[label] = rows
    averages = metrics_mod.config_comparison(runs)
    if args.out:
        Path(args.out).write_text(json.dumps(averages, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(_json_line(averages))
    return 0


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def cmd_report(args) -> int:
    labeler = None
    if args.labeler:
        labeler = [
            (
                row["model"],
                metrics_mod.ConfusionStats(
                    true0=row["true0"],
                    true1=row["true1"],
                    accuracy=row["accuracy"],
                    pos_total=row.get("pos_total", 0),
                    pos_hits=row.get("pos_hits", 0),
                    neg_total=row.get("neg_total", 0),
                    neg_hits=row.get("neg_hits", 0),
                ),
            )
            for row in _load_json(args.labeler)
        ]
    alignment = None
    if args.alignment:
        payload = _load_json(args.alignment)
        entries = payload if isinstance(payload, list) else [payload]
        alignment = [
            (
                entry.get("method", "relevance_score"),
                metrics_mod.AlignmentResult(
                    weighted_match=entry["weighted_match"],
                    pairs_considered=entry["pairs_considered"],
                    pairs_disregarded=entry["pairs_disregarded"],
                    raw_reward_sum=entry["raw_reward_sum"],
                    max_reward_sum=entry["max_reward_sum"],
                ),
            )
            for entry in entries
        ]
    curve = None
    optimized = None
    if args.curve:
        payload = _load_json(args.curve)
        optimized = payload.get("optimized_threshold")
        curve = [
            (
                point["eta"],
                metrics_mod.ConfusionStats(
                    true0=point["true0"],
                    true1=point["true1"],
                    accuracy=point["accuracy"],
                    pos_total=point.get("pos_total", 0),
                    pos_hits=point.get("pos_hits", 0),
                    neg_total=point.get("neg_total", 0),
                    neg_hits=point.get("neg_hits", 0),
                ),
            )
            for point in payload["points"]
        ]
    profiles = _load_json(args.profiles) if args.profiles else None
    comparison = _load_json(args.comparison) if args.comparison else None

    document = report_mod.emit_report(
        labeler_performance=labeler,
        alignment=alignment,
        threshold_curve=curve,
        rank_profiles=profiles,
        config_comparison=comparison,
        cs_human_overlap=args.overlap,
        optimized_threshold=optimized,
    )
    if args.out:
        document.save(args.out, args.text)
    else:
        sys.stdout.write(document.to_json())
    return 0


def cmd_export(args) -> int:
    from .feedback import FeedbackStore

    config = _load_config(args)
    store = FeedbackStore(config.data_dir)
    bundle = store.export_bundle(args.out)
    if args.ratings:
        with Path(args.ratings).open("w", encoding="utf-8") as handle:
            for record in bundle["ratings"]:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
    if args.verdicts:
        with Path(args.verdicts).open("w", encoding="utf-8") as handle:
            for record in bundle["verdicts"]:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.write(
        _json_line(
            {
                "tasks": len(bundle["tasks"]),
                "ratings": len(bundle["ratings"]),
                "verdicts": len(bundle["verdicts"]),
                "out": str(args.out),
            }
        )
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .feedback import FeedbackStore
    from .service.app import create_app

    config = _load_config(args)
    store = FeedbackStore(config.data_dir)
    corpus = None
    if config.manifest is not None:
        corpus = ingest_corpus(config.manifest, root=config.corpus_root)
    app = create_app(
        store,
        corpus=corpus,
        report_path=config.report_path,
        static_dir=config.static_dir,
    )
    host = args.host or config.host
    port = args.port or config.port
    uvicorn.run(app, host=host, port=port)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragscore",
        description="Evaluation harness for multimodal retrieval-augmented generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--config", help=f"harness config file (or ${CONFIG_ENV})")
        return p

    p = add("ingest", cmd_ingest, "validate a corpus manifest")
    p.add_argument("--manifest")
    p.add_argument("--root")
    p.add_argument("--out")

    p = add("index", cmd_index, "embed the corpus and build the vector index")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)

    p = add("retrieve", cmd_retrieve, "cosine top-k lookup against a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out")

    p = add("run", cmd_run, "run queries through the RAG pipeline, recording traces")
    p.add_argument("--manifest")
    p.add_argument("--query", action="append")
    p.add_argument("--queries")
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "relevance- and correctness-score recorded traces")
    p.add_argument("--manifest")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon")

    p = add("spans", cmd_spans, "partition a response into categorized spans")
    p.add_argument("--response")
    p.add_argument("--in", dest="infile")
    p.add_argument("--lexicon")
    p.add_argument("--out")

    p = add("calibrate", cmd_calibrate, "sweep labeler thresholds and pick the balanced one")
    p.add_argument("--scores", nargs=2, required=True, metavar=("POS", "NEG"))
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out")

    p = add("align", cmd_align, "score agreement between relevance scores and human ratings")
    p.add_argument("--ratings", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out")

    p = add("compare", cmd_compare, "average correctness score per configuration")
    p.add_argument("--scored", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out")

    p = add("report", cmd_report, "assemble the evaluation report from metric artifacts")
    p.add_argument("--labeler")
    p.add_argument("--alignment")
    p.add_argument("--curve")
    p.add_argument("--profiles")
    p.add_argument("--comparison")
    p.add_argument("--overlap", type=float)
    p.add_argument("--out")
    p.add_argument("--text")

    p = add("export", cmd_export, "export the feedback store as one bundle (latest records)")
    p.add_argument("--out", required=True)
    p.add_argument("--ratings", help="also write latest ratings as JSONL (align-ready)")
    p.add_argument("--verdicts", help="also write latest verdicts as JSONL")

    p = add("serve", cmd_serve, "start the annotation and report service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: validation: {_one_line(exc)}\n")
        return 1
    except EndpointError as exc:
        sys.stderr.write(f"error: endpoint: {_one_line(exc)}\n")
        return 2
    except HarnessError as exc:
        sys.stderr.write(f"error: internal: {_one_line(exc)}\n")
        return 3
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        sys.stderr.write(f"error: internal: {_one_line(exc)}\n")
        return 3


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
