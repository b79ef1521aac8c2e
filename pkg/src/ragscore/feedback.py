"""Persistent human feedback: triplets, splits, ratings, verdicts, task queues.

Everything is stored as append-only line-delimited JSON under one data
directory, with the in-memory index rebuilt on open. Annotation volumes are
small (thousands of records), so append-only files give trivial crash
recovery without a database server.

Files: ``tasks.jsonl``, ``ratings.jsonl``, ``verdicts.jsonl``, ``audit.jsonl``.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import ClosedTaskError, ManifestError, UnknownTaskError, ValidationError
from .metrics import HumanRating, SpanVerdict, RATING_SCALE, VERDICTS

TASK_KINDS = ("relevance", "span_verdict")


@dataclass(frozen=True)
class TripletSample:
    """One (image, positive statement, negative statement) training record."""

    image_ref: str
    positive_statement: str
    negative_statement: str
    source: str = ""

    def __post_init__(self):
        if not self.positive_statement or not self.negative_statement:
            raise ValidationError("triplet statements must be nonempty")
        if self.positive_statement == self.negative_statement:
            raise ValidationError("positive and negative statements must be distinct")
        if not self.image_ref:
            raise ValidationError("triplet image_ref must be nonempty")


def load_triplets(path: Path, image_root: Path | None = None) -> list[TripletSample]:
    """Load and validate a line-delimited triplet file.

    All invalid lines are reported together with their line numbers. When an
    image root is given, refs must resolve beneath it.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"triplet file not found: {path}")
    samples: list[TripletSample] = []
    errors: list[str] = []
    bad_lines: list[int] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
                sample = TripletSample(
                    image_ref=str(record["image_ref"]),
                    positive_statement=str(record["positive_statement"]),
                    negative_statement=str(record["negative_statement"]),
                    source=str(record.get("source", "")),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
                errors.append(f"line {lineno}: {exc}")
                bad_lines.append(lineno)
                continue
            if image_root is not None and not (Path(image_root) / sample.image_ref).is_file():
                errors.append(f"line {lineno}: unresolvable image {sample.image_ref!r}")
                bad_lines.append(lineno)
                continue
            samples.append(sample)
    if errors:
        raise ManifestError(
            f"triplet file {path} has {len(errors)} invalid record(s): " + "; ".join(errors),
            lines=bad_lines,
        )
    if not samples:
        import logging

        logging.getLogger(__name__).warning("triplet file %s is empty", path)
    return samples


@dataclass(frozen=True)
class DatasetSplit:
    """Seeded, reproducible partition of sample ids into train/validation/test."""

    ratios: tuple[float, float, float]
    seed: int
    train: tuple
    validation: tuple
    test: tuple

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_dataset(ids: Sequence, ratios: Sequence[float], seed: int) -> DatasetSplit:
    """Seeded shuffle followed by a contiguous partition at the ratio cuts."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValidationError("ratios must be (train, validation, test)")
    if any(r < 0 for r in ratios):
        raise ValidationError("ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)}")
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    return DatasetSplit(
        ratios=ratios,
        seed=seed,
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
    )


@dataclass(frozen=True)
class AnnotationTask:
    """One unit of annotation work handed to the UI."""

    task_id: int
    kind: str
    payload: dict = field(default_factory=dict)
    status: str = "open"

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValidationError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.status not in ("open", "closed"):
            raise ValidationError(f"task status must be open or closed, got {self.status!r}")


class FeedbackStore:
    """Single-writer store for tasks, ratings, and verdicts.

    Completion is tracked per (task, annotator): a task completed by one
    annotator stays available to others. An ephemeral in-memory hold keeps a
    fetched-but-unanswered task from being handed to a second annotator at
    the same time; holds are deliberately not persisted.
    """

    def __init__(self, data_dir: Path, clock: Callable[[], float] = time.time):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.RLock()
        self._tasks: dict[int, AnnotationTask] = {}
        self._ratings: dict[tuple[int, str], dict] = {}
        self._verdicts: dict[tuple[int, str], dict] = {}
        self._holds: dict[int, str] = {}
        self._record_seq = 0
        self._replay()

    # -- persistence ---------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.data_dir / name

    def _append(self, name: str, record: dict) -> None:
        with self._path(name).open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
            handle.flush()
            os.fsync(handle.fileno())

    def _replay(self) -> None:
        for name, sink in (("ratings.jsonl", self._ratings), ("verdicts.jsonl", self._verdicts)):
            path = self._path(name)
            if not path.is_file():
                continue
            with path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    sink[(record["task_id"], record["annotator_id"])] = record
                    self._record_seq = max(self._record_seq, record.get("record_seq", 0))
        tasks_path = self._path("tasks.jsonl")
        if tasks_path.is_file():
            with tasks_path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    task = AnnotationTask(
                        task_id=record["task_id"],
                        kind=record["kind"],
                        payload=record.get("payload", {}),
                        status=record.get("status", "open"),
                    )
                    self._tasks[task.task_id] = task

    # -- tasks -----------------------------------------------------------

    def add_task(self, kind: str, payload: dict, task_id: int | None = None) -> AnnotationTask:
        with self._lock:
            if task_id is None:
                task_id = max(self._tasks, default=0) + 1
            if task_id in self._tasks:
                raise ValidationError(f"task id {task_id} already exists")
            task = AnnotationTask(task_id=task_id, kind=kind, payload=payload)
            self._tasks[task_id] = task
            self._append("tasks.jsonl", {"task_id": task_id, "kind": kind, "payload": payload, "status": "open"})
            return task

    def close_task(self, task_id: int) -> None:
        with self._lock:
            task = self._require_task(task_id)
            if task.status == "closed":
                return
            closed = AnnotationTask(task_id=task.task_id, kind=task.kind, payload=task.payload, status="closed")
            self._tasks[task_id] = closed
            self._append("tasks.jsonl", {"task_id": task_id, "kind": task.kind, "payload": task.payload, "status": "closed"})

    def get_task(self, task_id: int) -> AnnotationTask:
        with self._lock:
            return self._require_task(task_id)

    def _require_task(self, task_id: int) -> AnnotationTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise UnknownTaskError(f"unknown task id {task_id}")
        return task

    def _completed(self, task: AnnotationTask, annotator_id: str) -> bool:
        sink = self._ratings if task.kind == "relevance" else self._verdicts
        return (task.task_id, annotator_id) in sink

    def next_task(self, annotator_id: str, kind: str) -> AnnotationTask | None:
        """Lowest-id open task of this kind not yet completed by this annotator."""
        if kind not in TASK_KINDS:
            raise ValidationError(f"task kind must be one of {TASK_KINDS}, got {kind!r}")
        with self._lock:
            # Release any previous hold by this annotator; they moved on.
            held = [tid for tid, holder in self._holds.items() if holder == annotator_id]
            for tid in held:
                del self._holds[tid]
            for task_id in sorted(self._tasks):
                task = self._tasks[task_id]
                if task.kind != kind or task.status != "open":
                    continue
                if self._completed(task, annotator_id):
                    continue
                holder = self._holds.get(task_id)
                if holder is not None and holder != annotator_id:
                    continue
                self._holds[task_id] = annotator_id
                return task
            return None

    # -- submissions -----------------------------------------------------

    def _prepare_submission(self, task_id: int, annotator_id: str, kind: str) -> AnnotationTask:
        task = self._require_task(task_id)
        if task.status != "open":
            raise ClosedTaskError(f"task {task_id} is closed")
        if task.kind != kind:
            raise ValidationError(f"task {task_id} expects {task.kind!r} submissions, got {kind!r}")
        if not annotator_id:
            raise ValidationError("annotator_id must be nonempty")
        return task

    def submit_rating(self, rating: HumanRating, task_id: int) -> str:
        """Durably append a rating; resubmission supersedes, with an audit entry."""
        if rating.rating not in RATING_SCALE:
            raise ValidationError(f"rating out of range: {rating.rating}")
        with self._lock:
            self._prepare_submission(task_id, rating.annotator_id, "relevance")
            key = (task_id, rating.annotator_id)
            previous = self._ratings.get(key)
            self._record_seq += 1
            record = {
                "record_seq": self._record_seq,
                "task_id": task_id,
                "question_id": rating.question_id,
                "piece_id": rating.piece_id,
                "rating": rating.rating,
                "annotator_id": rating.annotator_id,
                "timestamp": rating.timestamp or self._clock(),
            }
            self._append("ratings.jsonl", record)
            self._ratings[key] = record
            if previous is not None:
                self._audit_supersession("rating", record, previous)
            self._holds.pop(task_id, None)
            return f"rating-{record['record_seq']}"

    def submit_verdict(self, verdict: SpanVerdict, task_id: int) -> str:
        if verdict.verdict not in VERDICTS:
            raise ValidationError(f"invalid verdict {verdict.verdict!r}")
        with self._lock:
            self._prepare_submission(task_id, verdict.annotator_id, "span_verdict")
            key = (task_id, verdict.annotator_id)
            previous = self._verdicts.get(key)
            self._record_seq += 1
            record = {
                "record_seq": self._record_seq,
                "task_id": task_id,
                "question_id": verdict.question_id,
                "span_index": verdict.span_index,
                "verdict": verdict.verdict,
                "annotator_id": verdict.annotator_id,
                "timestamp": self._clock(),
            }
            self._append("verdicts.jsonl", record)
            self._verdicts[key] = record
            if previous is not None:
                self._audit_supersession("verdict", record, previous)
            self._holds.pop(task_id, None)
            return f"verdict-{record['record_seq']}"

    def _audit_supersession(self, kind: str, record: dict, previous: dict) -> None:
        self._append(
            "audit.jsonl",
            {
                "event": "supersede",
                "kind": kind,
                "task_id": record["task_id"],
                "annotator_id": record["annotator_id"],
                "superseded_seq": previous["record_seq"],
                "by_seq": record["record_seq"],
                "timestamp": self._clock(),
            },
        )

    # -- reads -----------------------------------------------------------

    def progress(self) -> dict[str, dict[str, int]]:
        """Open/complete counts per kind; complete means done by >= 1 annotator."""
        with self._lock:
            out = {kind: {"open": 0, "complete": 0} for kind in TASK_KINDS}
            done_ratings = {task_id for task_id, _ in self._ratings}
            done_verdicts = {task_id for task_id, _ in self._verdicts}
            for task in self._tasks.values():
                if task.status != "open":
                    continue
                done = done_ratings if task.kind == "relevance" else done_verdicts
                bucket = "complete" if task.task_id in done else "open"
                out[task.kind][bucket] += 1
            return out

    def latest_ratings(self) -> list[HumanRating]:
        """Latest rating per (task, annotator), as metric-ready records."""
        with self._lock:
            return [
                HumanRating(
                    question_id=r["question_id"],
                    piece_id=r["piece_id"],
                    rating=r["rating"],
                    annotator_id=r["annotator_id"],
                    timestamp=r["timestamp"],
                )
                for _, r in sorted(self._ratings.items(), key=lambda kv: kv[1]["record_seq"])
            ]

    def latest_verdicts(self) -> list[SpanVerdict]:
        with self._lock:
            return [
                SpanVerdict(
                    question_id=r["question_id"],
                    span_index=r["span_index"],
                    verdict=r["verdict"],
                    annotator_id=r["annotator_id"],
                )
                for _, r in sorted(self._verdicts.items(), key=lambda kv: kv[1]["record_seq"])
            ]

    def audit_entries(self) -> list[dict]:
        path = self._path("audit.jsonl")
        if not path.is_file():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]

    def export_bundle(self, path: Path | None = None) -> dict:
        """One document with tasks and the latest record per (task, annotator)."""
        with self._lock:
            bundle = {
                "tasks": [
                    {"task_id": t.task_id, "kind": t.kind, "payload": t.payload, "status": t.status}
                    for _, t in sorted(self._tasks.items())
                ],
                "ratings": [r for _, r in sorted(self._ratings.items(), key=lambda kv: kv[1]["record_seq"])],
                "verdicts": [r for _, r in sorted(self._verdicts.items(), key=lambda kv: kv[1]["record_seq"])],
            }
        if path is not None:
            Path(path).write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return bundle

    @classmethod
    def import_bundle(cls, bundle: dict, data_dir: Path, clock: Callable[[], float] = time.time) -> "FeedbackStore":
        """Rebuild a store from an exported bundle (lossless round-trip)."""
        store = cls(data_dir, clock=clock)
        for task in bundle.get("tasks", []):
            if task["task_id"] not in store._tasks:
                store.add_task(task["kind"], task["payload"], task_id=task["task_id"])
        for record in bundle.get("ratings", []):
            store.submit_rating(
                HumanRating(
                    question_id=record["question_id"],
                    piece_id=record["piece_id"],
                    rating=record["rating"],
                    annotator_id=record["annotator_id"],
                    timestamp=record["timestamp"],
                ),
                task_id=record["task_id"],
            )
        for record in bundle.get("verdicts", []):
            store.submit_verdict(
                SpanVerdict(
                    question_id=record["question_id"],
                    span_index=record["span_index"],
                    verdict=record["verdict"],
                    annotator_id=record["annotator_id"],
                ),
                task_id=record["task_id"],
            )
        # Close last so records land while tasks still accept submissions.
        for task in bundle.get("tasks", []):
            if task.get("status") == "closed":
                store.close_task(task["task_id"])
        return store
