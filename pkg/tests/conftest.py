from __future__ import annotations

import json
from pathlib import Path

import pytest

from ragscore.corpus import Corpus, Piece, ingest_corpus


def write_manifest(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def make_image_corpus(root: Path, names: list[str]) -> Corpus:
    """A corpus of tiny distinct binary files standing in for images."""
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i, name in enumerate(names):
        filename = f"{name}.png"
        (root / filename).write_bytes(b"\x89PNG" + name.encode() + bytes([i]))
        records.append({"id": name, "modality": "image", "content_ref": filename, "metadata": {}})
    manifest = write_manifest(root / "manifest.jsonl", records)
    return ingest_corpus(manifest, root=root)


def make_text_corpus(entries: dict[str, str]) -> Corpus:
    """Inline-text corpus; no files needed."""
    pieces = [Piece(id=k, modality="text", content_ref=v) for k, v in entries.items()]
    return Corpus(root=Path("."), pieces=pieces)


class RecordingScorer:
    """Scorer stub that logs every request it sees."""

    def __init__(self, logit: float = 0.0, backend_id: str = "recording"):
        self.backend_id = backend_id
        self.logit = logit
        self.calls: list[dict] = []

    def score_logit(self, request, prompt, attachments):
        self.calls.append(
            {
                "template": request.template,
                "statement": request.statement,
                "prompt": prompt,
                "attachment_names": [a.name for a in attachments],
            }
        )
        return self.logit


class CountingScorer:
    """Wraps another backend, counting invocations (for cache tests)."""

    def __init__(self, inner):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.count = 0

    def score_logit(self, request, prompt, attachments):
        self.count += 1
        return self.inner.score_logit(request, prompt, attachments)


@pytest.fixture
def image_corpus(tmp_path) -> Corpus:
    return make_image_corpus(tmp_path / "corpus", ["alpha", "beta", "gamma", "delta", "epsilon"])
