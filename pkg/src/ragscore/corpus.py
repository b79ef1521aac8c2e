"""Enterprise database: pieces, manifests, and content resolution.

A corpus is built from a line-delimited JSON manifest, one record per piece:

    {"id": "img-001", "modality": "image", "content_ref": "photos/a.png",
     "metadata": {"source": "coco"}}

Image refs are paths relative to the corpus root and must exist at ingest
time. Text refs may name a file under the root; otherwise the ref itself is
taken as inline text.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError, ValidationError

logger = logging.getLogger(__name__)

MODALITIES = ("image", "text")


@dataclass(frozen=True)
class Piece:
    """One entry of the enterprise database."""

    id: str
    modality: str
    content_ref: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("piece id must be nonempty")
        if self.modality not in MODALITIES:
            raise ValidationError(
                f"piece {self.id!r}: modality must be one of {MODALITIES}, got {self.modality!r}"
            )
        if not self.content_ref:
            raise ValidationError(f"piece {self.id!r}: content_ref must be nonempty")


class Corpus:
    """An ordered, id-unique collection of pieces rooted at a directory.

    Insertion order is significant: it is the deterministic tie-break order
    for retrieval.
    """

    def __init__(self, root: Path, pieces: list[Piece]):
        self.root = Path(root)
        self._pieces: list[Piece] = []
        self._by_id: dict[str, Piece] = {}
        for piece in pieces:
            if piece.id in self._by_id:
                raise ValidationError(f"duplicate piece id {piece.id!r}")
            self._pieces.append(piece)
            self._by_id[piece.id] = piece

    def __len__(self) -> int:
        return len(self._pieces)

    def __iter__(self):
        return iter(self._pieces)

    @property
    def pieces(self) -> list[Piece]:
        return list(self._pieces)

    def get(self, piece_id: str) -> Piece:
        try:
            return self._by_id[piece_id]
        except KeyError:
            raise ValidationError(f"unknown piece id {piece_id!r}") from None

    def __contains__(self, piece_id: str) -> bool:
        return piece_id in self._by_id

    def content_path(self, piece_id: str) -> Path:
        """Filesystem path of a piece whose ref names a file."""
        piece = self.get(piece_id)
        path = self.root / piece.content_ref
        if not path.is_file():
            raise ValidationError(f"piece {piece_id!r}: content file not found: {path}")
        return path

    def content_bytes(self, piece_id: str) -> bytes:
        """Raw content of a piece (image bytes, or encoded text)."""
        piece = self.get(piece_id)
        if piece.modality == "image":
            return self.content_path(piece_id).read_bytes()
        return self.content_text(piece_id).encode("utf-8")

    def content_text(self, piece_id: str) -> str:
        """Text content of a text piece (file contents or inline ref)."""
        piece = self.get(piece_id)
        if piece.modality != "text":
            raise ValidationError(f"piece {piece_id!r} is not a text piece")
        path = self.root / piece.content_ref
        if path.is_file():
            return path.read_text(encoding="utf-8")
        return piece.content_ref


def _parse_manifest_line(raw: str, lineno: int, errors: list[str], bad_lines: list[int]) -> Piece | None:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
        bad_lines.append(lineno)
        return None
    if not isinstance(record, dict):
        errors.append(f"line {lineno}: record must be a JSON object")
        bad_lines.append(lineno)
        return None
    missing = [key for key in ("id", "modality", "content_ref") if key not in record]
    if missing:
        errors.append(f"line {lineno}: missing fields {missing}")
        bad_lines.append(lineno)
        return None
    metadata = record.get("metadata", {})
    if not isinstance(metadata, dict):
        errors.append(f"line {lineno}: metadata must be an object")
        bad_lines.append(lineno)
        return None
    try:
        return Piece(
            id=str(record["id"]),
            modality=str(record["modality"]),
            content_ref=str(record["content_ref"]),
            metadata=metadata,
        )
    except ValidationError as exc:
        errors.append(f"line {lineno}: {exc}")
        bad_lines.append(lineno)
        return None


def ingest_corpus(manifest: Path, root: Path | None = None) -> Corpus:
    """Validate a manifest and return the corpus it describes.

    All problems are collected and reported together, each with its line
    number. Image refs must resolve to files under the corpus root (which
    defaults to the manifest's directory).
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise ValidationError(f"manifest not found: {manifest}")
    root = Path(root) if root is not None else manifest.parent

    errors: list[str] = []
    bad_lines: list[int] = []
    pieces: list[Piece] = []
    seen: dict[str, int] = {}

    with manifest.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            piece = _parse_manifest_line(raw, lineno, errors, bad_lines)
            if piece is None:
                continue
            if piece.id in seen:
                errors.append(
                    f"line {lineno}: duplicate id {piece.id!r} (first seen on line {seen[piece.id]})"
                )
                bad_lines.append(lineno)
                continue
            if piece.modality == "image" and not (root / piece.content_ref).is_file():
                errors.append(
                    f"line {lineno}: unresolvable content_ref {piece.content_ref!r} under {root}"
                )
                bad_lines.append(lineno)
                continue
            seen[piece.id] = lineno
            pieces.append(piece)

    if errors:
        raise ManifestError(
            f"manifest {manifest} has {len(errors)} invalid record(s): " + "; ".join(errors),
            lines=bad_lines,
        )
    if not pieces:
        logger.warning("manifest %s is empty; corpus has no pieces", manifest)
    return Corpus(root=root, pieces=pieces)
