"""HTTP service driving the annotation UI and serving reports.

The service is stateless above the feedback store: handlers validate,
delegate, and serialize. Restarting it loses no data and changes no task
ordering. Pydantic rejections and store validation errors both surface as
400, unknown tasks as 404, closed tasks as 409.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, HTMLResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from ..corpus import Corpus
from ..errors import ClosedTaskError, UnknownTaskError, ValidationError
from ..feedback import FeedbackStore
from ..metrics import HumanRating, SpanVerdict
from .schemas import (
    NextTaskResponse,
    ProgressResponse,
    RatingSubmission,
    StoredRecord,
    TaskPayload,
    VerdictSubmission,
)

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><title>annotation service</title></head>
<body><h1>annotation service</h1>
<p>The annotation UI is not built. Build the frontend and point the
service's static_dir at its dist directory.</p></body></html>
"""


def create_app(
    store: FeedbackStore,
    corpus: Corpus | None = None,
    report_path: Path | None = None,
    static_dir: Path | None = None,
) -> FastAPI:
    app = FastAPI(title="ragscore annotation service")

    @app.exception_handler(RequestValidationError)
    async def on_request_validation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors())})

    @app.exception_handler(ValidationError)
    async def on_validation(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(UnknownTaskError)
    async def on_unknown_task(request: Request, exc: UnknownTaskError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(ClosedTaskError)
    async def on_closed_task(request: Request, exc: ClosedTaskError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.get("/tasks/next", response_model=NextTaskResponse)
    def next_task(kind: str, annotator: str) -> NextTaskResponse:
        task = store.next_task(annotator, kind)
        if task is None:
            return NextTaskResponse(task=None)
        return NextTaskResponse(
            task=TaskPayload(task_id=task.task_id, kind=task.kind, payload=task.payload, status=task.status)
        )

    @app.post("/ratings", response_model=StoredRecord)
    def post_rating(submission: RatingSubmission) -> StoredRecord:
        record_id = store.submit_rating(
            HumanRating(
                question_id=submission.question_id,
                piece_id=submission.piece_id,
                rating=submission.rating,
                annotator_id=submission.annotator_id,
            ),
            task_id=submission.task_id,
        )
        return StoredRecord(record_id=record_id)

    @app.post("/verdicts", response_model=StoredRecord)
    def post_verdict(submission: VerdictSubmission) -> StoredRecord:
        record_id = store.submit_verdict(
            SpanVerdict(
                question_id=submission.question_id,
                span_index=submission.span_index,
                verdict=submission.verdict,
                annotator_id=submission.annotator_id,
            ),
            task_id=submission.task_id,
        )
        return StoredRecord(record_id=record_id)

    @app.get("/progress", response_model=ProgressResponse)
    def progress() -> ProgressResponse:
        return ProgressResponse(**store.progress())

    @app.get("/report")
    def report() -> Response:
        if report_path is None or not Path(report_path).is_file():
            return JSONResponse(status_code=404, content={"detail": "no report available"})
        return JSONResponse(content=json.loads(Path(report_path).read_text(encoding="utf-8")))

    @app.get("/pieces/{piece_id}")
    def piece_content(piece_id: str) -> Response:
        if corpus is None:
            return JSONResponse(status_code=404, content={"detail": "no corpus bound"})
        if piece_id not in corpus:
            return JSONResponse(status_code=404, content={"detail": f"unknown piece {piece_id!r}"})
        piece = corpus.get(piece_id)
        if piece.modality == "image":
            return FileResponse(corpus.content_path(piece_id))
        return Response(content=corpus.content_text(piece_id), media_type="text/plain")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def home() -> str:
            return _PLACEHOLDER_PAGE

    return app
