"""Pydantic request/response models for the annotation service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class RatingSubmission(BaseModel):
    task_id: int
    annotator_id: str = Field(min_length=1)
    question_id: str
    piece_id: str
    rating: int = Field(ge=0, le=4, description="0 unsure, 1 none, 2 mild, 3 high, 4 complete")


class VerdictSubmission(BaseModel):
    task_id: int
    annotator_id: str = Field(min_length=1)
    question_id: str
    span_index: int = Field(ge=0)
    verdict: Literal["correct", "incorrect", "subjective"]


class StoredRecord(BaseModel):
    record_id: str


class TaskPayload(BaseModel):
    task_id: int
    kind: Literal["relevance", "span_verdict"]
    payload: dict
    status: str


class NextTaskResponse(BaseModel):
    task: Optional[TaskPayload] = None


class ProgressCounts(BaseModel):
    open: int
    complete: int


class ProgressResponse(BaseModel):
    relevance: ProgressCounts
    span_verdict: ProgressCounts


class ErrorBody(BaseModel):
    detail: str
