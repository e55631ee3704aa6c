"""Request and response bodies for the service endpoints.

The service operates on document content, never on server-side paths: clients
(including the bundled CLI) read files themselves and post the text.
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

from ..config import RunConfig


class DiagnosticModel(BaseModel):
    kind: str
    image_id: str
    message: str
    detection_index: int | None = None


class ValidateRequest(BaseModel):
    dump_text: str
    theta_cls: float = Field(default=0.3, ge=0.0, le=1.0)
    nms_iou: float = Field(default=0.5, gt=0.0, lt=1.0)
    consistency: bool = True


class ValidateResponse(BaseModel):
    images: int
    diagnostics: list[DiagnosticModel] = Field(default_factory=list)


class AnalyzeRequest(BaseModel):
    dump_text: str
    config: RunConfig = Field(default_factory=RunConfig)


class AnalyzeResponse(BaseModel):
    report: dict[str, Any]
    records: list[dict[str, Any]]


class SynthRequest(BaseModel):
    plan_text: str
    seed: int = 0
    theta_loc: float = Field(default=0.5, gt=0.0, lt=1.0)
    theta_cls: float = Field(default=0.3, ge=0.0, le=1.0)
    nms_iou: float = Field(default=0.5, gt=0.0, lt=1.0)


class SynthResponse(BaseModel):
    dump_text: str
    truths: list[dict[str, Any]]
    sha256: str


class CompareRequest(BaseModel):
    report_a: dict[str, Any]
    report_b: dict[str, Any]


class CompareResponse(BaseModel):
    delta: dict[str, Any]


class RenderRequest(BaseModel):
    report: dict[str, Any]
    format: Literal["table", "machine", "crosstab-flow"] = "table"


class RenderResponse(BaseModel):
    text: str


class ErrorBody(BaseModel):
    kind: str
    message: str
    line: int | None = None
    path: str | None = None
