"""FastAPI application exposing the analysis operations over HTTP."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import FnscopeError
from . import api
from .models import (
    AnalyzeRequest,
    AnalyzeResponse,
    CompareRequest,
    CompareResponse,
    ErrorBody,
    RenderRequest,
    RenderResponse,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
)

_ERROR_RESPONSES = {422: {"model": ErrorBody}}


def create_app() -> FastAPI:
    app = FastAPI(title="fnscope", version=__version__)

    @app.exception_handler(FnscopeError)
    async def _fnscope_error(request: Request, exc: FnscopeError) -> JSONResponse:
        body = ErrorBody(
            kind=exc.kind,
            message=str(exc),
            line=getattr(exc, "line", None),
            path=getattr(exc, "path", None),
        )
        return JSONResponse(status_code=422, content=body.model_dump())

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/v1/validate", response_model=ValidateResponse, responses=_ERROR_RESPONSES)
    async def validate(req: ValidateRequest) -> ValidateResponse:
        return api.do_validate(req)

    @app.post("/v1/analyze", response_model=AnalyzeResponse, responses=_ERROR_RESPONSES)
    async def analyze(req: AnalyzeRequest) -> AnalyzeResponse:
        return api.do_analyze(req)

    @app.post("/v1/synth", response_model=SynthResponse, responses=_ERROR_RESPONSES)
    async def synth(req: SynthRequest) -> SynthResponse:
        return api.do_synth(req)

    @app.post("/v1/compare", response_model=CompareResponse, responses=_ERROR_RESPONSES)
    async def compare(req: CompareRequest) -> CompareResponse:
        return api.do_compare(req)

    @app.post("/v1/report/render", response_model=RenderResponse, responses=_ERROR_RESPONSES)
    async def report_render(req: RenderRequest) -> RenderResponse:
        return api.do_render(req)

    return app


app = create_app()
