"""Service operations as plain functions.

The CLI calls these in process by default; the HTTP app exposes the same
functions over routes. Errors surface as the package's exception hierarchy in
both cases, so exit codes and HTTP error bodies stay aligned.
"""

from __future__ import annotations

import hashlib

from .. import report as report_mod
from ..analysis import run_analysis
from ..errors import PreconditionError
from ..interchange import emit_dump_text, parse_dump_text, validate_consistency
from ..synth import generate_dump, parse_plan
from .models import (
    AnalyzeRequest,
    AnalyzeResponse,
    CompareRequest,
    CompareResponse,
    DiagnosticModel,
    RenderRequest,
    RenderResponse,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
)


def do_validate(req: ValidateRequest) -> ValidateResponse:
    header, images = parse_dump_text(req.dump_text)
    diagnostics: list[DiagnosticModel] = []
    if req.consistency:
        for image in images:
            for d in validate_consistency(header, image, req.theta_cls, req.nms_iou):
                diagnostics.append(DiagnosticModel(
                    kind=d.kind, image_id=d.image_id,
                    message=d.message, detection_index=d.detection_index,
                ))
    return ValidateResponse(images=len(images), diagnostics=diagnostics)


def do_analyze(req: AnalyzeRequest) -> AnalyzeResponse:
    header, images = parse_dump_text(req.dump_text)
    result = run_analysis(header, images, req.config)
    return AnalyzeResponse(
        report=report_mod.report_record(result.report),
        records=[r.to_record() for r in result.records],
    )


def do_synth(req: SynthRequest) -> SynthResponse:
    plan = parse_plan(req.plan_text)
    header, images, truths = generate_dump(
        plan, req.seed, theta_loc=req.theta_loc, theta_cls=req.theta_cls, nms_iou=req.nms_iou
    )
    text = emit_dump_text(header, images)
    return SynthResponse(
        dump_text=text,
        truths=[t.to_record() for t in truths],
        sha256=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


def do_compare(req: CompareRequest) -> CompareResponse:
    a = report_mod.report_from_record(req.report_a)
    b = report_mod.report_from_record(req.report_b)
    return CompareResponse(delta=report_mod.delta_record(report_mod.compare(a, b)))


def do_render(req: RenderRequest) -> RenderResponse:
    parsed = report_mod.report_from_record(req.report)
    try:
        return RenderResponse(text=report_mod.render(parsed, req.format))
    except ValueError as e:
        raise PreconditionError(str(e)) from None
