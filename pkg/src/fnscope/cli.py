"""Command-line client for validation, analysis, synthesis, and reporting.

All commands run against the same operations the HTTP service exposes. By
default they execute in process; ``--server`` (or ``FNSCOPE_URL``) routes the
identical request to a running service instead. Exit codes are stable:
0 success, 2 unreadable input, 3 parse error, 4 invariant violation,
5 unsatisfiable plan, 6 catalog mismatch, 1 anything else. On success the
diagnostic stream stays empty; ``--quiet`` also trims informational stdout.
"""

from __future__ import annotations

import functools
import gzip
import json
import sys
from pathlib import Path

import click
import httpx
import pydantic

from . import __version__
from . import report as report_mod
from .canonical import canonical_json
from .config import RunConfig
from .errors import (
    CatalogMismatchError,
    DumpIOError,
    DumpParseError,
    FnscopeError,
    InvariantViolation,
    PreconditionError,
    UnsatisfiablePlanError,
)
from .interchange import read_dump_text
from .service import api
from .service.models import (
    AnalyzeRequest,
    CompareRequest,
    RenderRequest,
    SynthRequest,
    ValidateRequest,
)

_DEFAULTS = RunConfig()

_EXIT_CODES = {
    "io_error": 2,
    "parse_error": 3,
    "invariant_violation": 4,
    "unsatisfiable_plan": 5,
    "catalog_mismatch": 6,
}

_ERROR_KINDS = {
    cls.kind: cls
    for cls in (
        DumpIOError,
        DumpParseError,
        InvariantViolation,
        UnsatisfiablePlanError,
        CatalogMismatchError,
        PreconditionError,
    )
}

_COMMANDS = ("validate", "analyze", "synth", "compare", "report-render", "serve")


def _handle_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except FnscopeError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(_EXIT_CODES.get(e.kind, 1))
        except pydantic.ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first["loc"]) or "request"
            click.echo(f"error: invalid {field}: {first['msg']}", err=True)
            sys.exit(2)
        except httpx.HTTPError as e:
            click.echo(f"error: server request failed: {e}", err=True)
            sys.exit(1)

    return wrapper


def _make_http_client(server: str) -> httpx.Client:
    return httpx.Client(base_url=server, timeout=600.0)


def _error_from_body(body: dict) -> FnscopeError:
    message = body.get("message", "server error")
    cls = _ERROR_KINDS.get(body.get("kind"))
    return cls(message) if cls else FnscopeError(message)


class _Client:
    """Runs requests in process, or against ``--server`` when configured."""

    def __init__(self, server: str | None):
        self.server = server

    def _call(self, path: str, request, response_model, local):
        if not self.server:
            return local(request)
        with _make_http_client(self.server) as http:
            r = http.post(path, json=request.model_dump())
        if r.status_code == 422:
            body = r.json()
            if isinstance(body, dict) and "kind" in body:
                raise _error_from_body(body)
        r.raise_for_status()
        return response_model.model_validate(r.json())

    def validate(self, req: ValidateRequest):
        from .service.models import ValidateResponse

        return self._call("/v1/validate", req, ValidateResponse, api.do_validate)

    def analyze(self, req: AnalyzeRequest):
        from .service.models import AnalyzeResponse

        return self._call("/v1/analyze", req, AnalyzeResponse, api.do_analyze)

    def synth(self, req: SynthRequest):
        from .service.models import SynthResponse

        return self._call("/v1/synth", req, SynthResponse, api.do_synth)

    def compare(self, req: CompareRequest):
        from .service.models import CompareResponse

        return self._call("/v1/compare", req, CompareResponse, api.do_compare)

    def render(self, req: RenderRequest):
        from .service.models import RenderResponse

        return self._call("/v1/report/render", req, RenderResponse, api.do_render)


def _read_json_document(path: str) -> dict:
    text = read_dump_text(path)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DumpParseError(f"invalid JSON: {e.msg}", line=e.lineno, path=str(path)) from None
    if not isinstance(obj, dict):
        raise DumpParseError("expected a JSON object", path=str(path))
    return obj


def _write_text(path: str, text: str) -> None:
    p = Path(path)
    try:
        opener = gzip.open if p.suffix == ".gz" else open
        with opener(p, "wt", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise DumpIOError(f"cannot write {p}: {e.strerror or e}") from None


def _info(ctx: click.Context, message: str) -> None:
    if not ctx.obj.get("quiet"):
        click.echo(message)


def _client(ctx: click.Context) -> _Client:
    return _Client(ctx.obj.get("server"))


def _loc_options(f):
    f = click.option(
        "--theta-loc", type=float, default=_DEFAULTS.theta_loc, show_default=True,
        envvar="FNSCOPE_THETA_LOC", help="Localization IoU threshold (matching and attribution).",
    )(f)
    f = click.option(
        "--theta-cls", type=float, default=_DEFAULTS.theta_cls, show_default=True,
        envvar="FNSCOPE_THETA_CLS", help="Classification score threshold.",
    )(f)
    f = click.option(
        "--nms-iou", type=float, default=_DEFAULTS.nms_iou, show_default=True,
        envvar="FNSCOPE_NMS_IOU", help="Suppression overlap threshold for NMS replay.",
    )(f)
    return f


@click.group()
@click.version_option(__version__)
@click.option(
    "--config", "config_path", envvar="FNSCOPE_CONFIG", default=None,
    help="JSON file of default option values; explicit flags win.",
)
@click.option(
    "--server", envvar="FNSCOPE_URL", default=None,
    help="Base URL of an analysis service; default runs in process.",
)
@click.option("--quiet", is_flag=True, envvar="FNSCOPE_QUIET", help="No informational output.")
@click.pass_context
@_handle_errors
def main(ctx: click.Context, config_path: str | None, server: str | None, quiet: bool) -> None:
    """Attribute every undetected object to the detector stage that lost it."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["quiet"] = quiet
    if config_path:
        defaults = _read_json_document(config_path)
        ctx.default_map = {name: defaults for name in _COMMANDS}


@main.command()
@click.argument("dump", type=click.Path())
@click.option("--theta-cls", type=float, default=_DEFAULTS.theta_cls, show_default=True, envvar="FNSCOPE_THETA_CLS")
@click.option("--nms-iou", type=float, default=_DEFAULTS.nms_iou, show_default=True, envvar="FNSCOPE_NMS_IOU")
@click.option("--format", type=click.Choice(["text", "json"]), default="text", envvar="FNSCOPE_FORMAT")
@click.option("--no-consistency", is_flag=True, help="Skip the NMS replay cross-check.")
@click.pass_context
@_handle_errors
def validate(ctx, dump, theta_cls, nms_iou, format, no_consistency):
    """Check a dump against the schema; report replay inconsistencies."""
    text = read_dump_text(dump)
    resp = _client(ctx).validate(ValidateRequest(
        dump_text=text, theta_cls=theta_cls, nms_iou=nms_iou, consistency=not no_consistency,
    ))
    if format == "json":
        record = {"images": resp.images, "diagnostics": [d.model_dump() for d in resp.diagnostics]}
        click.echo(canonical_json(record, indent=2))
    else:
        for d in resp.diagnostics:
            click.echo(f"{d.kind} [{d.image_id}]: {d.message}")
        _info(ctx, f"ok: {resp.images} images, {len(resp.diagnostics)} consistency diagnostics")


@main.command()
@click.argument("dump", type=click.Path())
@_loc_options
@click.option("--tide-fg", type=float, default=_DEFAULTS.tide_fg, show_default=True, envvar="FNSCOPE_TIDE_FG")
@click.option("--tide-bg", type=float, default=_DEFAULTS.tide_bg, show_default=True, envvar="FNSCOPE_TIDE_BG")
@click.option("--workers", type=int, default=_DEFAULTS.workers, show_default=True, envvar="FNSCOPE_WORKERS")
@click.option("--format", type=click.Choice(["table", "machine", "crosstab-flow"]), default="table", envvar="FNSCOPE_FORMAT")
@click.option("--out", type=click.Path(), default=None, help="Write the machine-readable report here.")
@click.option("--records-out", type=click.Path(), default=None, help="Write per-FN records (JSONL) here.")
@click.pass_context
@_handle_errors
def analyze(ctx, dump, theta_loc, theta_cls, nms_iou, tide_fg, tide_bg, workers, format, out, records_out):
    """Attribute all false negatives in a dump and aggregate the results."""
    text = read_dump_text(dump)
    config = RunConfig(
        theta_loc=theta_loc, theta_cls=theta_cls, nms_iou=nms_iou,
        tide_fg=tide_fg, tide_bg=tide_bg, workers=workers,
    )
    resp = _client(ctx).analyze(AnalyzeRequest(dump_text=text, config=config))
    if out:
        _write_text(out, canonical_json(resp.report, indent=2) + "\n")
    if records_out:
        _write_text(records_out, "".join(canonical_json(r) + "\n" for r in resp.records))
    if not (ctx.obj.get("quiet") and out):
        parsed = report_mod.report_from_record(resp.report)
        click.echo(report_mod.render(parsed, format), nl=False)


@main.command()
@click.argument("plan", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True, envvar="FNSCOPE_SEED")
@_loc_options
@click.option("--out", type=click.Path(), required=True, help="Dump output path (.gz compresses).")
@click.option("--truth-out", type=click.Path(), default=None, help="Write injected truth labels (JSONL) here.")
@click.pass_context
@_handle_errors
def synth(ctx, plan, seed, theta_loc, theta_cls, nms_iou, out, truth_out):
    """Generate an oracle-verified synthetic dump from an injection plan."""
    plan_text = read_dump_text(plan)
    resp = _client(ctx).synth(SynthRequest(
        plan_text=plan_text, seed=seed,
        theta_loc=theta_loc, theta_cls=theta_cls, nms_iou=nms_iou,
    ))
    _write_text(out, resp.dump_text)
    if truth_out:
        _write_text(truth_out, "".join(canonical_json(t) + "\n" for t in resp.truths))
    _info(ctx, f"sha256 {resp.sha256}  {out}")


@main.command()
@click.argument("report_a", type=click.Path())
@click.argument("report_b", type=click.Path())
@click.option("--format", type=click.Choice(["table", "machine"]), default="table", envvar="FNSCOPE_FORMAT")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
@_handle_errors
def compare(ctx, report_a, report_b, format, out):
    """Per-cell percentage-point differences between two reports (A minus B)."""
    resp = _client(ctx).compare(CompareRequest(
        report_a=_read_json_document(report_a),
        report_b=_read_json_document(report_b),
    ))
    if format == "machine":
        rendered = canonical_json(resp.delta, indent=2) + "\n"
    else:
        rendered = report_mod.render_delta(report_mod.delta_from_record(resp.delta), "table")
    if out:
        _write_text(out, rendered)
    if not (ctx.obj.get("quiet") and out):
        click.echo(rendered, nl=False)


@main.command("report-render")
@click.argument("report_file", type=click.Path())
@click.option("--format", type=click.Choice(["table", "machine", "crosstab-flow"]), default="table", envvar="FNSCOPE_FORMAT")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
@_handle_errors
def report_render(ctx, report_file, format, out):
    """Re-render a machine-readable report in any output format."""
    resp = _client(ctx).render(RenderRequest(report=_read_json_document(report_file), format=format))
    if out:
        _write_text(out, resp.text)
    if not (ctx.obj.get("quiet") and out):
        click.echo(resp.text, nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True, envvar="FNSCOPE_HOST")
@click.option("--port", type=int, default=8000, show_default=True, envvar="FNSCOPE_PORT")
@_handle_errors
def serve(host, port):
    """Run the HTTP analysis service."""
    import uvicorn

    uvicorn.run("fnscope.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
