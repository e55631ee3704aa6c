"""Detector-introspection dump format: types, streaming parser, canonical emitter.

A dump is UTF-8, line-delimited JSON. Line 1 is the header (class catalog plus
optional anchor-elision declaration); every following line is one complete
image record. ``docs/formats.md`` is the normative format definition; this
module is its reference implementation.

Parsing is strict: unknown keys, wrong types, and invariant violations all
raise with the offending line number and field path. Canonical emission uses
fixed key order and 6-significant-digit floats, so ``parse -> emit`` is
byte-identical on canonical input.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Iterator

from .anchors import AnchorSpec, anchor_count
from .canonical import canonical_json, quantize
from .errors import DumpIOError, DumpParseError, InvariantViolation
from .geometry import BBox

FORMAT_VERSION = "1"


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class ClassCatalog:
    names: tuple[str, ...]
    has_background_entry: bool

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValueError("catalog needs at least one target class")
        if any(not n for n in self.names) or len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique and non-empty")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def score_length(self) -> int:
        return len(self.names) + (1 if self.has_background_entry else 0)


@dataclass(frozen=True)
class DumpHeader:
    catalog: ClassCatalog
    proposals_are_anchors: bool = False
    anchor_spec: AnchorSpec | None = None

    def __post_init__(self):
        if self.proposals_are_anchors and self.anchor_spec is None:
            raise ValueError("anchor elision requires an anchor_spec")


@dataclass(frozen=True)
class GroundTruthObject:
    id: int
    box: BBox
    class_index: int  # 1..N
    ignore: bool = False


@dataclass(frozen=True)
class Proposal:
    id: int
    box: BBox
    objectness: float | None = None


@dataclass(frozen=True)
class RefinedCandidate:
    proposal_id: int
    box: BBox
    scores: tuple[float, ...]
    class_specific_for: int | None = None


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_index: int
    score: float
    source_candidate: int | None = None


@dataclass(frozen=True)
class ImageIntrospection:
    image_id: str
    width: int
    height: int
    ground_truth: tuple[GroundTruthObject, ...]
    proposals: tuple[Proposal, ...]
    refined: tuple[RefinedCandidate, ...]
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class Diagnostic:
    """Non-fatal consistency finding from ``validate_consistency``."""

    kind: str  # extra_declared | missing_declared | sub_threshold
    image_id: str
    message: str
    detection_index: int | None = None


def xywh_to_bbox(x: float, y: float, w: float, h: float) -> BBox:
    """Convert top-left/width/height form to the corner form used on the wire."""
    return BBox(x, y, x + w, y + h)


# ---------------------------------------------------------------------------
# Parsing helpers


def _err(msg: str, line: int, path: str, invariant: bool = False) -> DumpParseError:
    cls = InvariantViolation if invariant else DumpParseError
    return cls(msg, line=line, path=path)


def _check_keys(obj: dict, allowed: tuple[str, ...], required: tuple[str, ...], line: int, path: str) -> None:
    for k in obj:
        if k not in allowed:
            raise _err(f"unknown key {k!r}", line, path)
    for k in required:
        if k not in obj:
            raise _err(f"missing key {k!r}", line, path)


def _num(v: Any, line: int, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err("expected a number", line, path)
    if not math.isfinite(v):
        raise _err("non-finite number", line, path, invariant=True)
    return float(v)


def _int(v: Any, line: int, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise _err("expected an integer", line, path)
    return v


def _str(v: Any, line: int, path: str) -> str:
    if not isinstance(v, str):
        raise _err("expected a string", line, path)
    return v


def _bool(v: Any, line: int, path: str) -> bool:
    if not isinstance(v, bool):
        raise _err("expected a boolean", line, path)
    return v


def _list(v: Any, line: int, path: str) -> list:
    if not isinstance(v, list):
        raise _err("expected a list", line, path)
    return v


def _dict(v: Any, line: int, path: str) -> dict:
    if not isinstance(v, dict):
        raise _err("expected an object", line, path)
    return v


def _unit(v: Any, line: int, path: str) -> float:
    x = _num(v, line, path)
    if not (0.0 <= x <= 1.0):
        raise _err(f"value {x} outside [0, 1]", line, path, invariant=True)
    return x


def _box(v: Any, line: int, path: str) -> BBox:
    arr = _list(v, line, path)
    if len(arr) != 4:
        raise _err("box must be [x1, y1, x2, y2]", line, path)
    x1, y1, x2, y2 = (_num(c, line, path) for c in arr)
    try:
        return BBox(x1, y1, x2, y2)
    except ValueError as e:
        raise _err(f"{e} at {path}", line, path, invariant=True) from None


# ---------------------------------------------------------------------------
# Header


_ANCHOR_KEYS = (
    "strides", "base_sizes", "aspect_ratios", "scale_octaves",
    "sizes_per_level", "shorter_side", "max_side", "pad_multiple", "center_offset",
)


def _parse_anchor_spec(obj: dict, line: int, path: str) -> AnchorSpec:
    _check_keys(obj, _ANCHOR_KEYS, (), line, path)
    kw: dict[str, Any] = {}
    if "strides" in obj:
        kw["strides"] = tuple(_int(v, line, f"{path}.strides") for v in _list(obj["strides"], line, f"{path}.strides"))
    if "base_sizes" in obj:
        kw["base_sizes"] = tuple(_num(v, line, f"{path}.base_sizes") for v in _list(obj["base_sizes"], line, f"{path}.base_sizes"))
    if "aspect_ratios" in obj:
        kw["aspect_ratios"] = tuple(_num(v, line, f"{path}.aspect_ratios") for v in _list(obj["aspect_ratios"], line, f"{path}.aspect_ratios"))
    if "scale_octaves" in obj:
        kw["scale_octaves"] = _int(obj["scale_octaves"], line, f"{path}.scale_octaves")
    if obj.get("sizes_per_level") is not None:
        kw["sizes_per_level"] = tuple(
            tuple(_num(v, line, f"{path}.sizes_per_level") for v in _list(lvl, line, f"{path}.sizes_per_level"))
            for lvl in _list(obj["sizes_per_level"], line, f"{path}.sizes_per_level")
        )
    for opt in ("shorter_side", "max_side"):
        if opt in obj:
            kw[opt] = None if obj[opt] is None else _int(obj[opt], line, f"{path}.{opt}")
    if "pad_multiple" in obj:
        kw["pad_multiple"] = _int(obj["pad_multiple"], line, f"{path}.pad_multiple")
    if "center_offset" in obj:
        kw["center_offset"] = _num(obj["center_offset"], line, f"{path}.center_offset")
    try:
        return AnchorSpec(**kw)
    except ValueError as e:
        raise _err(str(e), line, path, invariant=True) from None


def parse_header(line_text: str, line_no: int = 1) -> DumpHeader:
    try:
        obj = json.loads(line_text)
    except json.JSONDecodeError as e:
        raise DumpParseError(f"invalid JSON: {e.msg}", line=line_no, path="header") from None
    obj = _dict(obj, line_no, "header")
    _check_keys(
        obj,
        ("format_version", "class_names", "has_background_entry", "proposals_are_anchors", "anchor_spec"),
        ("format_version", "class_names", "has_background_entry"),
        line_no, "header",
    )
    version = _str(obj["format_version"], line_no, "header.format_version")
    if version != FORMAT_VERSION:
        raise _err(f"unsupported format_version {version!r}", line_no, "header.format_version")
    names = tuple(_str(v, line_no, "header.class_names") for v in _list(obj["class_names"], line_no, "header.class_names"))
    has_bg = _bool(obj["has_background_entry"], line_no, "header.has_background_entry")
    try:
        catalog = ClassCatalog(names, has_bg)
    except ValueError as e:
        raise _err(str(e), line_no, "header.class_names", invariant=True) from None
    anchors_flag = _bool(obj.get("proposals_are_anchors", False), line_no, "header.proposals_are_anchors")
    spec = None
    if "anchor_spec" in obj:
        spec = _parse_anchor_spec(_dict(obj["anchor_spec"], line_no, "header.anchor_spec"), line_no, "header.anchor_spec")
    if anchors_flag and spec is None:
        raise _err("proposals_are_anchors requires anchor_spec", line_no, "header", invariant=True)
    return DumpHeader(catalog, anchors_flag, spec)


# ---------------------------------------------------------------------------
# Image records


def parse_image(line_text: str, line_no: int, header: DumpHeader) -> ImageIntrospection:
    try:
        obj = json.loads(line_text)
    except json.JSONDecodeError as e:
        raise DumpParseError(f"invalid JSON: {e.msg}", line=line_no, path="image") from None
    obj = _dict(obj, line_no, "image")
    _check_keys(
        obj,
        ("image_id", "width", "height", "ground_truth", "proposals", "refined", "detections"),
        ("image_id", "width", "height", "ground_truth", "proposals", "refined", "detections"),
        line_no, "image",
    )
    image_id = _str(obj["image_id"], line_no, "image_id")
    width = _int(obj["width"], line_no, "width")
    height = _int(obj["height"], line_no, "height")
    if width <= 0 or height <= 0:
        raise _err("image dimensions must be positive", line_no, "width", invariant=True)

    n = header.catalog.num_classes
    score_len = header.catalog.score_length

    ground_truth = []
    seen_gt: set[int] = set()
    for i, g in enumerate(_list(obj["ground_truth"], line_no, "ground_truth")):
        path = f"ground_truth[{i}]"
        g = _dict(g, line_no, path)
        _check_keys(g, ("id", "box", "class_index", "ignore"), ("id", "box", "class_index"), line_no, path)
        gid = _int(g["id"], line_no, f"{path}.id")
        if gid in seen_gt:
            raise _err(f"duplicate ground-truth id {gid}", line_no, f"{path}.id", invariant=True)
        seen_gt.add(gid)
        cls = _int(g["class_index"], line_no, f"{path}.class_index")
        if not (1 <= cls <= n):
            raise _err(f"class_index {cls} outside 1..{n}", line_no, f"{path}.class_index", invariant=True)
        ground_truth.append(GroundTruthObject(
            id=gid,
            box=_box(g["box"], line_no, f"{path}.box"),
            class_index=cls,
            ignore=_bool(g.get("ignore", False), line_no, f"{path}.ignore"),
        ))

    proposals = []
    seen_p: set[int] = set()
    for i, p in enumerate(_list(obj["proposals"], line_no, "proposals")):
        path = f"proposals[{i}]"
        p = _dict(p, line_no, path)
        _check_keys(p, ("id", "box", "objectness"), ("id", "box"), line_no, path)
        pid = _int(p["id"], line_no, f"{path}.id")
        if pid in seen_p:
            raise _err(f"duplicate proposal id {pid}", line_no, f"{path}.id", invariant=True)
        seen_p.add(pid)
        objness = None if p.get("objectness") is None else _unit(p["objectness"], line_no, f"{path}.objectness")
        proposals.append(Proposal(id=pid, box=_box(p["box"], line_no, f"{path}.box"), objectness=objness))

    if header.proposals_are_anchors:
        if proposals:
            raise _err("proposals must be elided when proposals_are_anchors is set", line_no, "proposals", invariant=True)
        max_pid = anchor_count(width, height, header.anchor_spec)
    else:
        max_pid = None

    refined = []
    for i, r in enumerate(_list(obj["refined"], line_no, "refined")):
        path = f"refined[{i}]"
        r = _dict(r, line_no, path)
        _check_keys(r, ("proposal_id", "box", "scores", "class_specific_for"), ("proposal_id", "box", "scores"), line_no, path)
        pid = _int(r["proposal_id"], line_no, f"{path}.proposal_id")
        if max_pid is not None:
            if not (0 <= pid < max_pid):
                raise _err(f"proposal_id {pid} outside anchor grid of {max_pid}", line_no, f"{path}.proposal_id", invariant=True)
        elif pid not in seen_p:
            raise _err(f"proposal_id {pid} does not resolve", line_no, f"{path}.proposal_id", invariant=True)
        scores = tuple(_unit(s, line_no, f"{path}.scores") for s in _list(r["scores"], line_no, f"{path}.scores"))
        if len(scores) != score_len:
            raise _err(f"score vector length {len(scores)} != {score_len}", line_no, f"{path}.scores", invariant=True)
        csf = r.get("class_specific_for")
        if csf is not None:
            csf = _int(csf, line_no, f"{path}.class_specific_for")
            if not (1 <= csf <= n):
                raise _err(f"class_specific_for {csf} outside 1..{n}", line_no, f"{path}.class_specific_for", invariant=True)
        refined.append(RefinedCandidate(proposal_id=pid, box=_box(r["box"], line_no, f"{path}.box"), scores=scores, class_specific_for=csf))

    detections = []
    for i, d in enumerate(_list(obj["detections"], line_no, "detections")):
        path = f"detections[{i}]"
        d = _dict(d, line_no, path)
        _check_keys(d, ("box", "class_index", "score", "source_candidate"), ("box", "class_index", "score"), line_no, path)
        cls = _int(d["class_index"], line_no, f"{path}.class_index")
        if not (1 <= cls <= n):
            raise _err(f"class_index {cls} outside 1..{n}", line_no, f"{path}.class_index", invariant=True)
        src = d.get("source_candidate")
        if src is not None:
            src = _int(src, line_no, f"{path}.source_candidate")
            if not (0 <= src < len(refined)):
                raise _err(f"source_candidate {src} does not resolve", line_no, f"{path}.source_candidate", invariant=True)
        detections.append(Detection(
            box=_box(d["box"], line_no, f"{path}.box"),
            class_index=cls,
            score=_unit(d["score"], line_no, f"{path}.score"),
            source_candidate=src,
        ))

    return ImageIntrospection(
        image_id=image_id, width=width, height=height,
        ground_truth=tuple(ground_truth), proposals=tuple(proposals),
        refined=tuple(refined), detections=tuple(detections),
    )


# ---------------------------------------------------------------------------
# Streaming read


def iter_dump(lines: Iterable[str]) -> tuple[DumpHeader, Iterator[ImageIntrospection]]:
    """Parse a dump from an iterable of lines; images are validated lazily."""
    it = iter(enumerate(lines, start=1))
    for line_no, raw in it:
        if raw.strip():
            header = parse_header(raw, line_no)
            break
    else:
        raise DumpParseError("empty dump: missing header", line=1, path="header")

    def images() -> Iterator[ImageIntrospection]:
        seen_ids: set[str] = set()
        for line_no, raw in it:
            if not raw.strip():
                continue
            image = parse_image(raw, line_no, header)
            if image.image_id in seen_ids:
                raise InvariantViolation(f"duplicate image_id {image.image_id!r}", line=line_no, path="image_id")
            seen_ids.add(image.image_id)
            yield image

    return header, images()


def parse_dump_text(text: str) -> tuple[DumpHeader, list[ImageIntrospection]]:
    header, images = iter_dump(text.splitlines())
    return header, list(images)


def open_dump_file(path: str | Path) -> IO[str]:
    """Open a dump for reading, decompressing transparently by extension."""
    p = Path(path)
    try:
        if p.suffix == ".gz":
            return gzip.open(p, "rt", encoding="utf-8")
        return open(p, "r", encoding="utf-8")
    except OSError as e:
        raise DumpIOError(f"cannot read {p}: {e.strerror or e}") from None


def read_dump_text(path: str | Path) -> str:
    with open_dump_file(path) as f:
        try:
            return f.read()
        except (OSError, UnicodeDecodeError, gzip.BadGzipFile) as e:
            raise DumpIOError(f"cannot read {path}: {e}") from None


def load_dump(path: str | Path) -> tuple[DumpHeader, list[ImageIntrospection]]:
    return parse_dump_text(read_dump_text(path))


# ---------------------------------------------------------------------------
# Canonical emission


def _q(x: float) -> float:
    return quantize(x)


def _box_wire(b: BBox, where: str) -> list[float]:
    q = [_q(b.x1), _q(b.y1), _q(b.x2), _q(b.y2)]
    if not (q[2] > q[0] and q[3] > q[1]):
        raise InvariantViolation(f"box degenerate after quantization at {where}", path=where)
    return q


def anchor_spec_record(spec: AnchorSpec) -> dict:
    rec: dict[str, Any] = {"strides": list(spec.strides)}
    if spec.sizes_per_level is not None:
        rec["sizes_per_level"] = [[_q(s) for s in lvl] for lvl in spec.sizes_per_level]
    else:
        rec["base_sizes"] = [_q(s) for s in spec.base_sizes]
        rec["scale_octaves"] = spec.scale_octaves
    rec["aspect_ratios"] = [_q(r) for r in spec.aspect_ratios]
    rec["shorter_side"] = spec.shorter_side
    rec["max_side"] = spec.max_side
    rec["pad_multiple"] = spec.pad_multiple
    rec["center_offset"] = _q(spec.center_offset)
    return rec


def header_record(header: DumpHeader) -> dict:
    rec: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "class_names": list(header.catalog.names),
        "has_background_entry": header.catalog.has_background_entry,
    }
    if header.proposals_are_anchors:
        rec["proposals_are_anchors"] = True
    if header.anchor_spec is not None:
        rec["anchor_spec"] = anchor_spec_record(header.anchor_spec)
    return rec


def image_record(image: ImageIntrospection) -> dict:
    gts = []
    for i, g in enumerate(image.ground_truth):
        rec: dict[str, Any] = {"id": g.id, "box": _box_wire(g.box, f"ground_truth[{i}].box"), "class_index": g.class_index}
        if g.ignore:
            rec["ignore"] = True
        gts.append(rec)
    props = []
    for i, p in enumerate(image.proposals):
        rec = {"id": p.id, "box": _box_wire(p.box, f"proposals[{i}].box")}
        if p.objectness is not None:
            rec["objectness"] = _q(p.objectness)
        props.append(rec)
    refined = []
    for i, r in enumerate(image.refined):
        rec = {
            "proposal_id": r.proposal_id,
            "box": _box_wire(r.box, f"refined[{i}].box"),
            "scores": [_q(s) for s in r.scores],
        }
        if r.class_specific_for is not None:
            rec["class_specific_for"] = r.class_specific_for
        refined.append(rec)
    dets = []
    for i, d in enumerate(image.detections):
        if d.source_candidate is not None and not (0 <= d.source_candidate < len(image.refined)):
            raise InvariantViolation(
                f"source_candidate {d.source_candidate} does not resolve",
                path=f"detections[{i}].source_candidate",
            )
        rec = {"box": _box_wire(d.box, f"detections[{i}].box"), "class_index": d.class_index, "score": _q(d.score)}
        if d.source_candidate is not None:
            rec["source_candidate"] = d.source_candidate
        dets.append(rec)
    return {
        "image_id": image.image_id,
        "width": image.width,
        "height": image.height,
        "ground_truth": gts,
        "proposals": props,
        "refined": refined,
        "detections": dets,
    }


def emit_dump_lines(header: DumpHeader, images: Iterable[ImageIntrospection]) -> Iterator[str]:
    yield canonical_json(header_record(header))
    for image in images:
        yield canonical_json(image_record(image))


def emit_dump_text(header: DumpHeader, images: Iterable[ImageIntrospection]) -> str:
    return "\n".join(emit_dump_lines(header, images)) + "\n"


def write_dump(path: str | Path, header: DumpHeader, images: Iterable[ImageIntrospection]) -> None:
    p = Path(path)
    opener = gzip.open if p.suffix == ".gz" else open
    with opener(p, "wt", encoding="utf-8") as f:
        for line in emit_dump_lines(header, images):
            f.write(line)
            f.write("\n")


# ---------------------------------------------------------------------------
# Consistency diagnostics (non-fatal)


def validate_consistency(
    header: DumpHeader,
    image: ImageIntrospection,
    theta_cls: float,
    nms_iou: float,
) -> list[Diagnostic]:
    """Cross-check declared detections against an NMS replay of the refined set.

    Reports, without failing: declared detections with no replay counterpart at
    box-IoU >= 0.99 (``extra_declared``), replay detections missing from the
    declaration (``missing_declared``), and declared detections scoring below
    ``theta_cls`` (``sub_threshold``). Cardinality mismatches surface as
    unmatched entries on one side or the other.
    """
    from . import nms  # local import: nms depends on these types

    from .geometry import iou as box_iou

    replayed = nms.replay(image.refined, header.catalog, nms.NmsConfig(iou_threshold=nms_iou, score_threshold=theta_cls))
    out: list[Diagnostic] = []

    for i, d in enumerate(image.detections):
        if d.score < theta_cls:
            out.append(Diagnostic(
                kind="sub_threshold", image_id=image.image_id, detection_index=i,
                message=f"sub-threshold detection: score {d.score:g} < {theta_cls:g}",
            ))

    unmatched_replay = list(range(len(replayed)))
    for i, d in enumerate(image.detections):
        best_j, best_iou = None, 0.0
        for j in unmatched_replay:
            r = replayed[j]
            if r.class_index != d.class_index:
                continue
            v = box_iou(d.box, r.box)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j is not None and best_iou >= 0.99:
            unmatched_replay.remove(best_j)
        else:
            out.append(Diagnostic(
                kind="extra_declared", image_id=image.image_id, detection_index=i,
                message=f"declared detection {i} (class {d.class_index}, score {d.score:g}) has no replay counterpart",
            ))
    for j in unmatched_replay:
        r = replayed[j]
        out.append(Diagnostic(
            kind="missing_declared", image_id=image.image_id, detection_index=None,
            message=f"replayed detection (class {r.class_index}, score {r.score:g}) absent from declared set",
        ))
    return out
