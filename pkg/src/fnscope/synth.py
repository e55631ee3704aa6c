"""Seeded generator of introspection dumps with injected failure mechanisms.

Each planned object is constructed so that exactly one attribution predicate
holds, then accepted only after an independent brute-force check (the oracle
module) confirms both the label and that the object really is a false
negative. Objects live in disjoint scene cells, so their candidate sets cannot
interact through matching or NMS; filler proposals go to a side strip that
overlaps no cell.

All emitted coordinates are quarter-pixel multiples and all scores are
multiples of 1/64, which makes canonical 6-significant-digit serialization
lossless: what the oracle approved is bit-for-bit what any reader parses.

Reproducibility contract: image ``i`` of a run seeded ``s`` uses the RNG seed
``sha256(f"{s}:{i}")[:8]`` (big-endian). Same seed and plan, same bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import oracle
from .anchors import DEFAULT_ANCHOR_SPEC, AnchorSpec, anchor_boxes, anchor_count
from .canonical import canonical_json, quantize
from .errors import DumpParseError, FnscopeError, PreconditionError, UnsatisfiablePlanError
from .geometry import BBox, iou, iou_with_array
from .interchange import (
    ClassCatalog,
    Detection,
    DumpHeader,
    GroundTruthObject,
    ImageIntrospection,
    Proposal,
    RefinedCandidate,
    _bool,
    _check_keys,
    _dict,
    _int,
    _list,
    _num,
    _parse_anchor_spec,
    _str,
    anchor_spec_record,
    read_dump_text,
)
from .mechanism import MechanismLabel
from .nms import NmsConfig, replay

MODES = ("two_stage", "one_stage")

_ATTEMPTS = 64  # resampling budget per planned object
_GRID_MARGIN = 1e-6  # keep anchor IoUs clear of thresholds (grids are not quantized)


def anchor_grid(
    width: int,
    height: int,
    spec: AnchorSpec = DEFAULT_ANCHOR_SPEC,
    include_boxes: bool = False,
) -> tuple[int, np.ndarray | None]:
    """Anchor count for an image size, optionally with the boxes themselves."""
    count = anchor_count(width, height, spec)
    return count, anchor_boxes(width, height, spec) if include_boxes else None


# ---------------------------------------------------------------------------
# Plans


@dataclass(frozen=True)
class NoiseParams:
    proposal_miss: float = 0.25  # chance of dropping each non-essential proposal
    regressor_corruption: float = 0.5  # fraction by which the regressor collapses the box
    score_noise: float = 0.125  # ceiling for scores of uninvolved classes
    calibration_inversion: bool = True  # suppressor outscores the better-localized box

    def __post_init__(self):
        if not (0.0 <= self.proposal_miss <= 1.0):
            raise ValueError("proposal_miss outside [0, 1]")
        if not (0.05 <= self.regressor_corruption <= 0.95):
            raise ValueError("regressor_corruption outside [0.05, 0.95]")
        if not (0.0 <= self.score_noise < 1.0):
            raise ValueError("score_noise outside [0, 1)")


@dataclass(frozen=True)
class ObjectPlan:
    mechanism: MechanismLabel
    class_index: int | None = None  # sampled uniformly when absent


@dataclass(frozen=True)
class ImagePlan:
    image_id: str
    objects: tuple[ObjectPlan, ...]


@dataclass(frozen=True)
class InjectionPlan:
    class_names: tuple[str, ...]
    mode: str = "two_stage"
    has_background_entry: bool | None = None  # default: True iff two_stage
    width: int = 640
    height: int = 480
    proposals_per_image: int = 1000  # two-stage budget, filled up with strip junk
    anchor_spec: AnchorSpec | None = None  # one-stage; default detector-scale grid
    detected_per_image: int = 2  # true-positive fillers exercising the matcher
    cell_size: int | None = None
    noise: NoiseParams = NoiseParams()
    images: tuple[ImagePlan, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.proposals_per_image < 0 or self.detected_per_image < 0:
            raise ValueError("counts must be non-negative")
        if self.cell_size is not None and self.cell_size < 24:
            raise ValueError("cell_size must be at least 24")

    @property
    def background_entry(self) -> bool:
        if self.has_background_entry is not None:
            return self.has_background_entry
        return self.mode == "two_stage"

    @property
    def effective_anchor_spec(self) -> AnchorSpec | None:
        if self.mode != "one_stage":
            return None
        return self.anchor_spec or DEFAULT_ANCHOR_SPEC


# A small grid for fast oracle-checked runs: ~1300 anchors on a 256x192 image
# instead of the detector-scale 163206 on 640x480.
COMPACT_ANCHOR_SPEC = AnchorSpec(
    strides=(16, 32),
    base_sizes=(20.0, 80.0),
    sizes_per_level=((20.0, 40.0), (80.0, 160.0)),
    aspect_ratios=(0.5, 1.0, 2.0),
    shorter_side=None,
    max_side=None,
    pad_multiple=32,
)


def plan_header(plan: InjectionPlan) -> DumpHeader:
    catalog = ClassCatalog(plan.class_names, plan.background_entry)
    if plan.mode == "one_stage":
        return DumpHeader(catalog, proposals_are_anchors=True, anchor_spec=plan.effective_anchor_spec)
    return DumpHeader(catalog)


# -- plan wire format -------------------------------------------------------

_PLAN_HEADER_REQUIRED = ("format_version", "kind", "class_names", "mode")
_PLAN_HEADER_KEYS = _PLAN_HEADER_REQUIRED + (
    "has_background_entry", "width", "height", "proposals_per_image",
    "anchor_spec", "detected_per_image", "cell_size", "noise",
)


def parse_plan(text: str) -> InjectionPlan:
    lines = [(n, raw) for n, raw in enumerate(text.splitlines(), start=1) if raw.strip()]
    if not lines:
        raise DumpParseError("empty plan: missing header", line=1, path="plan")
    line_no, raw = lines[0]
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DumpParseError(f"invalid JSON: {e.msg}", line=line_no, path="plan") from None
    obj = _dict(obj, line_no, "plan")
    _check_keys(obj, _PLAN_HEADER_KEYS, _PLAN_HEADER_REQUIRED, line_no, "plan")
    if _str(obj["format_version"], line_no, "plan.format_version") != "1":
        raise DumpParseError("unsupported format_version", line=line_no, path="plan.format_version")
    if _str(obj["kind"], line_no, "plan.kind") != "plan":
        raise DumpParseError("kind must be 'plan'", line=line_no, path="plan.kind")

    kw: dict[str, Any] = {
        "class_names": tuple(
            _str(v, line_no, "plan.class_names")
            for v in _list(obj["class_names"], line_no, "plan.class_names")
        ),
        "mode": _str(obj["mode"], line_no, "plan.mode"),
    }
    if "has_background_entry" in obj:
        kw["has_background_entry"] = _bool(obj["has_background_entry"], line_no, "plan.has_background_entry")
    for key in ("width", "height", "proposals_per_image", "detected_per_image", "cell_size"):
        if key in obj and obj[key] is not None:
            kw[key] = _int(obj[key], line_no, f"plan.{key}")
    if obj.get("anchor_spec") is not None:
        kw["anchor_spec"] = _parse_anchor_spec(
            _dict(obj["anchor_spec"], line_no, "plan.anchor_spec"), line_no, "plan.anchor_spec"
        )
    if "noise" in obj:
        nz = _dict(obj["noise"], line_no, "plan.noise")
        _check_keys(nz, ("proposal_miss", "regressor_corruption", "score_noise", "calibration_inversion"), (), line_no, "plan.noise")
        nkw: dict[str, Any] = {}
        for key in ("proposal_miss", "regressor_corruption", "score_noise"):
            if key in nz:
                nkw[key] = _num(nz[key], line_no, f"plan.noise.{key}")
        if "calibration_inversion" in nz:
            nkw["calibration_inversion"] = _bool(nz["calibration_inversion"], line_no, "plan.noise.calibration_inversion")
        try:
            kw["noise"] = NoiseParams(**nkw)
        except ValueError as e:
            raise DumpParseError(str(e), line=line_no, path="plan.noise") from None

    images = []
    for line_no, raw in lines[1:]:
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise DumpParseError(f"invalid JSON: {e.msg}", line=line_no, path="plan image") from None
        rec = _dict(rec, line_no, "plan image")
        _check_keys(rec, ("image_id", "objects"), ("objects",), line_no, "plan image")
        image_id = rec.get("image_id")
        if image_id is None:
            image_id = f"synth-{len(images):04d}"
        else:
            image_id = _str(image_id, line_no, "image_id")
        objects = []
        for i, o in enumerate(_list(rec["objects"], line_no, "objects")):
            path = f"objects[{i}]"
            o = _dict(o, line_no, path)
            _check_keys(o, ("mechanism", "class_index"), ("mechanism",), line_no, path)
            name = _str(o["mechanism"], line_no, f"{path}.mechanism")
            try:
                label = MechanismLabel(name)
            except ValueError:
                valid = ", ".join(m.value for m in MechanismLabel)
                raise DumpParseError(f"unknown mechanism {name!r} (expected one of {valid})", line=line_no, path=f"{path}.mechanism") from None
            cls = o.get("class_index")
            if cls is not None:
                cls = _int(cls, line_no, f"{path}.class_index")
                if not (1 <= cls <= len(kw["class_names"])):
                    raise DumpParseError(f"class_index {cls} outside catalog", line=line_no, path=f"{path}.class_index")
            objects.append(ObjectPlan(label, cls))
        images.append(ImagePlan(image_id, tuple(objects)))

    try:
        return InjectionPlan(images=tuple(images), **kw)
    except ValueError as e:
        raise DumpParseError(str(e), line=lines[0][0], path="plan") from None


def load_plan(path) -> InjectionPlan:
    return parse_plan(read_dump_text(path))


def plan_records(plan: InjectionPlan) -> list[dict]:
    head: dict[str, Any] = {
        "format_version": "1",
        "kind": "plan",
        "class_names": list(plan.class_names),
        "mode": plan.mode,
        "has_background_entry": plan.background_entry,
        "width": plan.width,
        "height": plan.height,
    }
    if plan.mode == "two_stage":
        head["proposals_per_image"] = plan.proposals_per_image
    else:
        head["anchor_spec"] = anchor_spec_record(plan.effective_anchor_spec)
    head["detected_per_image"] = plan.detected_per_image
    if plan.cell_size is not None:
        head["cell_size"] = plan.cell_size
    head["noise"] = {
        "proposal_miss": quantize(plan.noise.proposal_miss),
        "regressor_corruption": quantize(plan.noise.regressor_corruption),
        "score_noise": quantize(plan.noise.score_noise),
        "calibration_inversion": plan.noise.calibration_inversion,
    }
    out = [head]
    for ip in plan.images:
        out.append({
            "image_id": ip.image_id,
            "objects": [
                {"mechanism": o.mechanism.value, **({"class_index": o.class_index} if o.class_index is not None else {})}
                for o in ip.objects
            ],
        })
    return out


def emit_plan_text(plan: InjectionPlan) -> str:
    return "\n".join(canonical_json(rec) for rec in plan_records(plan)) + "\n"


def make_plan(
    counts: Mapping[MechanismLabel, int],
    class_names: Sequence[str],
    mode: str = "two_stage",
    **plan_fields: Any,
) -> InjectionPlan:
    """Distribute the requested per-mechanism object counts across images."""
    base = InjectionPlan(class_names=tuple(class_names), mode=mode, **plan_fields)
    scene = _scene(base)
    capacity = scene.cols * scene.rows - base.detected_per_image
    if capacity < 1:
        raise UnsatisfiablePlanError("scene has no free cells for planned objects")
    queue = [MechanismLabel(m) for m, n in counts.items() for _ in range(n)]
    images = []
    for start in range(0, len(queue), capacity):
        chunk = queue[start : start + capacity]
        images.append(ImagePlan(
            image_id=f"synth-{len(images):04d}",
            objects=tuple(ObjectPlan(m) for m in chunk),
        ))
    return replace(base, images=tuple(images))


# ---------------------------------------------------------------------------
# Scene geometry


@dataclass(frozen=True)
class _Scene:
    cell: int
    cols: int
    rows: int
    strip_x: float  # junk proposals live to the right of this


def _scene(plan: InjectionPlan) -> _Scene:
    cs = plan.cell_size or max(36, min(120, min(plan.width, plan.height) // 4))
    strip_min = 48
    cols = (plan.width - strip_min) // cs
    rows = plan.height // cs
    if cols < 1 or rows < 1:
        raise UnsatisfiablePlanError(
            f"{plan.width}x{plan.height} image cannot fit scene cells of {cs}px plus a proposal strip"
        )
    return _Scene(cell=cs, cols=cols, rows=rows, strip_x=float(cols * cs))


def _q4(x: float) -> float:
    return round(x * 4.0) / 4.0


def _q4box(x1: float, y1: float, x2: float, y2: float) -> BBox:
    return BBox(quantize(_q4(x1)), quantize(_q4(y1)), quantize(_q4(x2)), quantize(_q4(y2)))


def _inside(box: BBox, rect: tuple[float, float, float, float]) -> bool:
    return box.x1 >= rect[0] and box.y1 >= rect[1] and box.x2 <= rect[2] and box.y2 <= rect[3]


def _shift_for(threshold: float) -> float:
    """x-shift (in widths) at which two equal boxes have exactly that IoU."""
    return (1.0 - threshold) / (1.0 + threshold)


@lru_cache(maxsize=4)
def _grid_tuples(width: int, height: int, spec: AnchorSpec) -> tuple[tuple[float, float, float, float], ...]:
    return tuple(map(tuple, anchor_boxes(width, height, spec).tolist()))


@lru_cache(maxsize=4)
def _grid_min_area(width: int, height: int, spec: AnchorSpec) -> float:
    g = anchor_boxes(width, height, spec)
    return float(np.min((g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])))


# ---------------------------------------------------------------------------
# Score synthesis (all scores are k/64 so serialization is lossless)


def _score_floor(theta_cls: float) -> int:
    """Smallest k with k/64 >= theta_cls."""
    return math.ceil(64.0 * theta_cls - 1e-9)


def _score_vector(
    rng: random.Random,
    catalog: ClassCatalog,
    noise_k: int,
    overrides: Mapping[int, int],
    bg_k: int | None = None,
) -> tuple[float, ...]:
    ks = [rng.randint(0, noise_k) for _ in range(catalog.num_classes)]
    for cls, k in overrides.items():
        ks[cls - 1] = k
    if catalog.has_background_entry:
        ks.append(rng.randint(0, 12) if bg_k is None else bg_k)
    return tuple(k / 64.0 for k in ks)


# ---------------------------------------------------------------------------
# Per-object construction


@dataclass
class _Pieces:
    gt_box: BBox
    class_index: int
    proposals: list[tuple[BBox, float | None]] = field(default_factory=list)
    refined: list[tuple[BBox, tuple[float, ...], int | None]] = field(default_factory=list)  # (box, scores, anchor_id)
    detected_filler: bool = False


@dataclass(frozen=True)
class _Ctx:
    plan: InjectionPlan
    header: DumpHeader
    scene: _Scene
    theta_loc: float
    theta_cls: float
    nms_cfg: NmsConfig
    grid: np.ndarray | None  # one-stage anchor boxes


def _cell_rect(ctx: _Ctx, cell_index: int) -> tuple[float, float, float, float]:
    cs = ctx.scene.cell
    row, col = divmod(cell_index, ctx.scene.cols)
    x0, y0 = col * cs, row * cs
    return (x0 + 2.0, y0 + 2.0, x0 + cs - 2.0, y0 + cs - 2.0)


def _place_gt(rng: random.Random, rect, w: float, h: float, x_head: float) -> BBox:
    """Place a w x h box in the rect leaving x_head extra widths of room on +x."""
    x_lo, y_lo, x_hi, y_hi = rect
    x1 = rng.uniform(x_lo, x_hi - w * (1.0 + x_head))
    y1 = rng.uniform(y_lo, y_hi - h)
    return _q4box(x1, y1, x1 + w, y1 + h)


def _size_range(cs: int) -> tuple[float, float]:
    hi = (cs - 6) / 2.0
    lo = min(0.32 * cs, hi - 2.0)
    return max(8.0, lo), hi


def _shifted(box: BBox, dx: float) -> BBox:
    return _q4box(box.x1 + dx, box.y1, box.x2 + dx, box.y2)


def _shrunk(box: BBox, s: float) -> BBox:
    cx = (box.x1 + box.x2) / 2.0
    cy = (box.y1 + box.y2) / 2.0
    hw = (box.x2 - box.x1) * s / 2.0
    hh = (box.y2 - box.y1) * s / 2.0
    return _q4box(cx - hw, cy - hh, cx + hw, cy + hh)


def _jittered(rng: random.Random, box: BBox, max_frac: float) -> BBox:
    w = box.x2 - box.x1
    dx = rng.uniform(-max_frac, max_frac) * w
    return _shifted(box, dx)


def _cell_anchor_ids(ctx: _Ctx, rect, margin: float) -> np.ndarray:
    g = ctx.grid
    side = np.maximum(g[:, 2] - g[:, 0], g[:, 3] - g[:, 1])
    mask = (
        (g[:, 0] >= rect[0] + margin)
        & (g[:, 1] >= rect[1] + margin)
        & (g[:, 2] <= rect[2] - margin)
        & (g[:, 3] <= rect[3] - margin)
        & (side <= (rect[2] - rect[0]))
    )
    return np.nonzero(mask)[0]


def _nearest_anchor_id(ctx: _Ctx, box: BBox) -> int:
    g = ctx.grid
    cx = (box.x1 + box.x2) / 2.0
    cy = (box.y1 + box.y2) / 2.0
    gx = (g[:, 0] + g[:, 2]) / 2.0
    gy = (g[:, 1] + g[:, 3]) / 2.0
    return int(np.argmin((gx - cx) ** 2 + (gy - cy) ** 2))


def _wrong_class(rng: random.Random, catalog: ClassCatalog, c: int) -> int:
    others = [k for k in range(1, catalog.num_classes + 1) if k != c]
    return rng.choice(others)


def _anchor_binding(ctx: _Ctx, box: BBox) -> int | None:
    return _nearest_anchor_id(ctx, box) if ctx.grid is not None else None


def _build_attempt(
    ctx: _Ctx, rng: random.Random, rect, target: MechanismLabel | None, c: int
) -> _Pieces | None:
    """One construction attempt; None when the target cannot be built at all."""
    catalog = ctx.header.catalog
    noise = ctx.plan.noise
    k_floor = _score_floor(ctx.theta_cls)
    noise_k = max(0, min(int(64 * noise.score_noise), k_floor - 1))
    lo, hi = _size_range(ctx.scene.cell)
    w = _q4(rng.uniform(lo, hi))
    h = _q4(rng.uniform(lo, hi))
    f_loc = _shift_for(ctx.theta_loc)

    if target is None:  # detected filler
        gt = _place_gt(rng, rect, w, h, 0.25)
        p = _jittered(rng, gt, 0.04)
        r = _jittered(rng, gt, 0.04)
        pieces = _Pieces(gt, c, detected_filler=True)
        pieces.proposals.append((p, rng.randint(36, 60) / 64.0))
        pieces.refined.append((r, _score_vector(rng, catalog, noise_k, {c: rng.randint(max(k_floor, 38), 61)}), _anchor_binding(ctx, r)))
        return pieces

    if target is MechanismLabel.PROPOSAL_PROCESS:
        if ctx.grid is None:
            gt = _place_gt(rng, rect, w, h, 0.0)
            return _Pieces(gt, c)  # no proposal, no refined box: step B missed it
        side_hi = math.sqrt(max(ctx.theta_loc - 0.02, 0.01) * _grid_min_area(ctx.plan.width, ctx.plan.height, ctx.plan.effective_anchor_spec))
        side_lo = max(4.0, 0.4 * side_hi)
        if side_hi - side_lo < 0.5:
            return None  # the anchor grid covers even the smallest boxes
        tw = _q4(rng.uniform(side_lo, side_hi))
        th = _q4(rng.uniform(side_lo, side_hi))
        gt = _place_gt(rng, rect, tw, th, 0.0)
        return _Pieces(gt, c)

    if target is MechanismLabel.REGRESSOR:
        s = max(0.2, min(1.0 - noise.regressor_corruption + rng.uniform(-0.1, 0.1), 0.95 * math.sqrt(ctx.theta_loc)))
        if ctx.grid is not None:
            ids = _cell_anchor_ids(ctx, rect, 4.0)
            if len(ids) == 0:
                return None  # no anchor fits this cell
            aid = int(rng.choice(list(ids)))
            a = ctx.grid[aid]
            gt = _q4box(a[0], a[1], a[2], a[3])
            bad = _shrunk(gt, s)
            pieces = _Pieces(gt, c)
            pieces.refined.append((bad, _score_vector(rng, catalog, noise_k, {c: rng.randint(0, 61)}), aid))
            return pieces
        gt = _place_gt(rng, rect, w, h, 0.25)
        p = _jittered(rng, gt, 0.06)
        bad = _shrunk(gt, s)
        pieces = _Pieces(gt, c)
        pieces.proposals.append((p, rng.randint(36, 60) / 64.0))
        pieces.refined.append((bad, _score_vector(rng, catalog, noise_k, {c: rng.randint(0, 61)}), None))
        return pieces

    # The remaining three all need a well-localized refined candidate.
    gt = _place_gt(rng, rect, w, h, 0.65 if target is MechanismLabel.CLASSIFIER_CALIBRATION else 0.25)

    if target is MechanismLabel.BACKGROUND_CLASSIFICATION:
        pieces = _Pieces(gt, c)
        for _ in range(rng.randint(1, 2)):
            r = _jittered(rng, gt, 0.06)
            pieces.refined.append((r, _score_vector(rng, catalog, noise_k, {}, bg_k=rng.randint(48, 60)), _anchor_binding(ctx, r)))
            pieces.proposals.append((_jittered(rng, gt, 0.04), rng.randint(36, 60) / 64.0))
        return pieces

    if target is MechanismLabel.INTERCLASS_CLASSIFICATION:
        if catalog.num_classes < 2:
            return None  # nothing to confuse with
        wcls = _wrong_class(rng, catalog, c)
        r = _jittered(rng, gt, 0.06)
        pieces = _Pieces(gt, c)
        pieces.proposals.append((_jittered(rng, gt, 0.04), rng.randint(36, 60) / 64.0))
        pieces.refined.append((r, _score_vector(rng, catalog, noise_k, {wcls: rng.randint(min(k_floor + 1, 61), 61)}), _anchor_binding(ctx, r)))
        return pieces

    if target is MechanismLabel.CLASSIFIER_CALIBRATION:
        if not noise.calibration_inversion:
            return None  # no score inversion, no way to suppress the good candidate
        wbox = gt.x2 - gt.x1
        d1 = _q4(rng.uniform(0.3, 0.8) * f_loc * wbox)
        d2 = d1 + _q4(rng.uniform(0.3, 0.85) * _shift_for(ctx.nms_cfg.iou_threshold) * wbox)
        d2 = max(d2, _q4(1.12 * f_loc * wbox))
        victim = _shifted(gt, d1)
        suppressor = _shifted(gt, d2)
        k_v = rng.randint(k_floor, min(k_floor + 18, 53))
        k_u = rng.randint(k_v + 6, 61)
        pieces = _Pieces(gt, c)
        pieces.proposals.append((victim, rng.randint(36, 60) / 64.0))
        pieces.proposals.append((suppressor, rng.randint(36, 60) / 64.0))
        pieces.refined.append((victim, _score_vector(rng, catalog, noise_k, {c: k_v}), _anchor_binding(ctx, victim)))
        pieces.refined.append((suppressor, _score_vector(rng, catalog, noise_k, {c: k_u}), _anchor_binding(ctx, suppressor)))
        return pieces

    raise FnscopeError(f"unhandled mechanism {target}")


def _check_pieces(ctx: _Ctx, pieces: _Pieces, rect, target: MechanismLabel | None) -> bool:
    """Accept an attempt only if the predicates hold on the quantized values."""
    gt, c = pieces.gt_box, pieces.class_index
    boxes = [gt] + [b for b, _ in pieces.proposals] + [b for b, _, _ in pieces.refined]
    if not all(_inside(b, rect) for b in boxes):
        return False

    candidates = [RefinedCandidate(0, b, s) for b, s, _ in pieces.refined]
    dets = replay(candidates, ctx.header.catalog, ctx.nms_cfg)
    detected = any(d.class_index == c and iou(d.box, gt) >= ctx.theta_loc for d in dets)
    if pieces.detected_filler:
        return detected
    if detected:
        return False

    refined_ious = [iou(gt, b) for b, _, _ in pieces.refined]
    localized = [s for (b, s, _), v in zip(pieces.refined, refined_ious) if v >= ctx.theta_loc]
    if localized:
        n = ctx.header.catalog.num_classes
        if max(s[c - 1] for s in localized) >= ctx.theta_cls:
            label = MechanismLabel.CLASSIFIER_CALIBRATION
        elif any(s[k] >= ctx.theta_cls for s in localized for k in range(n)):
            label = MechanismLabel.INTERCLASS_CLASSIFICATION
        else:
            label = MechanismLabel.BACKGROUND_CLASSIFICATION
    else:
        if ctx.grid is not None:
            best = float(np.max(iou_with_array(gt, ctx.grid)))
            # Grid coordinates are not quantized; stay clear of the threshold
            # so the independent check cannot land on the other side of it.
            if abs(best - ctx.theta_loc) < _GRID_MARGIN:
                return False
        else:
            best = max((iou(gt, b) for b, _ in pieces.proposals), default=0.0)
        label = MechanismLabel.REGRESSOR if best >= ctx.theta_loc else MechanismLabel.PROPOSAL_PROCESS
    return label is target


# ---------------------------------------------------------------------------
# Image assembly


@dataclass(frozen=True)
class TruthRecord:
    image_id: str
    gt_id: int
    class_index: int
    mechanism: MechanismLabel

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "gt_id": self.gt_id,
            "class_index": self.class_index,
            "mechanism": self.mechanism.value,
        }


def image_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def _junk_proposal(rng: random.Random, plan: InjectionPlan, scene: _Scene) -> tuple[BBox, float]:
    x_lo = scene.strip_x + 2.0
    x_hi = plan.width - 2.0
    y_hi = plan.height - 2.0
    w = _q4(rng.uniform(8.0, min(40.0, x_hi - x_lo - 2.0)))
    h = _q4(rng.uniform(8.0, min(40.0, y_hi - 4.0)))
    x1 = _q4(rng.uniform(x_lo, x_hi - w))
    y1 = _q4(rng.uniform(2.0, y_hi - h))
    return BBox(x1, y1, x1 + w, y1 + h), rng.randint(0, 12) / 64.0


def _generate_image(
    ctx: _Ctx, image_plan: ImagePlan, image_index: int, rng: random.Random
) -> tuple[ImageIntrospection, list[TruthRecord]]:
    plan, scene = ctx.plan, ctx.scene
    catalog = ctx.header.catalog
    n_cells = scene.cols * scene.rows
    n_objects = len(image_plan.objects) + plan.detected_per_image
    if n_objects > n_cells:
        raise UnsatisfiablePlanError(
            f"{n_objects} objects exceed the {n_cells}-cell scene",
            image_id=image_plan.image_id,
            object_index=n_cells,
        )
    cells = rng.sample(range(n_cells), n_objects)

    targets: list[MechanismLabel | None] = [o.mechanism for o in image_plan.objects]
    targets += [None] * plan.detected_per_image
    classes = [
        o.class_index or rng.randint(1, catalog.num_classes) for o in image_plan.objects
    ] + [rng.randint(1, catalog.num_classes) for _ in range(plan.detected_per_image)]

    built: list[_Pieces] = []
    for idx, (target, c, cell) in enumerate(zip(targets, classes, cells)):
        rect = _cell_rect(ctx, cell)
        pieces = None
        for _ in range(_ATTEMPTS):
            attempt = _build_attempt(ctx, rng, rect, target, c)
            if attempt is None:
                break
            if _check_pieces(ctx, attempt, rect, target):
                pieces = attempt
                break
        if pieces is None:
            what = target.value if target is not None else "detected filler"
            raise UnsatisfiablePlanError(
                f"could not realize {what} for object {idx} of image {image_plan.image_id!r}",
                image_id=image_plan.image_id,
                object_index=idx,
            )
        # Non-essential extra proposal near the object, sometimes dropped.
        if target is not MechanismLabel.PROPOSAL_PROCESS and plan.mode == "two_stage":
            if rng.random() >= plan.noise.proposal_miss:
                pieces.proposals.append((_jittered(rng, pieces.gt_box, 0.04), rng.randint(24, 56) / 64.0))
        built.append(pieces)

    ground_truth = tuple(
        GroundTruthObject(id=i, box=p.gt_box, class_index=p.class_index)
        for i, p in enumerate(built)
    )

    proposals: list[Proposal] = []
    refined: list[RefinedCandidate] = []
    if plan.mode == "two_stage":
        for p in built:
            # The first len(p.refined) proposals of a piece are, in order, the
            # sources of its refined candidates; extras follow.
            ids = []
            for box, objness in p.proposals:
                ids.append(len(proposals))
                proposals.append(Proposal(id=len(proposals), box=box, objectness=objness))
            for j, (box, scores, _) in enumerate(p.refined):
                refined.append(RefinedCandidate(proposal_id=ids[j], box=box, scores=scores))
        junk_needed = plan.proposals_per_image - len(proposals)
        if junk_needed < 0:
            raise UnsatisfiablePlanError(
                f"{len(proposals)} constructed proposals exceed the {plan.proposals_per_image}-proposal budget",
                image_id=image_plan.image_id,
            )
        for _ in range(junk_needed):
            box, objness = _junk_proposal(rng, plan, scene)
            proposals.append(Proposal(id=len(proposals), box=box, objectness=objness))
    else:
        for p in built:
            for box, scores, anchor_id in p.refined:
                refined.append(RefinedCandidate(proposal_id=int(anchor_id), box=box, scores=scores))

    detections = tuple(replay(refined, catalog, ctx.nms_cfg))
    image = ImageIntrospection(
        image_id=image_plan.image_id,
        width=plan.width,
        height=plan.height,
        ground_truth=ground_truth,
        proposals=tuple(proposals),
        refined=tuple(refined),
        detections=detections,
    )

    # Final pass with the independent evaluator over the fully assembled image.
    if ctx.grid is not None:
        proposal_tuples: Sequence = _grid_tuples(plan.width, plan.height, plan.effective_anchor_spec)
    else:
        proposal_tuples = [p.box.as_tuple() for p in proposals]
    refined_raw = [(r.box.as_tuple(), r.scores) for r in refined]
    det_raw = [(d.box.as_tuple(), d.class_index) for d in detections]
    truths = []
    for i, (pieces, target) in enumerate(zip(built, targets)):
        gt_raw = pieces.gt_box.as_tuple()
        is_fn = oracle.false_negative(gt_raw, pieces.class_index, det_raw, ctx.theta_loc)
        if target is None:
            if is_fn:
                raise FnscopeError(f"filler object {i} of {image_plan.image_id!r} came out undetected")
            continue
        verdict = oracle.evaluate(
            gt_raw, pieces.class_index, refined_raw, proposal_tuples,
            catalog.num_classes, ctx.theta_loc, ctx.theta_cls,
        )
        if not is_fn or verdict != target.value:
            raise FnscopeError(
                f"object {i} of {image_plan.image_id!r} failed the independent check "
                f"(wanted {target.value}, evaluator saw {verdict if is_fn else 'a detection'})"
            )
        truths.append(TruthRecord(image_plan.image_id, i, pieces.class_index, target))
    return image, truths


def generate_dump(
    plan: InjectionPlan,
    seed: int,
    theta_loc: float = 0.5,
    theta_cls: float = 0.3,
    nms_iou: float = 0.5,
) -> tuple[DumpHeader, list[ImageIntrospection], list[TruthRecord]]:
    """Generate an oracle-verified dump plus per-object injected truth labels."""
    if not (0.2 <= theta_loc <= 0.8):
        raise PreconditionError(f"theta_loc {theta_loc} outside the synthesizable range [0.2, 0.8]")
    if not (0.05 <= theta_cls <= 0.85):
        raise PreconditionError(f"theta_cls {theta_cls} outside the synthesizable range [0.05, 0.85]")
    header = plan_header(plan)
    ctx = _Ctx(
        plan=plan,
        header=header,
        scene=_scene(plan),
        theta_loc=theta_loc,
        theta_cls=theta_cls,
        nms_cfg=NmsConfig(iou_threshold=nms_iou, score_threshold=theta_cls),
        grid=anchor_boxes(plan.width, plan.height, plan.effective_anchor_spec)
        if plan.mode == "one_stage"
        else None,
    )
    images: list[ImageIntrospection] = []
    truths: list[TruthRecord] = []
    for index, image_plan in enumerate(plan.images):
        rng = random.Random(image_seed(seed, index))
        image, t = _generate_image(ctx, image_plan, index, rng)
        images.append(image)
        truths.extend(t)
    return header, images, truths
