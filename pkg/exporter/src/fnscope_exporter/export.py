"""Dump emission for two-stage and one-stage torchvision detectors.

The conversion from captured tensors to records preserves bit-exact agreement
between each declared detection and the refined candidate it came from: boxes
are mapped from the resized frame to the original frame with the exact
operation the model applies to its own output, so the analyzer's NMS replay
reconstructs the declared set from the refined set.

Two deliberate departures from a raw tensor dump, both mirroring what the
model itself does before NMS:
  - two-stage (candidate, class) pairs whose clipped box has a side shorter
    than 1e-2 in the resized frame are dropped, matching the head's own
    small-box filter, so the replay pool equals the pool the model suppressed
    over;
  - boxes clipped to zero extent (anchors entirely outside the unpadded
    image) are dropped from both the refined set and the declared set, since
    a degenerate rectangle is not a valid dump box.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import torch
from torch import Tensor
from torchvision.models.detection.transform import resize_boxes

from . import writer
from .taps import TapBundle, _require, capture_one_stage, capture_two_stage

# Matches torchvision's RoIHeads small-box filter.
_MIN_SIDE_TWO_STAGE = 1e-2

# FPN pyramid strides for the standard P3..P7 single-shot layout.
_DEFAULT_STRIDES = (8, 16, 32, 64, 128)


def _image_ids(images: Sequence[Tensor], image_ids: Sequence[str] | None) -> list[str]:
    if image_ids is None:
        return [f"image-{i:04d}" for i in range(len(images))]
    ids = [str(s) for s in image_ids]
    if len(ids) != len(images):
        raise ValueError(f"got {len(ids)} image ids for {len(images)} images")
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    return ids


def _to_original(boxes: Tensor, bundle: TapBundle) -> Tensor:
    # Identical call to the model's own output postprocessing, so shared
    # values stay bit-equal.
    return resize_boxes(boxes, bundle.resized_size, bundle.original_size)


def _positive_extent(box: list[float]) -> bool:
    return box[2] > box[0] and box[3] > box[1]


def _two_stage_image(bundle: TapBundle, num_classes: int) -> dict[str, Any]:
    proposals = _to_original(bundle.proposal_boxes, bundle).tolist()
    objectness = bundle.objectness.tolist()
    prop_records = [
        writer.proposal_record(i, box, obj)
        for i, (box, obj) in enumerate(zip(proposals, objectness))
    ]

    boxes = bundle.refined_boxes  # [R, C+1, 4], resized frame, clipped
    widths = boxes[..., 2] - boxes[..., 0]
    heights = boxes[..., 3] - boxes[..., 1]
    keep = (widths >= _MIN_SIDE_TWO_STAGE) & (heights >= _MIN_SIDE_TWO_STAGE)
    mapped = _to_original(boxes.reshape(-1, 4), bundle).reshape(boxes.shape).tolist()
    keep = keep.tolist()
    scores = bundle.refined_scores.tolist()  # [R, C+1], background first

    refined: list[dict] = []
    source_index: dict[tuple, int] = {}
    for r, row in enumerate(scores):
        reordered = row[1:] + row[:1]  # wire layout keeps background last
        for cls in range(1, num_classes + 1):
            if not keep[r][cls]:
                continue
            box = mapped[r][cls]
            key = (cls, tuple(box), reordered[cls - 1])
            source_index.setdefault(key, len(refined))
            refined.append(writer.refined_record(r, box, reordered, class_specific_for=cls))

    det_records = []
    det = bundle.detections
    for box, label, score in zip(det["boxes"].tolist(), det["labels"].tolist(), det["scores"].tolist()):
        if not _positive_extent(box):
            continue
        src = source_index.get((label, tuple(box), score))
        det_records.append(writer.detection_record(box, label, score, source_candidate=src))

    oh, ow = bundle.original_size
    return writer.image_record(bundle.image_id, ow, oh, prop_records, refined, det_records)


def _one_stage_image(bundle: TapBundle, score_floor: float) -> dict[str, Any]:
    boxes = bundle.refined_boxes  # [A, 4], resized frame, clipped
    scores = bundle.refined_scores  # [A, K]
    nonzero = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    sel = torch.where((scores.max(dim=1).values >= score_floor) & nonzero)[0]

    mapped = _to_original(boxes[sel], bundle).tolist()
    sel_scores = scores[sel].tolist()

    refined: list[dict] = []
    source_index: dict[tuple, int] = {}
    for pos, (anchor, box, row) in enumerate(zip(sel.tolist(), mapped, sel_scores)):
        for cls, s in enumerate(row, start=1):
            source_index.setdefault((cls, tuple(box), s), pos)
        refined.append(writer.refined_record(anchor, box, row))

    det_records = []
    det = bundle.detections
    for box, label, score in zip(det["boxes"].tolist(), det["labels"].tolist(), det["scores"].tolist()):
        if not _positive_extent(box):
            continue
        cls = label + 1  # dense heads label classes from zero
        src = source_index.get((cls, tuple(box), score))
        det_records.append(writer.detection_record(box, cls, score, source_candidate=src))

    oh, ow = bundle.original_size
    return writer.image_record(bundle.image_id, ow, oh, [], refined, det_records)


def _derived_anchor_spec(model, strides: tuple[int, ...]) -> dict[str, Any]:
    gen = _require(model, "anchor generation", "anchor_generator")
    sizes = tuple(tuple(float(s) for s in level) for level in gen.sizes)
    ratio_sets = {tuple(float(r) for r in level) for level in gen.aspect_ratios}
    if len(ratio_sets) != 1:
        raise ValueError("per-level aspect ratios differ; dump spec needs one shared set")
    if len(strides) != len(sizes):
        raise ValueError(f"{len(strides)} strides for {len(sizes)} pyramid levels")
    transform = _require(model, "image preprocessing", "transform")
    return writer.anchor_spec_record(
        strides=strides,
        sizes_per_level=sizes,
        aspect_ratios=ratio_sets.pop(),
        shorter_side=int(transform.min_size[-1]),
        max_side=int(transform.max_size),
        pad_multiple=int(getattr(transform, "size_divisible", 32)),
        center_offset=0.0,
    )


def _expected_anchor_count(width: int, height: int, spec: dict[str, Any]) -> int:
    """Grid cardinality under the dump format's documented convention.

    Scale the shorter side to ``shorter_side`` capped by ``max_side`` (round
    half-up), pad both dims up to ``pad_multiple``, then ``ceil(padded /
    stride)`` locations per level.
    """
    if spec["shorter_side"] is None:
        rw, rh = width, height
    else:
        scale = spec["shorter_side"] / min(width, height)
        if spec["max_side"] is not None and max(width, height) * scale > spec["max_side"]:
            scale = spec["max_side"] / max(width, height)
        rw, rh = int(width * scale + 0.5), int(height * scale + 0.5)
    m = spec["pad_multiple"]
    pw, ph = math.ceil(rw / m) * m, math.ceil(rh / m) * m
    per_ratio = len(spec["aspect_ratios"])
    return sum(
        math.ceil(pw / s) * math.ceil(ph / s) * len(sizes) * per_ratio
        for s, sizes in zip(spec["strides"], spec["sizes_per_level"])
    )


def export_two_stage(
    model,
    images: Sequence[Tensor],
    class_names: Sequence[str],
    out: str | Path,
    *,
    image_ids: Sequence[str] | None = None,
) -> Path:
    """Export an R-CNN-style model run over ``images`` as a dump at ``out``.

    ``class_names`` lists the foreground classes; the model's score vectors
    must have exactly one extra background entry. Zero images produce a
    header-only dump.
    """
    names = tuple(str(n) for n in class_names)
    ids = _image_ids(images, image_ids)

    def records() -> Iterator[dict]:
        yield writer.header_record(names, has_background_entry=True)
        for image, image_id in zip(images, ids):
            bundle = capture_two_stage(model, image, image_id)
            if bundle.refined_scores.shape[-1] != len(names) + 1:
                raise ValueError(
                    f"model scores {bundle.refined_scores.shape[-1]} classes "
                    f"(with background); got {len(names)} class names"
                )
            yield _two_stage_image(bundle, len(names))

    return writer.write_dump(out, records())


def export_one_stage(
    model,
    images: Sequence[Tensor],
    class_names: Sequence[str],
    out: str | Path,
    *,
    image_ids: Sequence[str] | None = None,
    score_floor: float = 0.25,
    strides: tuple[int, ...] = _DEFAULT_STRIDES,
) -> Path:
    """Export a dense single-shot model run over ``images`` as a dump at ``out``.

    Proposals are elided: the header declares the model's anchor layout
    (sizes and ratios from its anchor generator, resize geometry from its
    transform, pyramid ``strides`` from the caller) and refined candidates
    reference anchors by flat grid index. Every image's actual anchor count is
    checked against the declared layout so emitted indices always resolve.

    ``score_floor`` bounds the dump size: anchors whose best class score falls
    below it are omitted from the refined set. Keep it below any analysis
    score threshold so the replay pool stays complete.
    """
    names = tuple(str(n) for n in class_names)
    ids = _image_ids(images, image_ids)
    spec = _derived_anchor_spec(model, tuple(int(s) for s in strides))

    def records() -> Iterator[dict]:
        yield writer.header_record(names, has_background_entry=False, anchor_spec=spec)
        for image, image_id in zip(images, ids):
            bundle = capture_one_stage(model, image, image_id)
            if bundle.refined_scores.shape[-1] != len(names):
                raise ValueError(
                    f"model scores {bundle.refined_scores.shape[-1]} classes; "
                    f"got {len(names)} class names"
                )
            oh, ow = bundle.original_size
            expected = _expected_anchor_count(ow, oh, spec)
            if expected != bundle.anchor_count:
                raise ValueError(
                    f"declared anchor layout yields {expected} anchors for "
                    f"{ow}x{oh} but the model generated {bundle.anchor_count}"
                )
            yield _one_stage_image(bundle, score_floor)

    return writer.write_dump(out, records())
