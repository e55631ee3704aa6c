"""Line-delimited dump serialization.

Builds header and image records with the key order and value conventions of
the analyzer's schema document and writes them as JSONL (gzip when the path
ends in ``.gz``). Floats are serialized at full precision: the analyzer's NMS
replay compares declared detections against refined boxes, and any rounding
here would perturb IoU values near the suppression threshold.
"""

from __future__ import annotations

import gzip
import json
from pathlib import Path
from typing import Any, Iterable

FORMAT_VERSION = "1"


def anchor_spec_record(
    strides: tuple[int, ...],
    sizes_per_level: tuple[tuple[float, ...], ...],
    aspect_ratios: tuple[float, ...],
    shorter_side: int | None,
    max_side: int | None,
    pad_multiple: int,
    center_offset: float,
) -> dict[str, Any]:
    return {
        "strides": list(strides),
        "sizes_per_level": [list(s) for s in sizes_per_level],
        "aspect_ratios": list(aspect_ratios),
        "shorter_side": shorter_side,
        "max_side": max_side,
        "pad_multiple": pad_multiple,
        "center_offset": center_offset,
    }


def header_record(
    class_names: tuple[str, ...],
    has_background_entry: bool,
    anchor_spec: dict[str, Any] | None = None,
) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "class_names": list(class_names),
        "has_background_entry": has_background_entry,
    }
    if anchor_spec is not None:
        rec["proposals_are_anchors"] = True
        rec["anchor_spec"] = anchor_spec
    return rec


def proposal_record(pid: int, box: list[float], objectness: float) -> dict[str, Any]:
    return {"id": pid, "box": box, "objectness": objectness}


def refined_record(
    proposal_id: int,
    box: list[float],
    scores: list[float],
    class_specific_for: int | None = None,
) -> dict[str, Any]:
    rec: dict[str, Any] = {"proposal_id": proposal_id, "box": box, "scores": scores}
    if class_specific_for is not None:
        rec["class_specific_for"] = class_specific_for
    return rec


def detection_record(
    box: list[float],
    class_index: int,
    score: float,
    source_candidate: int | None = None,
) -> dict[str, Any]:
    rec: dict[str, Any] = {"box": box, "class_index": class_index, "score": score}
    if source_candidate is not None:
        rec["source_candidate"] = source_candidate
    return rec


def image_record(
    image_id: str,
    width: int,
    height: int,
    proposals: list[dict],
    refined: list[dict],
    detections: list[dict],
) -> dict[str, Any]:
    return {
        "image_id": image_id,
        "width": width,
        "height": height,
        "ground_truth": [],
        "proposals": proposals,
        "refined": refined,
        "detections": detections,
    }


def write_dump(path: str | Path, records: Iterable[dict]) -> Path:
    p = Path(path)
    opener = gzip.open if p.suffix == ".gz" else open
    with opener(p, "wt", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, separators=(",", ":"), allow_nan=False))
            f.write("\n")
    return p
