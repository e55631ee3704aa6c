"""Black-box false-negative typing from final detections only.

For an undetected ground-truth box, unmatched-to-it detections are scanned in
descending score order and the first one landing in a qualifying (IoU band,
class agreement) cell decides the type. A detection at foreground IoU with the
correct class qualifies for nothing here: it was matched to another object and
is that object's business, not this one's.
"""

from __future__ import annotations

import enum
from typing import Sequence

from .errors import PreconditionError
from .geometry import iou
from .interchange import Detection, GroundTruthObject
from .matching import MatchResult, canonical_detection_order


class TideFnType(enum.Enum):
    CLS = "Cls"
    LOC = "Loc"
    CLS_LOC = "ClsLoc"
    MISSED = "Missed"


def classify_tide(
    gt: GroundTruthObject,
    detections: Sequence[Detection],
    match: MatchResult,
    t_fg: float = 0.5,
    t_bg: float = 0.1,
) -> TideFnType:
    if not t_bg < t_fg:
        raise PreconditionError(f"t_bg {t_bg} must be below t_fg {t_fg}")
    if gt.id not in match.false_negatives:
        raise PreconditionError(f"ground truth {gt.id} is not a false negative")

    matched_to_gt = match.detection_for_gt(gt.id)
    for idx in canonical_detection_order(detections):
        if idx == matched_to_gt:
            continue
        d = detections[idx]
        v = iou(d.box, gt.box)
        if v < t_bg:
            continue
        correct = d.class_index == gt.class_index
        if v >= t_fg:
            if not correct:
                return TideFnType.CLS
            continue  # foreground hit on the right class belongs to another object
        return TideFnType.LOC if correct else TideFnType.CLS_LOC
    return TideFnType.MISSED
