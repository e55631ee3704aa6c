"""Independent brute-force evaluator of the five attribution predicates.

This is a deliberate second implementation used to cross-check
``mechanism.classify_fn``: it works on raw tuples and lists, carries its own
IoU, and imports nothing from the rest of the package. Keep it that way —
shared helpers would make agreement between the two implementations
meaningless.

Boxes are plain ``(x1, y1, x2, y2)`` tuples; score lists are indexed by class
(0-based position ``c - 1`` for 1-based class ``c``), with any background
entry last and excluded from target-class checks by ``num_classes``.
"""

from __future__ import annotations

from typing import Sequence

Box = tuple[float, float, float, float]

LABELS = (
    "ProposalProcess",
    "Regressor",
    "BackgroundClassification",
    "InterclassClassification",
    "ClassifierCalibration",
)


def overlap(a: Sequence[float], b: Sequence[float]) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def false_negative(
    gt_box: Sequence[float],
    gt_class: int,
    detections: Sequence[tuple[Sequence[float], int]],
    theta_loc: float,
) -> bool:
    """True when no same-class detection localizes the box.

    Exact only when the object does not compete with other ground truth for
    detections; the synthetic generator guarantees that by spatial isolation.
    """
    return not any(
        cls == gt_class and overlap(gt_box, box) >= theta_loc
        for box, cls in detections
    )


def evaluate(
    gt_box: Sequence[float],
    gt_class: int,
    refined: Sequence[tuple[Sequence[float], Sequence[float]]],  # (box, scores)
    proposal_boxes: Sequence[Sequence[float]],
    num_classes: int,
    theta_loc: float,
    theta_cls: float,
) -> str:
    """Decide the failure label for a false negative, straight from the sets."""
    localized = [scores for box, scores in refined if overlap(gt_box, box) >= theta_loc]
    if localized:
        if any(s[gt_class - 1] >= theta_cls for s in localized):
            return "ClassifierCalibration"
        if any(s[k] >= theta_cls for s in localized for k in range(num_classes)):
            return "InterclassClassification"
        return "BackgroundClassification"
    if any(overlap(gt_box, p) >= theta_loc for p in proposal_boxes):
        return "Regressor"
    return "ProposalProcess"
