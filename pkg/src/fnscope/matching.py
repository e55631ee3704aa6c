"""Greedy detection-to-ground-truth matching and average precision.

Matching is class-wise and score-greedy: detections are visited in a canonical
content order (score descending, then class and coordinates), and each claims
the unmatched same-class ground-truth box with the highest IoU at or above the
threshold. The reported pairs are therefore invariant under permutation of the
input detection list.

Ground truth flagged ``ignore`` never participates: it cannot be matched, is
never counted as a false negative, and detections overlapping only ignored
boxes count as false positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import PreconditionError
from .geometry import iou
from .interchange import Detection, ImageIntrospection


@dataclass(frozen=True)
class MatchedPair:
    detection_index: int  # position in the original detections tuple
    gt_id: int
    iou: float


@dataclass(frozen=True)
class MatchResult:
    iou_threshold: float
    pairs: tuple[MatchedPair, ...]
    false_positives: tuple[int, ...]  # detection indices
    false_negatives: tuple[int, ...]  # ids of unmatched non-ignored ground truth

    def gt_for_detection(self, detection_index: int) -> int | None:
        for p in self.pairs:
            if p.detection_index == detection_index:
                return p.gt_id
        return None

    def detection_for_gt(self, gt_id: int) -> int | None:
        for p in self.pairs:
            if p.gt_id == gt_id:
                return p.detection_index
        return None

    @property
    def matched_detection_indices(self) -> frozenset[int]:
        return frozenset(p.detection_index for p in self.pairs)


def canonical_detection_order(detections: Sequence[Detection]) -> list[int]:
    """Processing order: score desc, then class, then box coordinates."""
    return sorted(
        range(len(detections)),
        key=lambda i: (
            -detections[i].score,
            detections[i].class_index,
            detections[i].box.as_tuple(),
        ),
    )


def match_image(image: ImageIntrospection, iou_threshold: float = 0.5) -> MatchResult:
    eligible = {g.id: g for g in image.ground_truth if not g.ignore}
    pairs: list[MatchedPair] = []
    false_positives: list[int] = []

    for det_idx in canonical_detection_order(image.detections):
        d = image.detections[det_idx]
        best_id, best_iou = None, 0.0
        for g in eligible.values():
            if g.class_index != d.class_index:
                continue
            v = iou(d.box, g.box)
            if v < iou_threshold:
                continue
            if v > best_iou or (v == best_iou and best_id is not None and g.id < best_id):
                best_id, best_iou = g.id, v
        if best_id is None:
            false_positives.append(det_idx)
        else:
            pairs.append(MatchedPair(det_idx, best_id, best_iou))
            del eligible[best_id]

    return MatchResult(
        iou_threshold=iou_threshold,
        pairs=tuple(pairs),
        false_positives=tuple(sorted(false_positives)),
        false_negatives=tuple(sorted(eligible)),
    )


def average_precision(scored_hits: Iterable[tuple[float, bool]], gt_count: int) -> float:
    """All-point interpolated AP from (score, is_true_positive) entries.

    With no ground truth the result is 1.0 for an empty detection set and 0.0
    otherwise; with ground truth but no detections it is 0.0.
    """
    entries = sorted(scored_hits, key=lambda e: -e[0])
    if sum(1 for e in entries if e[1]) > gt_count:
        raise PreconditionError("more true positives than ground-truth objects")
    if gt_count == 0:
        return 1.0 if not entries else 0.0
    if not entries:
        return 0.0

    hits = np.array([e[1] for e in entries], dtype=np.float64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / gt_count
    precision = tp / (tp + fp)

    # Right-to-left precision envelope, then sum area under recall steps.
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, precision):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)
