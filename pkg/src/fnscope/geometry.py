"""Axis-aligned bounding-box arithmetic.

Boxes are continuous corner-form rectangles (x1, y1, x2, y2) with strictly
positive area; degenerate boxes are rejected at construction rather than
clamped, because a zero-area ground truth or proposal signals a corrupt dump.
Boxes whose boundaries merely touch have IoU exactly 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, slots=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError("non-finite coordinate")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError("non-positive area")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    if ix <= 0.0:
        return 0.0
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_many(target: BBox, candidates: Iterable[BBox]) -> list[float]:
    """Element-wise ``iou(target, c)`` in input order; empty input gives []."""
    return [iou(target, c) for c in candidates]


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array in x1, y1, x2, y2 order."""
    if not boxes:
        return np.empty((0, 4), dtype=np.float64)
    return np.asarray([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_with_array(target: BBox, boxes: np.ndarray) -> np.ndarray:
    """IoU of one box against an (N, 4) corner-form array; returns shape (N,).

    Vectorized path for large candidate sets (anchor grids run to 10^5 boxes).
    """
    if boxes.size == 0:
        return np.empty((0,), dtype=np.float64)
    ix = np.minimum(boxes[:, 2], target.x2) - np.maximum(boxes[:, 0], target.x1)
    iy = np.minimum(boxes[:, 3], target.y2) - np.maximum(boxes[:, 1], target.y1)
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    return inter / (areas + target.area - inter)
