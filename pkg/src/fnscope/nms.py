"""Class-wise greedy non-maximum suppression replay and suppression forensics.

``replay`` reconstructs final detections from refined candidates exactly as a
deterministic detector head would: per class, threshold on that class's score,
sort by score (ties by candidate index), and keep a candidate only if it does
not overlap an already-kept box of the same class. ``find_suppressor`` answers
the forensic question of which surviving detection knocked out a given
candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .geometry import iou
from .interchange import ClassCatalog, Detection, RefinedCandidate


@dataclass(frozen=True)
class NmsConfig:
    iou_threshold: float = 0.5
    score_threshold: float = 0.0
    top_k_pre: int | None = None
    # True suppresses at IoU >= threshold; False only at IoU strictly above.
    suppress_at_equal: bool = True

    def __post_init__(self):
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValueError(f"iou_threshold {self.iou_threshold} outside (0, 1)")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError(f"score_threshold {self.score_threshold} outside [0, 1]")
        if self.top_k_pre is not None and self.top_k_pre < 0:
            raise ValueError("top_k_pre must be non-negative")

    def suppresses(self, overlap: float) -> bool:
        return overlap >= self.iou_threshold if self.suppress_at_equal else overlap > self.iou_threshold


def replay(refined: Sequence[RefinedCandidate], catalog: ClassCatalog, cfg: NmsConfig) -> list[Detection]:
    """Reconstruct final detections, ordered by class then descending score."""
    out: list[Detection] = []
    for cls in range(1, catalog.num_classes + 1):
        pool = [
            (i, r.scores[cls - 1])
            for i, r in enumerate(refined)
            if (r.class_specific_for is None or r.class_specific_for == cls)
            and r.scores[cls - 1] >= cfg.score_threshold
        ]
        pool.sort(key=lambda e: (-e[1], e[0]))
        if cfg.top_k_pre is not None:
            pool = pool[: cfg.top_k_pre]
        kept: list[tuple[int, float]] = []
        for i, score in pool:
            box = refined[i].box
            if any(cfg.suppresses(iou(box, refined[j].box)) for j, _ in kept):
                continue
            kept.append((i, score))
        out.extend(
            Detection(box=refined[i].box, class_index=cls, score=score, source_candidate=i)
            for i, score in kept
        )
    return out


def find_suppressor(
    victim: RefinedCandidate,
    class_index: int,
    kept: Sequence[Detection],
    cfg: NmsConfig,
) -> Detection | None:
    """Highest-scoring kept detection of the class that overlaps the victim.

    Returns None when nothing kept overlaps at the suppression threshold, which
    means the victim was lost to pre-suppression truncation rather than NMS.
    """
    best: Detection | None = None
    for d in kept:
        if d.class_index != class_index:
            continue
        if not cfg.suppresses(iou(victim.box, d.box)):
            continue
        if best is None or d.score > best.score:
            best = d
    return best
