"""Attribute each false negative to the detector component that lost it.

For an undetected ground-truth box the decision chain runs over the dumped
internals: if any regressor-refined box localizes it (IoU at or above
theta_loc), the failure is in classification or calibration, decided by the
localized candidates' score vectors; otherwise the failure is in regression
or the proposal process, decided by whether any proposal (or anchor, for
one-stage dumps) localized it. All comparisons are closed (>=).

Each label ships with a ``MechanismEvidence`` audit trail holding the branch
quantities so downstream consumers can re-check the decision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .anchors import anchor_boxes
from .errors import PreconditionError
from .geometry import iou, iou_with_array
from .interchange import DumpHeader, GroundTruthObject, ImageIntrospection
from .matching import MatchResult, match_image
from .tide import TideFnType, classify_tide


class MechanismLabel(enum.Enum):
    PROPOSAL_PROCESS = "ProposalProcess"
    REGRESSOR = "Regressor"
    BACKGROUND_CLASSIFICATION = "BackgroundClassification"
    INTERCLASS_CLASSIFICATION = "InterclassClassification"
    CLASSIFIER_CALIBRATION = "ClassifierCalibration"

    @property
    def short(self) -> str:
        return _SHORT[self]


_SHORT = {
    MechanismLabel.PROPOSAL_PROCESS: "Prop",
    MechanismLabel.REGRESSOR: "Reg",
    MechanismLabel.BACKGROUND_CLASSIFICATION: "Bkg",
    MechanismLabel.INTERCLASS_CLASSIFICATION: "Inter",
    MechanismLabel.CLASSIFIER_CALIBRATION: "Cal",
}


@dataclass(frozen=True)
class MechanismEvidence:
    theta_loc: float
    theta_cls: float
    best_refined_iou: float
    best_proposal_iou: float
    localized_candidate_ids: tuple[int, ...]  # indices into image.refined
    max_correct_class_score: float | None  # over localized candidates
    max_wrong_class_score: float | None
    max_wrong_class_index: int | None
    vacuous_pipeline: bool = False  # no refined boxes and no proposals at all

    def to_record(self) -> dict:
        rec: dict = {
            "theta_loc": self.theta_loc,
            "theta_cls": self.theta_cls,
            "best_refined_iou": self.best_refined_iou,
            "best_proposal_iou": self.best_proposal_iou,
            "localized_candidate_ids": list(self.localized_candidate_ids),
            "max_correct_class_score": self.max_correct_class_score,
            "max_wrong_class_score": self.max_wrong_class_score,
            "max_wrong_class_index": self.max_wrong_class_index,
        }
        if self.vacuous_pipeline:
            rec["vacuous_pipeline"] = True
        return rec


@dataclass(frozen=True)
class FnRecord:
    image_id: str
    gt_id: int
    class_index: int
    mechanism: MechanismLabel
    tide: TideFnType
    evidence: MechanismEvidence

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "gt_id": self.gt_id,
            "class_index": self.class_index,
            "mechanism": self.mechanism.value,
            "tide": self.tide.value,
            "evidence": self.evidence.to_record(),
        }


def _best_proposal_iou(gt: GroundTruthObject, image: ImageIntrospection, header: DumpHeader) -> float:
    if header.proposals_are_anchors:
        grid = anchor_boxes(image.width, image.height, header.anchor_spec)
        if len(grid) == 0:
            return 0.0
        return float(np.max(iou_with_array(gt.box, grid)))
    if not image.proposals:
        return 0.0
    return max(iou(gt.box, p.box) for p in image.proposals)


def classify_fn(
    gt: GroundTruthObject,
    image: ImageIntrospection,
    header: DumpHeader,
    theta_loc: float = 0.5,
    theta_cls: float = 0.3,
    match: MatchResult | None = None,
) -> tuple[MechanismLabel, MechanismEvidence]:
    """Run the attribution chain for one false negative.

    ``match`` may be supplied to avoid recomputing the image's matching; it
    must have been produced with ``iou_threshold == theta_loc``.
    """
    if match is None:
        match = match_image(image, theta_loc)
    elif match.iou_threshold != theta_loc:
        raise PreconditionError(
            f"match used threshold {match.iou_threshold}, classifier given {theta_loc}"
        )
    if gt.id not in match.false_negatives:
        raise PreconditionError(f"ground truth {gt.id} is not a false negative")

    n = header.catalog.num_classes
    c = gt.class_index

    refined_ious = [iou(gt.box, r.box) for r in image.refined]
    best_refined = max(refined_ious, default=0.0)
    localized = tuple(i for i, v in enumerate(refined_ious) if v >= theta_loc)
    best_proposal = _best_proposal_iou(gt, image, header)
    vacuous = not header.proposals_are_anchors and not image.proposals and not image.refined

    max_correct: float | None = None
    max_wrong: float | None = None
    max_wrong_cls: int | None = None
    if localized:
        max_correct = max(image.refined[i].scores[c - 1] for i in localized)
        for i in localized:
            for k in range(1, n + 1):
                if k == c:
                    continue
                s = image.refined[i].scores[k - 1]
                if max_wrong is None or s > max_wrong:
                    max_wrong, max_wrong_cls = s, k

    evidence = MechanismEvidence(
        theta_loc=theta_loc,
        theta_cls=theta_cls,
        best_refined_iou=best_refined,
        best_proposal_iou=best_proposal,
        localized_candidate_ids=localized,
        max_correct_class_score=max_correct,
        max_wrong_class_score=max_wrong,
        max_wrong_class_index=max_wrong_cls,
        vacuous_pipeline=vacuous,
    )

    if localized:
        if max_correct >= theta_cls:
            return MechanismLabel.CLASSIFIER_CALIBRATION, evidence
        # Any target-class hit counts; the correct class cannot reach here
        # above threshold, so a hit is necessarily on a wrong class.
        if any(
            image.refined[i].scores[k] >= theta_cls
            for i in localized
            for k in range(n)
        ):
            return MechanismLabel.INTERCLASS_CLASSIFICATION, evidence
        return MechanismLabel.BACKGROUND_CLASSIFICATION, evidence
    if best_proposal >= theta_loc:
        return MechanismLabel.REGRESSOR, evidence
    return MechanismLabel.PROPOSAL_PROCESS, evidence


def classify_all(
    header: DumpHeader,
    images: Iterable[ImageIntrospection],
    theta_loc: float = 0.5,
    theta_cls: float = 0.3,
    t_fg: float = 0.5,
    t_bg: float = 0.1,
) -> Iterator[FnRecord]:
    """One record per false negative, in image order then ascending gt id."""
    for image in images:
        yield from classify_image(header, image, theta_loc, theta_cls, t_fg, t_bg)


def classify_image(
    header: DumpHeader,
    image: ImageIntrospection,
    theta_loc: float = 0.5,
    theta_cls: float = 0.3,
    t_fg: float = 0.5,
    t_bg: float = 0.1,
    match: MatchResult | None = None,
) -> list[FnRecord]:
    if match is None:
        match = match_image(image, theta_loc)
    by_id = {g.id: g for g in image.ground_truth}
    out = []
    for gt_id in match.false_negatives:
        gt = by_id[gt_id]
        label, evidence = classify_fn(gt, image, header, theta_loc, theta_cls, match)
        fn_type = classify_tide(gt, image.detections, match, t_fg, t_bg)
        out.append(FnRecord(
            image_id=image.image_id, gt_id=gt_id, class_index=gt.class_index,
            mechanism=label, tide=fn_type, evidence=evidence,
        ))
    return out
