"""Attribution chain: hand-traced branch cases and structural properties."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fnscope.anchors import AnchorSpec, anchor_boxes
from fnscope.errors import PreconditionError
from fnscope.geometry import BBox, iou
from fnscope.interchange import ClassCatalog, DumpHeader
from fnscope.matching import match_image
from fnscope.mechanism import MechanismLabel, classify_fn, classify_image

from conftest import det, gt, make_image, refined_cand
from fnscope.interchange import Proposal

HEADER = DumpHeader(catalog=ClassCatalog(names=("car", "person", "bike"), has_background_entry=False))

GT = gt(0, (20.0, 20.0, 40.0, 40.0), class_index=1)
ON_TARGET = (20.0, 20.0, 40.0, 40.0)     # IoU 1.0 with GT
NEARBY = (24.0, 20.0, 44.0, 40.0)        # IoU 16/24 = 0.667
FAR = (70.0, 70.0, 90.0, 90.0)           # IoU 0.0
BAND = (32.0, 20.0, 52.0, 40.0)          # IoU 8/32 = 0.25 < 0.5


def props(*boxes):
    return tuple(Proposal(id=i, box=BBox(*b)) for i, b in enumerate(boxes))


def classify(proposals=(), refined=(), header=HEADER, **kw):
    img = make_image(ground_truth=(GT,), proposals=proposals, refined=refined)
    return classify_fn(GT, img, header, **kw)


def test_no_overlapping_proposal_is_proposal_process():
    label, ev = classify(proposals=props(FAR), refined=(refined_cand(0, FAR, (0.9, 0.0, 0.0)),))
    assert label is MechanismLabel.PROPOSAL_PROCESS
    assert ev.best_proposal_iou == 0.0
    assert ev.localized_candidate_ids == ()
    assert ev.max_correct_class_score is None


def test_empty_pipeline_is_vacuous_proposal_process():
    label, ev = classify()
    assert label is MechanismLabel.PROPOSAL_PROCESS
    assert ev.vacuous_pipeline
    assert "vacuous_pipeline" in ev.to_record()


def test_overlapping_proposal_regressed_away_is_regressor():
    # proposal localizes the object, refinement lands in the band
    label, ev = classify(proposals=props(NEARBY), refined=(refined_cand(0, BAND, (0.9, 0.0, 0.0)),))
    assert label is MechanismLabel.REGRESSOR
    assert ev.best_proposal_iou == pytest.approx(16.0 / 24.0)
    assert ev.best_refined_iou == pytest.approx(8.0 / 32.0)


def test_localized_but_all_scores_low_is_background():
    label, ev = classify(
        proposals=props(NEARBY),
        refined=(refined_cand(0, ON_TARGET, (0.25, 0.25, 0.2)),),
    )
    assert label is MechanismLabel.BACKGROUND_CLASSIFICATION
    assert ev.max_correct_class_score == 0.25
    assert ev.max_wrong_class_score == 0.25


def test_localized_wrong_class_confident_is_interclass():
    label, ev = classify(
        proposals=props(NEARBY),
        refined=(refined_cand(0, ON_TARGET, (0.25, 0.75, 0.0)),),
    )
    assert label is MechanismLabel.INTERCLASS_CLASSIFICATION
    assert ev.max_wrong_class_score == 0.75
    assert ev.max_wrong_class_index == 2


def test_localized_correct_class_confident_is_calibration():
    label, ev = classify(
        proposals=props(NEARBY),
        refined=(refined_cand(0, ON_TARGET, (0.5, 0.75, 0.0)),),
    )
    # correct class clears theta_cls, so calibration wins even though a wrong
    # class scores higher
    assert label is MechanismLabel.CLASSIFIER_CALIBRATION
    assert ev.max_correct_class_score == 0.5


def test_scores_pool_across_localized_candidates():
    # One candidate localizes with a low correct score, another with a high
    # one; the chain sees the best correct score over all localized candidates.
    label, _ = classify(
        proposals=props(NEARBY, ON_TARGET),
        refined=(
            refined_cand(0, NEARBY, (0.125, 0.0, 0.0)),
            refined_cand(1, ON_TARGET, (0.5, 0.0, 0.0)),
        ),
    )
    assert label is MechanismLabel.CLASSIFIER_CALIBRATION


def test_non_localized_scores_are_invisible_to_the_chain():
    # A confident correct-class candidate that does NOT localize must not
    # rescue the object from a background verdict.
    label, ev = classify(
        proposals=props(NEARBY, FAR),
        refined=(
            refined_cand(0, ON_TARGET, (0.125, 0.0, 0.0)),  # localized, low scores
            refined_cand(1, FAR, (1.0, 0.0, 0.0)),          # far away, confident
        ),
    )
    assert label is MechanismLabel.BACKGROUND_CLASSIFICATION
    assert ev.localized_candidate_ids == (0,)


def test_threshold_comparisons_are_inclusive():
    # IoU exactly theta_loc localizes; score exactly theta_cls clears.
    half = (20.0, 20.0, 40.0, 30.0)  # IoU 0.5 with GT
    label, _ = classify(
        proposals=props(half),
        refined=(refined_cand(0, half, (0.3, 0.0, 0.0)),),
    )
    assert label is MechanismLabel.CLASSIFIER_CALIBRATION


def test_custom_thresholds_change_the_verdict():
    proposals = props(NEARBY)
    refined = (refined_cand(0, NEARBY, (0.25, 0.0, 0.0)),)
    assert classify(proposals=proposals, refined=refined)[0] is MechanismLabel.BACKGROUND_CLASSIFICATION
    assert (
        classify(proposals=proposals, refined=refined, theta_cls=0.25)[0]
        is MechanismLabel.CLASSIFIER_CALIBRATION
    )
    assert (
        classify(proposals=proposals, refined=refined, theta_loc=0.7)[0]
        is MechanismLabel.PROPOSAL_PROCESS
    )


def test_detected_object_is_rejected():
    img = make_image(
        ground_truth=(GT,),
        proposals=props(ON_TARGET),
        refined=(refined_cand(0, ON_TARGET, (0.9, 0.0, 0.0)),),
        detections=(det(ON_TARGET, class_index=1, score=0.9),),
    )
    with pytest.raises(PreconditionError, match="not a false negative"):
        classify_fn(GT, img, HEADER)


def test_supplied_match_must_use_same_threshold():
    img = make_image(ground_truth=(GT,))
    m = match_image(img, 0.6)
    with pytest.raises(PreconditionError, match="threshold"):
        classify_fn(GT, img, HEADER, theta_loc=0.5, match=m)


def test_anchor_grid_feeds_best_proposal_iou():
    spec = AnchorSpec(
        strides=(8,),
        base_sizes=(24.0,),
        aspect_ratios=(1.0,),
        scale_octaves=1,
        shorter_side=None,
        max_side=None,
        pad_multiple=8,
    )
    header = DumpHeader(
        catalog=ClassCatalog(names=("car", "person", "bike"), has_background_entry=False),
        proposals_are_anchors=True,
        anchor_spec=spec,
    )
    img = make_image(ground_truth=(GT,), width=100, height=100)
    label, ev = classify_fn(GT, img, header)
    grid = anchor_boxes(100, 100, spec)
    best = max(iou(GT.box, BBox(*row)) for row in grid)
    assert ev.best_proposal_iou == pytest.approx(best)
    # a 24px anchor overlaps a 20px object at IoU >= 0.5 somewhere on the grid
    assert best >= 0.5
    assert label is MechanismLabel.REGRESSOR  # nothing refined, anchors localize


def test_classify_image_emits_records_in_gt_id_order():
    g2 = gt(7, (60.0, 60.0, 80.0, 80.0), class_index=2)
    img = make_image(
        ground_truth=(g2, GT),
        proposals=props(NEARBY),
        refined=(refined_cand(0, ON_TARGET, (0.25, 0.75, 0.0)),),
    )
    records = classify_image(HEADER, img)
    assert [r.gt_id for r in records] == [0, 7]
    assert records[0].mechanism is MechanismLabel.INTERCLASS_CLASSIFICATION
    assert records[1].mechanism is MechanismLabel.PROPOSAL_PROCESS
    assert records[0].tide.value == "Missed"
    rec = records[0].to_record()
    assert rec["mechanism"] == "InterclassClassification"
    assert rec["evidence"]["localized_candidate_ids"] == [0]


# ---------------------------------------------------------------------------
# Structural properties over randomized scenes


score64 = st.integers(0, 64).map(lambda k: k / 64.0)


@st.composite
def scenes(draw):
    boxes = []
    for _ in range(draw(st.integers(0, 4))):
        x = draw(st.integers(0, 30)) * 2.0
        y = draw(st.integers(0, 30)) * 2.0
        w = draw(st.integers(4, 20))
        h = draw(st.integers(4, 20))
        boxes.append((x, y, x + w, y + h))
    proposals = props(*boxes)
    refined = tuple(
        refined_cand(
            draw(st.integers(0, len(proposals) - 1)),
            (x := draw(st.integers(0, 30)) * 2.0, y := draw(st.integers(0, 30)) * 2.0,
             x + draw(st.integers(4, 20)), y + draw(st.integers(4, 20))),
            (draw(score64), draw(score64), draw(score64)),
        )
        for _ in range(draw(st.integers(0, 4)) if proposals else 0)
    )
    return proposals, refined


@given(scenes(), st.floats(0.3, 0.7), st.floats(0.1, 0.6))
def test_label_always_consistent_with_evidence(scene, theta_loc, theta_cls):
    proposals, refined = scene
    label, ev = classify(proposals=proposals, refined=refined, theta_loc=theta_loc, theta_cls=theta_cls)
    localized = bool(ev.localized_candidate_ids)
    assert localized == (ev.best_refined_iou >= theta_loc)
    if label in (MechanismLabel.PROPOSAL_PROCESS, MechanismLabel.REGRESSOR):
        assert not localized
        assert (label is MechanismLabel.REGRESSOR) == (ev.best_proposal_iou >= theta_loc)
    else:
        assert localized
        if label is MechanismLabel.CLASSIFIER_CALIBRATION:
            assert ev.max_correct_class_score >= theta_cls
        elif label is MechanismLabel.INTERCLASS_CLASSIFICATION:
            assert ev.max_correct_class_score < theta_cls
            assert ev.max_wrong_class_score >= theta_cls
        else:
            assert ev.max_correct_class_score < theta_cls
            assert ev.max_wrong_class_score is None or ev.max_wrong_class_score < theta_cls


@given(scenes())
def test_raising_theta_cls_never_crosses_the_localization_axis(scene):
    proposals, refined = scene
    loc_axis = {MechanismLabel.PROPOSAL_PROCESS, MechanismLabel.REGRESSOR}
    labels = [
        classify(proposals=proposals, refined=refined, theta_cls=t)[0]
        for t in (0.1, 0.3, 0.5, 0.7)
    ]
    assert len({l in loc_axis for l in labels}) == 1
