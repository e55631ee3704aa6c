"""NMS replay: hand cases, postconditions, idempotence, and determinism."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fnscope.geometry import BBox, iou
from fnscope.interchange import ClassCatalog
from fnscope.nms import NmsConfig, find_suppressor, replay

from conftest import refined_cand

CAT2 = ClassCatalog(names=("car", "person"), has_background_entry=False)
CFG = NmsConfig(iou_threshold=0.5, score_threshold=0.3)


def test_low_overlap_pair_both_kept():
    # IoU 1/7 between the two unit boxes: far below the threshold
    cands = (
        refined_cand(0, (0.0, 0.0, 1.0, 1.0), (0.9, 0.0)),
        refined_cand(0, (0.5, 0.5, 1.5, 1.5), (0.8, 0.0)),
    )
    dets = replay(cands, CAT2, CFG)
    assert [d.source_candidate for d in dets] == [0, 1]


def test_high_overlap_pair_keeps_higher_score():
    cands = (
        refined_cand(0, (0.0, 0.0, 10.0, 10.0), (0.8, 0.0)),
        refined_cand(0, (1.0, 0.0, 11.0, 10.0), (0.9, 0.0)),  # IoU 9/11
    )
    dets = replay(cands, CAT2, CFG)
    assert [d.source_candidate for d in dets] == [1]
    assert dets[0].score == 0.9


def test_suppression_is_not_transitive():
    # A suppresses B; C overlaps B but not A, so C survives because B is gone.
    a = (0.0, 0.0, 10.0, 10.0)
    b = (2.0, 0.0, 12.0, 10.0)    # IoU(a,b) = 0.667: suppressed by a
    c = (7.0, 0.0, 17.0, 10.0)    # IoU(b,c) = 5/15 = 0.33, IoU(a,c) = 3/17 = 0.18
    cands = (
        refined_cand(0, a, (0.9, 0.0)),
        refined_cand(0, b, (0.8, 0.0)),
        refined_cand(0, c, (0.7, 0.0)),
    )
    dets = replay(cands, CAT2, CFG)
    assert [d.source_candidate for d in dets] == [0, 2]


def test_classes_suppress_independently():
    box = (0.0, 0.0, 10.0, 10.0)
    cands = (
        refined_cand(0, box, (0.9, 0.0)),
        refined_cand(0, box, (0.0, 0.8)),
    )
    dets = replay(cands, CAT2, CFG)
    assert [(d.class_index, d.source_candidate) for d in dets] == [(1, 0), (2, 1)]


def test_output_ordered_class_major_then_score():
    cands = (
        refined_cand(0, (0.0, 0.0, 4.0, 4.0), (0.5, 0.9)),
        refined_cand(0, (20.0, 20.0, 24.0, 24.0), (0.8, 0.0)),
    )
    dets = replay(cands, CAT2, CFG)
    assert [(d.class_index, d.score) for d in dets] == [(1, 0.8), (1, 0.5), (2, 0.9)]


def test_score_tie_resolved_by_candidate_index():
    box_a = (0.0, 0.0, 10.0, 10.0)
    box_b = (1.0, 0.0, 11.0, 10.0)
    cands = (
        refined_cand(0, box_a, (0.8, 0.0)),
        refined_cand(0, box_b, (0.8, 0.0)),
    )
    dets = replay(cands, CAT2, CFG)
    assert [d.source_candidate for d in dets] == [0]


def test_score_threshold_filters_before_suppression():
    cands = (
        refined_cand(0, (0.0, 0.0, 10.0, 10.0), (0.25, 0.0)),
        refined_cand(0, (1.0, 0.0, 11.0, 10.0), (0.9, 0.0)),
    )
    dets = replay(cands, CAT2, CFG)
    assert [d.source_candidate for d in dets] == [1]


def test_top_k_pre_truncates_the_sorted_pool():
    boxes = [(i * 20.0, 0.0, i * 20.0 + 10.0, 10.0) for i in range(4)]  # disjoint
    cands = tuple(refined_cand(0, b, (0.9 - 0.1 * i, 0.0)) for i, b in enumerate(boxes))
    cfg = NmsConfig(iou_threshold=0.5, score_threshold=0.3, top_k_pre=2)
    dets = replay(cands, CAT2, cfg)
    assert [d.source_candidate for d in dets] == [0, 1]


def test_suppress_at_equal_boundary():
    a = (0.0, 0.0, 10.0, 10.0)
    b = (0.0, 0.0, 10.0, 5.0)  # IoU exactly 0.5
    cands = (refined_cand(0, a, (0.9, 0.0)), refined_cand(0, b, (0.8, 0.0)))
    strict = NmsConfig(iou_threshold=0.5, score_threshold=0.3)
    lenient = NmsConfig(iou_threshold=0.5, score_threshold=0.3, suppress_at_equal=False)
    assert len(replay(cands, CAT2, strict)) == 1
    assert len(replay(cands, CAT2, lenient)) == 2


def test_class_specific_candidates_only_compete_in_their_class():
    box = (0.0, 0.0, 10.0, 10.0)
    cands = (
        refined_cand(0, box, (0.9, 0.9), class_specific_for=1),
        refined_cand(0, box, (0.8, 0.8), class_specific_for=2),
    )
    dets = replay(cands, CAT2, NmsConfig(iou_threshold=0.5))
    assert [(d.class_index, d.source_candidate) for d in dets] == [(1, 0), (2, 1)]


def test_config_validation():
    with pytest.raises(ValueError):
        NmsConfig(iou_threshold=0.0)
    with pytest.raises(ValueError):
        NmsConfig(iou_threshold=1.0)
    with pytest.raises(ValueError):
        NmsConfig(score_threshold=1.5)
    with pytest.raises(ValueError):
        NmsConfig(top_k_pre=-1)


def test_find_suppressor_returns_highest_scoring_overlap():
    victim = refined_cand(0, (2.0, 0.0, 12.0, 10.0), (0.6, 0.0))
    kept = replay(
        (
            refined_cand(0, (0.0, 0.0, 10.0, 10.0), (0.7, 0.0)),
            refined_cand(0, (40.0, 40.0, 50.0, 50.0), (0.9, 0.0)),
        ),
        CAT2,
        CFG,
    )
    sup = find_suppressor(victim, 1, kept, CFG)
    assert sup is not None and sup.box == BBox(0.0, 0.0, 10.0, 10.0)


def test_find_suppressor_ignores_other_classes_and_non_overlaps():
    victim = refined_cand(0, (0.0, 0.0, 10.0, 10.0), (0.6, 0.0))
    kept = replay((refined_cand(0, (0.0, 0.0, 10.0, 10.0), (0.0, 0.9)),), CAT2, CFG)
    assert find_suppressor(victim, 1, kept, CFG) is None  # only class 2 kept
    assert find_suppressor(victim, 2, kept, CFG) is not None


def test_find_suppressor_none_means_truncation():
    victim = refined_cand(0, (0.0, 0.0, 10.0, 10.0), (0.6, 0.0))
    assert find_suppressor(victim, 1, [], CFG) is None


# ---------------------------------------------------------------------------
# Properties


score64 = st.integers(0, 64).map(lambda k: k / 64.0)


@st.composite
def candidate_sets(draw):
    n = draw(st.integers(0, 8))
    cands = []
    for _ in range(n):
        x = draw(st.integers(0, 40)) * 1.0
        y = draw(st.integers(0, 40)) * 1.0
        w = draw(st.integers(2, 16)) * 1.0
        h = draw(st.integers(2, 16)) * 1.0
        cands.append(refined_cand(0, (x, y, x + w, y + h), (draw(score64), draw(score64))))
    return tuple(cands)


@given(candidate_sets(), st.floats(0.2, 0.8), st.booleans())
def test_postcondition_no_kept_pair_suppresses(cands, thr, at_equal):
    cfg = NmsConfig(iou_threshold=thr, score_threshold=0.0, suppress_at_equal=at_equal)
    dets = replay(cands, CAT2, cfg)
    for i, a in enumerate(dets):
        for b in dets[i + 1:]:
            if a.class_index == b.class_index:
                assert not cfg.suppresses(iou(a.box, b.box))


@given(candidate_sets())
def test_replay_is_idempotent(cands):
    dets = replay(cands, CAT2, CFG)
    again = replay(
        tuple(refined_cand(0, d.box.as_tuple(), _scores_for(d)) for d in dets),
        CAT2,
        CFG,
    )
    assert [(d.box, d.class_index, d.score) for d in again] == [
        (d.box, d.class_index, d.score) for d in dets
    ]


def _scores_for(d):
    scores = [0.0, 0.0]
    scores[d.class_index - 1] = d.score
    return tuple(scores)


@given(candidate_sets())
def test_every_suppressed_candidate_has_a_findable_suppressor(cands):
    cfg = CFG
    dets = replay(cands, CAT2, cfg)
    kept_ids = {d.source_candidate for d in dets if d.class_index == 1}
    for i, c in enumerate(cands):
        if i in kept_ids or c.scores[0] < cfg.score_threshold:
            continue
        sup = find_suppressor(c, 1, dets, cfg)
        assert sup is not None, "suppressed candidate with no kept overlap"
        assert sup.score >= c.scores[0] or (
            sup.score == c.scores[0] and sup.source_candidate < i
        )
