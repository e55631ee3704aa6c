"""Shared fixtures and generation strategies for the test suite."""

from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from fnscope.geometry import BBox
from fnscope.interchange import (
    ClassCatalog,
    Detection,
    DumpHeader,
    GroundTruthObject,
    ImageIntrospection,
    Proposal,
    RefinedCandidate,
)

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def two_class_header() -> DumpHeader:
    return DumpHeader(catalog=ClassCatalog(names=("car", "person"), has_background_entry=False))


def make_image(
    image_id: str = "img",
    width: int = 100,
    height: int = 100,
    ground_truth: tuple[GroundTruthObject, ...] = (),
    proposals: tuple[Proposal, ...] = (),
    refined: tuple[RefinedCandidate, ...] = (),
    detections: tuple[Detection, ...] = (),
) -> ImageIntrospection:
    return ImageIntrospection(
        image_id=image_id,
        width=width,
        height=height,
        ground_truth=ground_truth,
        proposals=proposals,
        refined=refined,
        detections=detections,
    )


def gt(id: int, box: tuple[float, float, float, float], class_index: int = 1, ignore: bool = False) -> GroundTruthObject:
    return GroundTruthObject(id=id, box=BBox(*box), class_index=class_index, ignore=ignore)


def det(box: tuple[float, float, float, float], class_index: int = 1, score: float = 0.9) -> Detection:
    return Detection(box=BBox(*box), class_index=class_index, score=score)


def refined_cand(
    proposal_id: int,
    box: tuple[float, float, float, float],
    scores: tuple[float, ...],
    class_specific_for: int | None = None,
) -> RefinedCandidate:
    return RefinedCandidate(
        proposal_id=proposal_id, box=BBox(*box), scores=scores, class_specific_for=class_specific_for
    )
