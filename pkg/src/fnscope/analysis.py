"""Full-dump analysis: match, attribute, type, and aggregate, optionally in
parallel across images.

Images are independent, so the per-image work is a plain map; records are
merged back in input order, keeping outputs deterministic regardless of the
worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .config import RunConfig
from .interchange import DumpHeader, ImageIntrospection
from .matching import average_precision, match_image
from .mechanism import FnRecord, classify_image
from .report import Aggregator, AnalysisReport


@dataclass(frozen=True)
class _ImageStats:
    records: tuple[FnRecord, ...]
    gt_per_class: tuple[tuple[int, int], ...]  # (class_index, non-ignored count)
    ap_entries: tuple[tuple[int, float, bool], ...]  # (class_index, score, is_tp)


def _analyze_one(header: DumpHeader, config: RunConfig, image: ImageIntrospection) -> _ImageStats:
    match = match_image(image, config.theta_loc)
    records = classify_image(
        header, image, config.theta_loc, config.theta_cls,
        config.tide_fg, config.tide_bg, match,
    )
    counts: dict[int, int] = {}
    for g in image.ground_truth:
        if not g.ignore:
            counts[g.class_index] = counts.get(g.class_index, 0) + 1
    matched = match.matched_detection_indices
    ap_entries = tuple(
        (d.class_index, d.score, i in matched) for i, d in enumerate(image.detections)
    )
    return _ImageStats(tuple(records), tuple(counts.items()), ap_entries)


@dataclass(frozen=True)
class AnalysisResult:
    records: tuple[FnRecord, ...]
    report: AnalysisReport


def run_analysis(
    header: DumpHeader,
    images: Sequence[ImageIntrospection],
    config: RunConfig | None = None,
) -> AnalysisResult:
    config = config or RunConfig()
    if config.workers > 1 and len(images) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunk = max(1, len(images) // (config.workers * 4))
            stats = list(pool.map(_StatsTask(header, config), images, chunksize=chunk))
    else:
        stats = [_analyze_one(header, config, image) for image in images]

    agg = Aggregator()
    records: list[FnRecord] = []
    gt_totals: dict[int, int] = {}
    ap_entries: dict[int, list[tuple[float, bool]]] = {}
    for s in stats:
        records.extend(s.records)
        for r in s.records:
            agg.add(r)
        for cls, n in s.gt_per_class:
            agg.add_objects(cls, n)
            gt_totals[cls] = gt_totals.get(cls, 0) + n
        for cls, score, hit in s.ap_entries:
            ap_entries.setdefault(cls, []).append((score, hit))

    aps = {
        name: average_precision(ap_entries.get(idx, []), gt_totals.get(idx, 0))
        for idx, name in enumerate(header.catalog.names, start=1)
    }
    report = agg.report(header.catalog.names, config.thresholds(), aps)
    return AnalysisResult(records=tuple(records), report=report)


class _StatsTask:
    """Picklable per-image task for worker pools."""

    def __init__(self, header: DumpHeader, config: RunConfig):
        self.header = header
        self.config = config

    def __call__(self, image: ImageIntrospection) -> _ImageStats:
        return _analyze_one(self.header, self.config, image)
