"""Aggregate per-FN records into distribution tables, cross-tabs, and deltas.

Percentages are reported to one decimal place using largest-remainder
apportionment over tenths of a percent, so every printed histogram sums to
exactly 100.0 when it has any mass. The cross-tab is the source of truth:
both histograms are its marginals, which makes the row/column consistency
invariants hold by construction.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .canonical import canonical_json, quantize
from .errors import CatalogMismatchError, DumpParseError
from .mechanism import FnRecord, MechanismLabel
from .tide import TideFnType

# Paper table order for mechanism columns; TIDE rows by decreasing specificity.
MECHANISM_ORDER = (
    MechanismLabel.PROPOSAL_PROCESS,
    MechanismLabel.REGRESSOR,
    MechanismLabel.BACKGROUND_CLASSIFICATION,
    MechanismLabel.CLASSIFIER_CALIBRATION,
    MechanismLabel.INTERCLASS_CLASSIFICATION,
)
TIDE_ORDER = (TideFnType.CLS, TideFnType.LOC, TideFnType.CLS_LOC, TideFnType.MISSED)

MECHANISM_NAMES = tuple(m.value for m in MECHANISM_ORDER)
TIDE_NAMES = tuple(t.value for t in TIDE_ORDER)


def apportion_percentages(counts: Sequence[int]) -> list[float]:
    """Percentages in tenths of a percent that sum to exactly 100.0.

    Integer largest-remainder (Hamilton) apportionment; ties go to the earlier
    entry. All zero counts yield all zero percentages.
    """
    total = sum(counts)
    if total == 0:
        return [0.0] * len(counts)
    floors = [c * 1000 // total for c in counts]
    remainders = [c * 1000 % total for c in counts]
    short = 1000 - sum(floors)
    for i in sorted(range(len(counts)), key=lambda i: (-remainders[i], i))[:short]:
        floors[i] += 1
    return [f / 10.0 for f in floors]


@dataclass(frozen=True)
class Histogram:
    counts: dict[str, int]
    percentages: dict[str, float]

    @classmethod
    def from_counts(cls, labels: Sequence[str], counts: Sequence[int]) -> "Histogram":
        pct = apportion_percentages(counts)
        return cls(dict(zip(labels, counts)), dict(zip(labels, pct)))

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class ClassBreakdown:
    total_objects: int
    fn_count: int
    fn_rate: float | None  # None when total_objects == 0 (undefined rate)
    mechanism: Histogram
    tide: Histogram
    crosstab: dict[str, dict[str, int]]  # TIDE row -> mechanism column -> count


@dataclass(frozen=True)
class AnalysisReport:
    config: dict[str, float]
    class_names: tuple[str, ...]
    overall: ClassBreakdown
    per_class: dict[str, ClassBreakdown]
    per_class_ap: dict[str, float] = field(default_factory=dict)


def _breakdown(cells: Counter, total_objects: int) -> ClassBreakdown:
    crosstab = {
        t: {m: cells.get((t, m), 0) for m in MECHANISM_NAMES} for t in TIDE_NAMES
    }
    tide_counts = [sum(crosstab[t].values()) for t in TIDE_NAMES]
    mech_counts = [sum(crosstab[t][m] for t in TIDE_NAMES) for m in MECHANISM_NAMES]
    fn_count = sum(tide_counts)
    return ClassBreakdown(
        total_objects=total_objects,
        fn_count=fn_count,
        fn_rate=None if total_objects == 0 else fn_count / total_objects,
        mechanism=Histogram.from_counts(MECHANISM_NAMES, mech_counts),
        tide=Histogram.from_counts(TIDE_NAMES, tide_counts),
        crosstab=crosstab,
    )


class Aggregator:
    """Mergeable aggregation state: add records anywhere, merge, then report."""

    def __init__(self):
        self.cells: Counter = Counter()  # (tide, mechanism) -> count
        self.class_cells: dict[int, Counter] = {}
        self.total_objects = 0
        self.class_totals: Counter = Counter()

    def add(self, record: FnRecord) -> None:
        key = (record.tide.value, record.mechanism.value)
        self.cells[key] += 1
        self.class_cells.setdefault(record.class_index, Counter())[key] += 1

    def add_objects(self, class_index: int, count: int = 1) -> None:
        self.total_objects += count
        self.class_totals[class_index] += count

    def merge(self, other: "Aggregator") -> "Aggregator":
        self.cells.update(other.cells)
        for cls, cells in other.class_cells.items():
            self.class_cells.setdefault(cls, Counter()).update(cells)
        self.total_objects += other.total_objects
        self.class_totals.update(other.class_totals)
        return self

    def report(
        self,
        class_names: Sequence[str],
        config: Mapping[str, float],
        per_class_ap: Mapping[str, float] | None = None,
    ) -> AnalysisReport:
        per_class = {}
        for idx, name in enumerate(class_names, start=1):
            per_class[name] = _breakdown(
                self.class_cells.get(idx, Counter()), self.class_totals.get(idx, 0)
            )
        return AnalysisReport(
            config=dict(config),
            class_names=tuple(class_names),
            overall=_breakdown(self.cells, self.total_objects),
            per_class=per_class,
            per_class_ap=dict(per_class_ap or {}),
        )


def aggregate(
    records: Iterable[FnRecord],
    total_objects: int,
    class_names: Sequence[str],
    config: Mapping[str, float],
    class_totals: Mapping[int, int] | None = None,
    per_class_ap: Mapping[str, float] | None = None,
) -> AnalysisReport:
    agg = Aggregator()
    agg.total_objects = total_objects
    if class_totals:
        agg.class_totals.update(class_totals)
    for r in records:
        agg.add(r)
    return agg.report(class_names, config, per_class_ap)


# ---------------------------------------------------------------------------
# Machine-readable form


def _breakdown_record(b: ClassBreakdown) -> dict:
    return {
        "total_objects": b.total_objects,
        "fn_count": b.fn_count,
        "fn_rate": None if b.fn_rate is None else quantize(b.fn_rate),
        "mechanism": {"counts": b.mechanism.counts, "percentages": b.mechanism.percentages},
        "tide": {"counts": b.tide.counts, "percentages": b.tide.percentages},
        "crosstab": b.crosstab,
    }


def report_record(report: AnalysisReport) -> dict:
    rec: dict[str, Any] = {
        "format_version": "1",
        "kind": "report",
        "config": {k: quantize(v) for k, v in report.config.items()},
        "class_names": list(report.class_names),
        "overall": _breakdown_record(report.overall),
        "per_class": {name: _breakdown_record(b) for name, b in report.per_class.items()},
    }
    if report.per_class_ap:
        rec["per_class_ap"] = {k: quantize(v) for k, v in report.per_class_ap.items()}
    return rec


def _parse_breakdown(obj: dict, path: str) -> ClassBreakdown:
    try:
        crosstab = {
            t: {m: int(obj["crosstab"][t][m]) for m in MECHANISM_NAMES} for t in TIDE_NAMES
        }
        return ClassBreakdown(
            total_objects=int(obj["total_objects"]),
            fn_count=int(obj["fn_count"]),
            fn_rate=None if obj["fn_rate"] is None else float(obj["fn_rate"]),
            mechanism=Histogram(
                {m: int(obj["mechanism"]["counts"][m]) for m in MECHANISM_NAMES},
                {m: float(obj["mechanism"]["percentages"][m]) for m in MECHANISM_NAMES},
            ),
            tide=Histogram(
                {t: int(obj["tide"]["counts"][t]) for t in TIDE_NAMES},
                {t: float(obj["tide"]["percentages"][t]) for t in TIDE_NAMES},
            ),
            crosstab=crosstab,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DumpParseError(f"malformed report: {e}", path=path) from None


def parse_report(text: str) -> AnalysisReport:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise DumpParseError(f"invalid JSON: {e.msg}", path="report") from None
    return report_from_record(obj)


def report_from_record(obj) -> AnalysisReport:
    if not isinstance(obj, dict) or obj.get("kind") != "report":
        raise DumpParseError("not a report document", path="report")
    if obj.get("format_version") != "1":
        raise DumpParseError("unsupported format_version", path="report.format_version")
    try:
        class_names = tuple(str(n) for n in obj["class_names"])
        config = {str(k): float(v) for k, v in obj["config"].items()}
        per_class = {
            str(name): _parse_breakdown(b, f"per_class.{name}")
            for name, b in obj["per_class"].items()
        }
        aps = {str(k): float(v) for k, v in obj.get("per_class_ap", {}).items()}
    except (KeyError, TypeError, ValueError) as e:
        raise DumpParseError(f"malformed report: {e}", path="report") from None
    return AnalysisReport(
        config=config,
        class_names=class_names,
        overall=_parse_breakdown(obj["overall"], "overall"),
        per_class=per_class,
        per_class_ap=aps,
    )


# ---------------------------------------------------------------------------
# Rendering


_SHORT_MECH = {m.value: m.short for m in MechanismLabel}


def _fmt_rate(rate: float | None) -> str:
    return "n/a" if rate is None else f"{100.0 * rate:.1f}%"


def _table_lines(report: AnalysisReport) -> list[str]:
    o = report.overall
    lines = [
        "false negatives: "
        f"{o.fn_count} of {o.total_objects} objects ({_fmt_rate(o.fn_rate)})",
        "",
    ]
    header = ["class", "objects", "FN", "rate"] + [_SHORT_MECH[m] for m in MECHANISM_NAMES]
    rows = [header]
    def row_for(name: str, b: ClassBreakdown) -> list[str]:
        return [name, str(b.total_objects), str(b.fn_count), _fmt_rate(b.fn_rate)] + [
            f"{b.mechanism.percentages[m]:.1f}" for m in MECHANISM_NAMES
        ]
    rows.append(row_for("all", o))
    for name in report.class_names:
        rows.append(row_for(name, report.per_class[name]))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    for r in rows:
        lines.append("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))))
    lines.append("")
    lines.append("TIDE types: " + "  ".join(
        f"{t}={o.tide.counts[t]} ({o.tide.percentages[t]:.1f}%)" for t in TIDE_NAMES
    ))
    lines.append("")
    lines.append("crosstab (TIDE rows, mechanism columns):")
    head = ["", *(_SHORT_MECH[m] for m in MECHANISM_NAMES)]
    grid = [head] + [
        [t, *(str(o.crosstab[t][m]) for m in MECHANISM_NAMES)] for t in TIDE_NAMES
    ]
    gw = [max(len(r[i]) for r in grid) for i in range(len(head))]
    for r in grid:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, gw)))
    if report.per_class_ap:
        lines.append("")
        lines.append("AP: " + "  ".join(
            f"{name}={report.per_class_ap[name]:.3f}" for name in report.class_names
            if name in report.per_class_ap
        ))
    return lines


def render(report: AnalysisReport, format: str = "table") -> str:
    """Render as a text table, machine-readable JSON, or flow triples."""
    if format == "table":
        return "\n".join(_table_lines(report)) + "\n"
    if format == "machine":
        return canonical_json(report_record(report), indent=2) + "\n"
    if format == "crosstab-flow":
        lines = ["source\ttarget\tcount"]
        for t in TIDE_NAMES:
            for m in MECHANISM_NAMES:
                count = report.overall.crosstab[t][m]
                if count:
                    lines.append(f"{t}\t{m}\t{count}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {format!r}")


# ---------------------------------------------------------------------------
# Comparison


@dataclass(frozen=True)
class DeltaBreakdown:
    fn_rate_delta_pp: float | None
    mechanism_delta_pp: dict[str, float]
    tide_delta_pp: dict[str, float]


@dataclass(frozen=True)
class DeltaReport:
    class_names: tuple[str, ...]
    overall: DeltaBreakdown
    per_class: dict[str, DeltaBreakdown]


def _tenth_delta(a: float, b: float) -> float:
    return (round(a * 10.0) - round(b * 10.0)) / 10.0


def _delta(a: ClassBreakdown, b: ClassBreakdown) -> DeltaBreakdown:
    if a.fn_rate is None or b.fn_rate is None:
        rate = None
    else:
        rate = _tenth_delta(100.0 * a.fn_rate, 100.0 * b.fn_rate)
    return DeltaBreakdown(
        fn_rate_delta_pp=rate,
        mechanism_delta_pp={
            m: _tenth_delta(a.mechanism.percentages[m], b.mechanism.percentages[m])
            for m in MECHANISM_NAMES
        },
        tide_delta_pp={
            t: _tenth_delta(a.tide.percentages[t], b.tide.percentages[t])
            for t in TIDE_NAMES
        },
    )


def compare(a: AnalysisReport, b: AnalysisReport) -> DeltaReport:
    """Per-cell percentage-point differences, a minus b."""
    if a.class_names != b.class_names:
        raise CatalogMismatchError(
            f"reports cover different catalogs: {list(a.class_names)} vs {list(b.class_names)}"
        )
    return DeltaReport(
        class_names=a.class_names,
        overall=_delta(a.overall, b.overall),
        per_class={n: _delta(a.per_class[n], b.per_class[n]) for n in a.class_names},
    )


def delta_record(delta: DeltaReport) -> dict:
    def one(d: DeltaBreakdown) -> dict:
        return {
            "fn_rate_delta_pp": None if d.fn_rate_delta_pp is None else quantize(d.fn_rate_delta_pp),
            "mechanism_delta_pp": {k: quantize(v) for k, v in d.mechanism_delta_pp.items()},
            "tide_delta_pp": {k: quantize(v) for k, v in d.tide_delta_pp.items()},
        }

    return {
        "format_version": "1",
        "kind": "delta",
        "class_names": list(delta.class_names),
        "overall": one(delta.overall),
        "per_class": {n: one(delta.per_class[n]) for n in delta.class_names},
    }


def delta_from_record(obj) -> DeltaReport:
    if not isinstance(obj, dict) or obj.get("kind") != "delta":
        raise DumpParseError("not a delta document", path="delta")
    if obj.get("format_version") != "1":
        raise DumpParseError("unsupported format_version", path="delta.format_version")

    def one(d, path: str) -> DeltaBreakdown:
        try:
            rate = d["fn_rate_delta_pp"]
            return DeltaBreakdown(
                fn_rate_delta_pp=None if rate is None else float(rate),
                mechanism_delta_pp={m: float(d["mechanism_delta_pp"][m]) for m in MECHANISM_NAMES},
                tide_delta_pp={t: float(d["tide_delta_pp"][t]) for t in TIDE_NAMES},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DumpParseError(f"malformed delta: {e}", path=path) from None

    try:
        class_names = tuple(str(n) for n in obj["class_names"])
        per_class = {name: one(obj["per_class"][name], f"per_class.{name}") for name in class_names}
    except (KeyError, TypeError) as e:
        raise DumpParseError(f"malformed delta: {e}", path="delta") from None
    return DeltaReport(
        class_names=class_names,
        overall=one(obj["overall"], "overall"),
        per_class=per_class,
    )


def render_delta(delta: DeltaReport, format: str = "table") -> str:
    if format == "machine":
        return canonical_json(delta_record(delta), indent=2) + "\n"
    if format != "table":
        raise ValueError(f"unknown delta format {format!r}")
    d = delta.overall

    def fmt(v: float | None) -> str:
        return "n/a" if v is None else f"{v:+.1f}"

    lines = [f"fn_rate delta: {fmt(d.fn_rate_delta_pp)}pp", ""]
    header = ["class", "rate"] + [_SHORT_MECH[m] for m in MECHANISM_NAMES]
    rows = [header, ["all", fmt(d.fn_rate_delta_pp)] + [fmt(d.mechanism_delta_pp[m]) for m in MECHANISM_NAMES]]
    for name in delta.class_names:
        pd = delta.per_class[name]
        rows.append([name, fmt(pd.fn_rate_delta_pp)] + [fmt(pd.mechanism_delta_pp[m]) for m in MECHANISM_NAMES])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    for r in rows:
        lines.append("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))))
    lines.append("")
    lines.append("TIDE deltas (pp): " + "  ".join(f"{t}={fmt(d.tide_delta_pp[t])}" for t in TIDE_NAMES))
    return "\n".join(lines) + "\n"
