"""Release gate for the exporter: one test per acceptance clause.

Ten-image exports from one two-stage and one one-stage model must pass the
analyzer's schema validation with zero errors, and its NMS-replay consistency
check may flag at most 5% of declared detections. The analyzer runs as an
installed command line tool; nothing here imports it.
"""

from __future__ import annotations

import json
from pathlib import Path

from conftest import read_dump, run_cli


def _assert_validates_consistently(dump: Path) -> None:
    result = run_cli("validate", dump, "--theta-cls", "0.3", "--nms-iou", "0.5", "--format", "json")
    assert result.returncode == 0, f"schema validation failed:\n{result.stderr}"

    report = json.loads(result.stdout)
    assert report["images"] == 10

    total = sum(len(rec["detections"]) for rec in read_dump(dump)[1:])
    flagged = len(report["diagnostics"])
    assert total > 0
    assert flagged <= 0.05 * total, (
        f"{flagged} of {total} detections replay-inconsistent: "
        + "; ".join(d["message"] for d in report["diagnostics"][:5])
    )


def test_secondary_two_stage_export_validates_with_consistent_replay(two_stage_dump):
    _assert_validates_consistently(two_stage_dump)


def test_secondary_one_stage_export_validates_with_consistent_replay(one_stage_dump):
    _assert_validates_consistently(one_stage_dump)
