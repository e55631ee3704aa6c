"""Command-line client: happy path, exit codes, env and config precedence,
quiet mode, and remote execution parity."""

import gzip
import json

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

import fnscope.cli as cli
from fnscope.canonical import canonical_json
from fnscope.service.app import app
from fnscope.synth import make_plan, plan_records


@pytest.fixture
def runner():
    return CliRunner()


def write_plan(path, counts=None, class_names=("car", "person")):
    plan = make_plan(
        counts or {"Regressor": 3, "BackgroundClassification": 2},
        class_names=class_names,
        mode="two_stage",
    )
    path.write_text("\n".join(canonical_json(r) for r in plan_records(plan)) + "\n")
    return path


@pytest.fixture
def dump_path(tmp_path, runner):
    plan = write_plan(tmp_path / "plan.jsonl")
    out = tmp_path / "dump.jsonl"
    result = runner.invoke(cli.main, ["synth", str(plan), "--seed", "3", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


# ---------------------------------------------------------------------------
# Happy path


def test_synth_prints_digest_and_writes_dump(tmp_path, runner):
    plan = write_plan(tmp_path / "plan.jsonl")
    out = tmp_path / "dump.jsonl"
    truth = tmp_path / "truth.jsonl"
    result = runner.invoke(
        cli.main,
        ["synth", str(plan), "--seed", "3", "--out", str(out), "--truth-out", str(truth)],
    )
    assert result.exit_code == 0, result.output
    assert result.output.startswith("sha256 ")
    assert out.exists()
    truths = [json.loads(line) for line in truth.read_text().splitlines()]
    assert len(truths) == 5
    assert {t["mechanism"] for t in truths} == {"Regressor", "BackgroundClassification"}


def test_synth_is_seed_deterministic(tmp_path, runner):
    plan = write_plan(tmp_path / "plan.jsonl")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    ra = runner.invoke(cli.main, ["synth", str(plan), "--seed", "9", "--out", str(a)])
    rb = runner.invoke(cli.main, ["synth", str(plan), "--seed", "9", "--out", str(b)])
    assert ra.output.split()[:2] == rb.output.split()[:2]  # same digest
    assert a.read_bytes() == b.read_bytes()


def test_validate_reports_ok(runner, dump_path):
    result = runner.invoke(cli.main, ["validate", str(dump_path)])
    assert result.exit_code == 0
    assert "0 consistency diagnostics" in result.output


def test_validate_json_format(runner, dump_path):
    result = runner.invoke(cli.main, ["validate", str(dump_path), "--format", "json"])
    assert result.exit_code == 0
    body = json.loads(result.output)
    assert body["diagnostics"] == []


def test_analyze_writes_report_and_records(tmp_path, runner, dump_path):
    report_path = tmp_path / "report.json"
    records_path = tmp_path / "records.jsonl"
    result = runner.invoke(
        cli.main,
        ["analyze", str(dump_path), "--out", str(report_path), "--records-out", str(records_path)],
    )
    assert result.exit_code == 0, result.output
    assert "false negatives: 5" in result.output
    report = json.loads(report_path.read_text())
    assert report["overall"]["mechanism"]["counts"]["Regressor"] == 3
    records = [json.loads(line) for line in records_path.read_text().splitlines()]
    assert len(records) == 5


def test_compare_and_render_round_trip(tmp_path, runner, dump_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    runner.invoke(cli.main, ["analyze", str(dump_path), "--out", str(a)])
    runner.invoke(cli.main, ["analyze", str(dump_path), "--theta-cls", "0.8", "--out", str(b)])
    result = runner.invoke(cli.main, ["compare", str(a), str(b), "--format", "machine"])
    assert result.exit_code == 0, result.output
    delta = json.loads(result.output)
    assert delta["kind"] == "delta"

    rendered = runner.invoke(cli.main, ["report-render", str(a), "--format", "crosstab-flow"])
    assert rendered.exit_code == 0
    assert rendered.output.splitlines()[0] == "source\ttarget\tcount"


def test_gzip_output_round_trips(tmp_path, runner):
    plan = write_plan(tmp_path / "plan.jsonl")
    out = tmp_path / "dump.jsonl.gz"
    result = runner.invoke(cli.main, ["synth", str(plan), "--out", str(out)])
    assert result.exit_code == 0
    with gzip.open(out, "rt", encoding="utf-8") as f:
        assert f.readline().startswith('{"format_version"')
    check = runner.invoke(cli.main, ["validate", str(out)])
    assert check.exit_code == 0


def test_version_flag(runner):
    result = runner.invoke(cli.main, ["--version"])
    assert result.exit_code == 0


# ---------------------------------------------------------------------------
# Exit codes


def test_missing_file_exits_2(runner, tmp_path):
    result = runner.invoke(cli.main, ["validate", str(tmp_path / "absent.jsonl")])
    assert result.exit_code == 2
    assert result.stderr.startswith("error: ")


def test_unparseable_dump_exits_3(runner, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    result = runner.invoke(cli.main, ["validate", str(bad)])
    assert result.exit_code == 3
    assert "line 1" in result.stderr


@pytest.mark.parametrize(
    "command, flag, value, field",
    [
        ("analyze", "--theta-loc", "1.5", "theta_loc"),
        ("validate", "--theta-cls", "-0.2", "theta_cls"),
        ("validate", "--nms-iou", "0", "nms_iou"),
    ],
)
def test_out_of_range_threshold_exits_2(runner, dump_path, command, flag, value, field):
    result = runner.invoke(cli.main, [command, str(dump_path), flag, value])
    assert result.exit_code == 2
    assert result.stderr.startswith(f"error: invalid {field}")
    assert "Traceback" not in result.stderr


def test_duplicate_image_exits_4(runner, tmp_path, dump_path):
    lines = dump_path.read_text().splitlines()
    dup = tmp_path / "dup.jsonl"
    dup.write_text("\n".join(lines + [lines[1]]) + "\n")
    result = runner.invoke(cli.main, ["validate", str(dup)])
    assert result.exit_code == 4
    assert "image_id" in result.stderr


def test_unsatisfiable_plan_exits_5(runner, tmp_path):
    plan = write_plan(
        tmp_path / "plan.jsonl",
        counts={"InterclassClassification": 1},
        class_names=("only",),
    )
    result = runner.invoke(cli.main, ["synth", str(plan), "--out", str(tmp_path / "d.jsonl")])
    assert result.exit_code == 5


def test_catalog_mismatch_exits_6(runner, tmp_path, dump_path):
    a = tmp_path / "a.json"
    runner.invoke(cli.main, ["analyze", str(dump_path), "--out", str(a)])
    other = json.loads(a.read_text())
    other["class_names"] = ["bicycle"]
    b = tmp_path / "b.json"
    b.write_text(json.dumps(other))
    result = runner.invoke(cli.main, ["compare", str(a), str(b)])
    assert result.exit_code == 6


def test_unreachable_server_exits_1(runner, dump_path):
    result = runner.invoke(
        cli.main, ["--server", "http://127.0.0.1:9", "validate", str(dump_path)]
    )
    assert result.exit_code == 1
    assert "server request failed" in result.stderr


# ---------------------------------------------------------------------------
# Option sources


def test_env_overrides_format(runner, dump_path):
    result = runner.invoke(
        cli.main, ["analyze", str(dump_path)], env={"FNSCOPE_FORMAT": "machine"}
    )
    assert result.exit_code == 0
    assert json.loads(result.output)["kind"] == "report"


def test_config_file_sets_defaults_and_flags_win(tmp_path, runner, dump_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"theta_cls": 0.7, "format": "machine"}))

    from_cfg = runner.invoke(cli.main, ["--config", str(cfg), "analyze", str(dump_path)])
    assert from_cfg.exit_code == 0, from_cfg.output
    assert json.loads(from_cfg.output)["config"]["theta_cls"] == 0.7

    explicit = runner.invoke(
        cli.main, ["--config", str(cfg), "analyze", str(dump_path), "--theta-cls", "0.2"]
    )
    assert json.loads(explicit.output)["config"]["theta_cls"] == 0.2


def test_quiet_with_out_prints_nothing(tmp_path, runner, dump_path):
    report_path = tmp_path / "report.json"
    result = runner.invoke(
        cli.main, ["--quiet", "analyze", str(dump_path), "--out", str(report_path)]
    )
    assert result.exit_code == 0
    assert result.output == ""
    assert report_path.exists()


# ---------------------------------------------------------------------------
# Remote execution


@pytest.fixture
def remote(monkeypatch):
    def make_client(server):
        return TestClient(app, base_url=server)

    monkeypatch.setattr(cli, "_make_http_client", make_client)
    return "http://testserver"


def test_remote_mode_matches_local_output(tmp_path, runner, dump_path, remote):
    local = runner.invoke(cli.main, ["analyze", str(dump_path), "--format", "machine"])
    over_http = runner.invoke(
        cli.main, ["--server", remote, "analyze", str(dump_path), "--format", "machine"]
    )
    assert over_http.exit_code == 0, over_http.output
    assert over_http.output == local.output


def test_remote_errors_keep_exit_codes(tmp_path, runner, remote):
    plan = write_plan(
        tmp_path / "plan.jsonl",
        counts={"InterclassClassification": 1},
        class_names=("only",),
    )
    result = runner.invoke(
        cli.main,
        ["--server", remote, "synth", str(plan), "--out", str(tmp_path / "d.jsonl")],
    )
    assert result.exit_code == 5
    assert result.stderr.startswith("error: ")
