import csv
import json

import pytest

from drivebench.cli import EXIT_CONFIG, EXIT_OK, main
from drivebench.report import split_transcript
from drivebench.prompt import parse_prompt, prompt_chain_steps
from drivebench.response import CHAIN_UNAVAILABLE, parse_response


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    code = main(["run", "--templates", "lead-vehicle-following", "--seeds", "2", "--planners", "idm,chain-oracle",
                 "--chain-steps", "s1", "--output", str(out), "--workers", "2"])
    assert code == EXIT_OK
    return out


def test_run_writes_expected_tables(small_run):
    report = _rows(small_run / "report.csv")
    assert [r["planner"] for r in report] == ["idm", "chain-oracle"]
    assert set(report[0]) == {"planner", "OLS", "NR-CLS", "R-CLS"}
    details = _rows(small_run / "details.csv")
    assert len(details) == 4
    assert {r["scenario_id"] for r in details} == {"lead-vehicle-following-000", "lead-vehicle-following-001"}
    assert all(r["chain_steps"] == "s1" for r in details)


def test_summary_reconciles_with_details(small_run):
    details = _rows(small_run / "details.csv")
    for row in _rows(small_run / "report.csv"):
        mine = [d for d in details if d["planner"] == row["planner"]]
        for col, key in (("OLS", "ols"), ("NR-CLS", "nr_cls"), ("R-CLS", "r_cls")):
            mean = sum(float(d[key]) for d in mine) / len(mine)
            assert abs(float(row[col]) - mean) < 1e-9


def test_one_transcript_per_cell(small_run):
    files = sorted(p.relative_to(small_run).as_posix() for p in (small_run / "transcripts").rglob("*.txt"))
    assert files == [f"transcripts/{p}/lead-vehicle-following-00{s}.txt" for p in ("chain-oracle", "idm") for s in (0, 1)]


def test_transcripts_parse_back(small_run):
    for path in (small_run / "transcripts" / "chain-oracle").glob("*.txt"):
        prompt, response = split_transcript(path.read_text(encoding="utf-8"))
        parse_prompt(prompt)
        assert prompt_chain_steps(prompt) == {"s1"}
        chain, traj = parse_response(response, 16)
        assert chain.enabled_steps == {"s1"} and len(traj) == 16
    for path in (small_run / "transcripts" / "idm").glob("*.txt"):
        _, response = split_transcript(path.read_text(encoding="utf-8"))
        assert response.startswith(CHAIN_UNAVAILABLE)
        chain, _ = parse_response(response, 16)
        assert chain is None


def test_manifest_covers_files(small_run):
    manifest = json.loads((small_run / "manifest.json").read_text())
    paths = {e["path"] for e in manifest["files"]}
    assert {"report.csv", "details.csv", "report.json", "config.json"} <= paths
    assert any(p.startswith("simlogs/idm/") for p in paths)


def test_chain_step_column_differs_between_runs(tmp_path, small_run):
    out = tmp_path / "full"
    assert main(["run", "--templates", "lead-vehicle-following", "--seeds", "1", "--planners", "chain-oracle",
                 "--chain-steps", "full", "--output", str(out)]) == EXIT_OK
    (row,) = _rows(out / "details.csv")
    assert row["chain_steps"] == "s1,s2,s3,s4"


def test_score_subcommand_matches_details(tmp_path, small_run):
    out = tmp_path / "scores.csv"
    assert main(["score", str(small_run / "simlogs"), "--output", str(out)]) == EXIT_OK
    scores = _rows(out)
    assert len(scores) == 8
    details = {(d["planner"], d["scenario_id"]): d for d in _rows(small_run / "details.csv")}
    for s in scores:
        prefix = "nr" if s["mode"] == "nonreactive" else "r"
        assert float(s["cls"]) == float(details[(s["planner"], s["scenario_id"])][f"{prefix}_cls"])


def test_transcripts_subcommand_is_idempotent(small_run):
    before = {p: p.read_bytes() for p in (small_run / "transcripts").rglob("*.txt")}
    assert main(["transcripts", str(small_run)]) == EXIT_OK
    assert {p: p.read_bytes() for p in (small_run / "transcripts").rglob("*.txt")} == before


def test_synth_writes_loadable_files(tmp_path):
    from drivebench.scenario import load_scenario

    assert main(["synth", "--output", str(tmp_path), "--templates", "empty-road", "--seeds", "2"]) == EXIT_OK
    files = sorted(tmp_path.glob("*.json"))
    assert [f.name for f in files] == ["empty-road-000.json", "empty-road-001.json"]
    assert load_scenario(files[0]).scenario_id == "empty-road-000"


def test_run_from_scenario_files(tmp_path):
    assert main(["synth", "--output", str(tmp_path / "s"), "--templates", "empty-road", "--seeds", "1"]) == EXIT_OK
    out = tmp_path / "r"
    assert main(["run", "--scenarios", str(tmp_path / "s" / "*.json"), "--planners", "log-replay",
                 "--output", str(out)]) == EXIT_OK
    (row,) = _rows(out / "details.csv")
    assert row["scenario_id"] == "empty-road-000" and float(row["ols"]) == 100.0


@pytest.mark.parametrize("argv", [
    ["run", "--templates", "nowhere"],
    ["run", "--planners", "wizard"],
    ["run", "--chain-steps", "s9"],
    ["run", "--planners", "llm", "--templates", "empty-road", "--seeds", "1"],
    ["run", "--scenarios", "/nonexistent/*.json"],
    ["score", "/nonexistent/path"],
    ["transcripts", "/nonexistent"],
    ["frobnicate"],
])
def test_invalid_invocations_exit_with_config_code(argv, tmp_path, monkeypatch):
    monkeypatch.delenv("DRIVEBENCH_LLM_URL", raising=False)
    if argv[0] == "run":
        argv = argv + ["--output", str(tmp_path / "o")]
    assert main(argv) == EXIT_CONFIG
