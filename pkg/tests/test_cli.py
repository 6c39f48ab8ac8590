import json

import pytest

from qkdsim.cli import main
from qkdsim.scenario import builtin_scenario_path


SCN = str(builtin_scenario_path("test1_chain5"))


def test_run_writes_trace_and_summary(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    summary = tmp_path / "s.json"
    rc = main(["run", "--scenario", SCN, "--seed", "3", "--until", "10",
               "--trace", str(trace), "--summary", str(summary)])
    assert rc == 0
    doc = json.loads(summary.read_text())
    assert doc["setup_time_s"] is not None
    assert trace.read_text().count("\n") > 10


def test_run_prints_summary_to_stdout(capsys):
    rc = main(["run", "--scenario", SCN, "--until", "10"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert "traffic" in doc


def test_batch_outputs(tmp_path):
    out = tmp_path / "b.json"
    csv_path = tmp_path / "b.csv"
    rc = main(["batch", "--scenario", SCN, "--seeds", "3", "--until", "10",
               "--out", str(out), "--csv", str(csv_path)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc["runs"]) == 3
    assert "setup_time_s" in doc["stats"]
    assert csv_path.read_text().startswith("seed,")


def test_report_command(tmp_path):
    rc = main(["report", "--scenario", SCN, "--until", "10", "--out", str(tmp_path / "rep")])
    assert rc == 0
    assert (tmp_path / "rep" / "timeline.png").exists()
    assert (tmp_path / "rep" / "traffic.csv").exists()


def test_security_check_single_verdict(tmp_path, capsys):
    adv = tmp_path / "adv.json"
    adv.write_text(json.dumps({"breaks_classical": True, "breaks_pqc": True, "compromised_nodes": []}))
    rc = main(["security-check", "--topology", SCN, "--adversary", str(adv)])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["data_compromised"] is False


def test_security_check_matrix(tmp_path, capsys):
    adv = tmp_path / "adv.json"
    adv.write_text(json.dumps({"matrix": {"node_sets": [[], ["t01"]]}}))
    rc = main(["security-check", "--topology", SCN, "--adversary", str(adv)])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["rows"]) == 16


def test_validation_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(json.dumps({"schema_version": 99, "name": "x"}))
    rc = main(["run", "--scenario", str(bad)])
    assert rc == 2
    assert "error[validation]" in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("{not json")
    rc = main(["run", "--scenario", str(bad)])
    assert rc == 2
    assert "error[parse]" in capsys.readouterr().err


def test_missing_file_exit_code(capsys):
    rc = main(["run", "--scenario", "/nonexistent.scn"])
    assert rc == 2
    assert "error[io]" in capsys.readouterr().err
