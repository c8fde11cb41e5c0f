import json

import pytest

from brokervmp.cli import SEED_ENV, build_parser, main

FAST = ["--population", "6", "--generations", "2"]


def test_validate_shipped(exp1_path, capsys):
    assert main(["validate", str(exp1_path)]) == 0
    assert "valid scenario" in capsys.readouterr().out


def test_validate_market(capsys):
    from conftest import SCENARIOS

    assert main(["validate", str(SCENARIOS / "market.json")]) == 0


def test_validate_invalid(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"market": {"providers": []}, "instants": 2, "initial_request": {"vm_count": 3}}))
    assert main(["validate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "no providers" in err


def test_validate_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_unknown_strategy_is_usage_error(exp1_path, capsys):
    assert main(["solve", str(exp1_path), "--strategy", "best"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1


def test_bad_population_is_usage_error(exp1_path):
    assert main(["solve", str(exp1_path), "--population", "1"]) == 1


def test_runtime_error_exit(tmp_path, exp1_path):
    data = json.loads(exp1_path.read_text())
    data["events"].append({"at": 7, "kind": "PriceMultiply", "provider": "nowhere", "factor": 2})
    path = tmp_path / "s.json"
    path.write_text(json.dumps(data))
    # dry-run validation catches it before any solve
    assert main(["simulate", str(path), *FAST]) == 2


def test_solve_csv(exp1_path, capsys):
    assert main(["solve", str(exp1_path), *FAST, "--strategy", "min-tip"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,f1,f2,f3,ro_cpu,ro_mem,selected"
    assert sum(int(line.rsplit(",", 1)[1]) for line in lines[1:]) >= 1


def test_solve_json(exp1_path, tmp_path):
    assert main(["solve", str(exp1_path), *FAST, "--format", "json", "--output-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "archive.json").read_text())
    assert len(doc["selected"]["placement"]) == 100
    assert doc["strategy"] == "preferred"


def test_simulate_outputs(exp1_path, tmp_path, capsys):
    assert main(["simulate", str(exp1_path), *FAST, "--strategy", "S6"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 8
    assert main(["simulate", str(exp1_path), *FAST, "--format", "json", "--output-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "timeline.json").read_text())
    assert [len(p) for p in doc["placements"]] == [100, 100, 120, 120, 120, 120, 100]


def test_experiment_files(exp1_path, tmp_path, capsys):
    args = ["experiment", str(exp1_path), *FAST, "--runs", "1", "--strategies", "all", "--seed", "3"]
    assert main([*args, "--output-dir", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main([*args, "--output-dir", str(tmp_path / "b"), "--workers", "2"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["dominance.csv", "preference.csv", "summary.csv", "trace.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = (tmp_path / "a" / "summary.csv").read_text().splitlines()
    assert len(summary) == 7
    assert "Selection Strategy" in capsys.readouterr().err


def test_experiment_json_stdout(exp1_path, capsys):
    args = ["experiment", str(exp1_path), *FAST, "--runs", "1", "--strategies", "S1,S6", "--format", "json"]
    assert main(args) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["strategies"] == ["random", "min-tip"]


def test_experiment_zero_runs(exp1_path):
    assert main(["experiment", str(exp1_path), "--runs", "0"]) == 1


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "77")
    assert build_parser().parse_args(["solve", "x.json"]).seed == 77
    monkeypatch.delenv(SEED_ENV)
    assert build_parser().parse_args(["solve", "x.json"]).seed == 0
    assert build_parser().parse_args(["solve", "x.json", "--seed", "5"]).seed == 5
