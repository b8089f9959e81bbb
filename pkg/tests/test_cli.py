import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from coneflow.cli import main

SCENARIOS = sorted((Path(__file__).parent.parent / "scenarios").glob("*.json"))
TWO_FACTOR = {"d": 2, "coordinates": [
    {"alpha": 1.0, "beta": [-1.0, 0.5], "c": 0.1,
     "jumps": {"atoms": [{"xi": [0.5, 0.2], "mass": 1.0}, {"xi": [1.5, 0.5], "mass": 0.3}]}},
    {"alpha": 0.5, "beta": [0.3, -0.8], "c": 0.0, "jumps": {"atoms": [{"xi": [0.0, 2.0], "mass": 0.5}]}}]}


def write(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(body if isinstance(body, str) else json.dumps(body))
    return path


def riccati_convexity(**command):
    return {"schema_version": 1, "cone": {"dimension": 1, "kind": "orthant"},
            "field": {"name": "scalar-riccati"},
            "command": {"type": "convexity", "x": [1.0], "y": [3.0], "t": 0.2, **command}}


def test_every_acceptance_criterion_has_a_scenario():
    numbers = {p.name[:2] for p in SCENARIOS}
    assert numbers == {f"{k:02d}" for k in range(1, 15)}


@pytest.mark.parametrize("path", SCENARIOS, ids=[p.stem for p in SCENARIOS])
def test_scenario_exit_code(path, tmp_path):
    expected = json.loads(path.read_text())["expected_exit"]
    out = tmp_path / "report.json"
    assert main(["run", str(path), "--out", str(out)]) == expected
    report = json.loads(out.read_text())
    assert report["schema_version"] == 1
    assert report["exit_code"] == expected
    assert set(report) >= {"verdict", "witnesses", "metrics", "versions"}
    if expected == 1:
        assert report["witnesses"] and "violation" in json.dumps(report["witnesses"])


def test_convexity_scenario_passes(tmp_path, capsys):
    path = write(tmp_path, "s.json", riccati_convexity())
    assert main(["run", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "Pass"


def test_reports_are_byte_identical(tmp_path):
    path = SCENARIOS[0].parent / "10d_certify_sin.json"
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", str(path), "--out", str(a)])
    main(["run", str(path), "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_seed_override_changes_batch(tmp_path):
    path = SCENARIOS[0].parent / "14_semigroup.json"
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", str(path), "--out", str(a), "--seed", "1"])
    main(["run", str(path), "--out", str(b), "--seed", "2"])
    assert json.loads(a.read_text())["seed"] == 1
    assert a.read_text() != b.read_text()


def test_malformed_json_is_config_error(tmp_path, capsys):
    path = write(tmp_path, "bad.json", '{"field": {"name": "sin"},\n "command": }')
    assert main(["run", str(path)]) == 3
    assert "bad.json:2:" in capsys.readouterr().err


def test_schema_violation_names_the_field(tmp_path, capsys):
    body = riccati_convexity()
    body["field"]["name"] = "cubic"
    assert main(["run", str(write(tmp_path, "s.json", body))]) == 3
    assert "field/name" in capsys.readouterr().err


def test_bad_initial_point_is_config_error(tmp_path):
    body = riccati_convexity(t=0.5)  # y=3 escapes at 1/3
    assert main(["run", str(write(tmp_path, "s.json", body))]) == 3


def test_missing_file_and_usage_errors(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 3


def test_flow_dump_writes_csv(tmp_path):
    path = SCENARIOS[0].parent / "01_riccati_accuracy.json"
    assert main(["run", str(path), "--dump", str(tmp_path / "dump"), "--out", str(tmp_path / "r.json")]) == 0
    rows = list(csv.reader((tmp_path / "dump" / "trajectory.csv").open()))
    assert rows[0] == ["t", "x_1"]
    last = rows[-1]
    assert float(last[0]) == 0.2 and float(last[1]) == pytest.approx(10 / 3, rel=1e-8)


def test_riccati_subcommands(tmp_path, capsys):
    params = write(tmp_path, "p.json", TWO_FACTOR)
    assert main(["riccati", "validate", str(params)]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "Pass"
    assert main(["riccati", "eval", str(params), "--x", "0,0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["f"] == pytest.approx([-0.1, 0.0], abs=1e-15)
    dump = tmp_path / "flow.csv"
    assert main(["riccati", "flow", str(params), "--x=-0.5,0.1", "--t", "1", "--dump", str(dump)]) == 0
    assert dump.exists()
    assert main(["riccati", "eval", str(params), "--x", "1"]) == 3


def test_riccati_validate_fails_inadmissible(tmp_path):
    bad = {"d": 2, "coordinates": [{"alpha": 1, "beta": [0, -0.5]}, {"alpha": 1, "beta": [0, 0]}]}
    assert main(["riccati", "validate", str(write(tmp_path, "p.json", bad))]) == 1


def test_console_script_entry_point(tmp_path):
    path = write(tmp_path, "s.json", riccati_convexity())
    proc = subprocess.run([sys.executable, "-m", "coneflow.cli", "run", str(path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and '"verdict": "Pass"' in proc.stdout
