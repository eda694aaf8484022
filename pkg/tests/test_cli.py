import io
import json
import subprocess
import sys

import pytest

from supermarket.cli import run_cli

from .conftest import FIXTURES


def cli(*argv):
    out = io.StringIO()
    code = run_cli([str(a) for a in argv], out)
    return code, out.getvalue()


def test_validate_ok():
    assert cli("validate", "--input", FIXTURES / "golden3.json") == (0, "valid\n")


def test_validate_disconnected():
    code, text = cli("validate", "--input", FIXTURES / "disconnected.json")
    assert code == 1 and "graph not connected" in text


def test_malformed_file_names_field(capsys):
    code, _ = cli("decompose", "--input", FIXTURES / "malformed.json")
    assert code == 2
    assert "rate" in capsys.readouterr().err


def test_missing_file():
    assert cli("decompose", "--input", FIXTURES / "nope.json")[0] == 2


def test_usage_errors():
    assert cli()[0] == 2
    assert cli("frobnicate")[0] == 2
    assert cli("verify", "bogus", "--input", FIXTURES / "golden3.json")[0] == 2


def test_decompose_two_station(tmp_path):
    report = tmp_path / "d.json"
    code, text = cli("decompose", "--input", FIXTURES / "two_station.json", "--output", report)
    assert code == 0 and text == "C_1={1,2} V_1=2/3\n"
    data = json.loads(report.read_text())
    assert data["values"] == ["2/3"]


@pytest.mark.parametrize("extra", [[], ["--brute-force"]])
def test_decompose_golden(extra):
    code, text = cli("decompose", "--input", FIXTURES / "golden3.json", *extra)
    assert code == 0 and text == "C_1={1} V_1=1\nC_2={2,3} V_2=0\n"


def test_synthesize_two_station():
    code, text = cli("synthesize", "--input", FIXTURES / "two_station.json")
    assert code == 0 and text == "{1,2}: 5/9 4/9\n"


def test_bonded_golden(tmp_path):
    report = tmp_path / "b.json"
    code, text = cli("bonded", "--input", FIXTURES / "golden3.json", "--output", report)
    assert code == 0 and text == "C_1: {1}\nC_2: {2}, {3}\n"
    frozen = json.loads((FIXTURES / "golden3_decomposition.json").read_text())
    assert json.loads(report.read_text())["bonded"] == frozen["bonded"]


def test_simulate_exports_csv(tmp_path):
    csv_path = tmp_path / "t.csv"
    code, text = cli("simulate", "--input", FIXTURES / "golden3.json", "--kind", "queue", "--horizon", 2000,
                     "--seed", 3, "--cadence", 100, "--output", csv_path)
    assert code == 0
    rows = csv_path.read_text().splitlines()
    assert len(rows) == 22 and rows[-1].split(",")[2:] == text.split()
    assert json.loads(csv_path.with_suffix(".json").read_text())["config"]["seed"] == 3


def test_simulate_from_config_matches_flags(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli("simulate", "--input", FIXTURES / "two_station.json", "--policy", "witness", "--horizon", 5000,
        "--seed", 9, "--output", a)
    config = tmp_path / "c.json"
    config.write_text(json.dumps(json.loads(a.with_suffix(".json").read_text())["config"]))
    assert cli("simulate", "--config", config, "--output", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_needs_input():
    assert cli("simulate")[0] == 2


def test_verify_speeds_reproducible(tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        code, _ = cli("verify", "speeds", "--input", FIXTURES / "two_station.json", "--seed", 7, "--output", path)
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert json.loads(outs[0])[0]["seed"] == 7


def test_verify_inapplicable_is_usage_error():
    assert cli("verify", "separation", "--input", FIXTURES / "two_station.json", "--horizon", 1000)[0] == 2
    assert cli("verify", "weights", "--input", FIXTURES / "two_station.json")[0] == 2


def test_verify_weights():
    code, text = cli("verify", "weights", "--input", FIXTURES / "golden3.json",
                     "--weights", "1,1,1", "--weights", "1/2,2,3")
    assert code == 0 and json.loads(text)[0]["passed"] is True


def test_verify_coupling():
    code, text = cli("verify", "coupling", "--input", FIXTURES / "golden3.json", "--horizon", 10_000,
                     "--replicas", 2)
    assert code == 0 and json.loads(text)[0]["statistic"] == 0


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "supermarket.cli", "decompose", "--input",
                           str(FIXTURES / "isolated.json")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout == "C_1={1} V_1=-1/10\nC_2={2} V_2=-1/2\n"
