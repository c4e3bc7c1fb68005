import json
import math
from pathlib import Path

import pytest

from chainkit.cli import INVALID, NOT_CONVERGED, OK, main
from chainkit.model import dump_model, load_model

MODELS = Path(__file__).resolve().parent.parent / "models"


def run(args, tmp_path, name="out.csv"):
    out = tmp_path / name
    status = main(args + ["--out", str(out)])
    return status, out.read_text() if out.exists() else ""


def footer(text):
    rows = dict(line.split(",", 1) for line in text.strip().splitlines() if line.count(",") == 1)
    return rows


def test_law_gambler_footer(tmp_path):
    status, text = run(["law", "--model", str(MODELS / "gambler.json"), "--steps", "10", "--tol", "1e-12"], tmp_path)
    assert status == OK
    assert "epsilon,0.0\n" in text
    rows = footer(text)
    assert rows["converged"] == "true"
    assert int(rows["truncation_size"]) <= 21


def test_simulate_twice_byte_identical(tmp_path):
    args = ["simulate", "--model", str(MODELS / "twostate.json"), "--paths", "3", "--seed", "7", "--tmax", "1"]
    s1, a = run(args, tmp_path, "a.csv")
    s2, b = run(args, tmp_path, "b.csv")
    assert s1 == s2 == OK
    assert a == b and a.startswith("path,index,time,x0\n")


def test_law_purebirth_not_converged(tmp_path):
    status, text = run(["law", "--model", str(MODELS / "purebirth.json"), "--time", "2", "--tol", "1e-3",
                        "--max-states", "10000"], tmp_path)
    assert status == NOT_CONVERGED
    rows = footer(text)
    assert rows["converged"] == "false"
    assert float(rows["epsilon"]) > 1e-3
    assert int(rows["truncation_size"]) > 0


def test_simulate_explosive_status(tmp_path):
    status, text = run(["simulate", "--model", str(MODELS / "purebirth.json"), "--tmax", "10",
                        "--max-jumps", "40"], tmp_path)
    assert status == NOT_CONVERGED
    assert "jump-budget" in text


COMMANDS = [
    ["simulate", "--model", "gambler.json", "--paths", "4", "--steps", "30", "--seed", "3"],
    ["law", "--model", "twostate.json", "--time", "1", "--trunc", "0:1"],
    ["exit", "--model", "gambler.json", "--domain-file", "gambler_interior.domain.json"],
    ["exit", "--model", "gambler.json", "--domain-file", "gambler_interior.domain.json", "--steps", "50"],
    ["exit", "--model", "twostate.json", "--domain-file", "twostate_zero.domain.json", "--time", "3",
     "--bins", "6"],
    ["stationary", "--model", "birthdeath.json", "--trunc", "0:40"],
    ["classify", "--model", "gambler.json", "--trunc", "0:20"],
    ["lyapunov", "--model", "birthdeath.json", "--cert", "bd_positive.cert.json", "--trunc", "0:40"],
    ["skeleton", "--model", "twostate.json", "--time", "0.5", "--trunc", "0:1"],
]


def resolve(args, tmp_path):
    (tmp_path / "twostate_zero.domain.json").write_text('{"states": [0]}')
    out = []
    for a in args:
        if a.endswith(".json"):
            p = MODELS / a
            out.append(str(p if p.exists() else tmp_path / a))
        else:
            out.append(a)
    return out


@pytest.mark.parametrize("args", COMMANDS, ids=[c[0] + str(i) for i, c in enumerate(COMMANDS)])
def test_every_command_deterministic(args, tmp_path):
    args = resolve(args, tmp_path)
    s1, a = run(args, tmp_path, "a.out")
    s2, b = run(args, tmp_path, "b.out")
    assert s1 == s2 == OK
    assert a == b and a


def test_outputs_parse(tmp_path):
    _, text = run(resolve(COMMANDS[2], tmp_path), tmp_path)
    rows = footer(text.split("# summary\n")[1])
    assert float(rows["exit_probability"]) == pytest.approx(1.0, abs=1e-9)
    assert float(rows["mean_exit_time"]) == pytest.approx(100.0, rel=1e-9)
    _, text = run(resolve(COMMANDS[5], tmp_path), tmp_path)
    summary = json.loads((tmp_path / "out.csv.json").read_text())
    assert summary["classes"][0]["residual"] < 1e-10
    _, text = run(resolve(COMMANDS[7], tmp_path), tmp_path)
    assert json.loads(text)["verdict"].startswith("holds")
    _, text = run(resolve(COMMANDS[6], tmp_path), tmp_path)
    assert len(json.loads(text)["classes"]) == 3
    _, text = run(resolve(COMMANDS[8], tmp_path), tmp_path)
    first = text.splitlines()[1].split(",")
    assert float(first[2]) == pytest.approx((1 + math.exp(-1)) / 2, abs=1e-9)


def test_stationary_json_to_stdout(capsys):
    assert main(["stationary", "--model", str(MODELS / "twostate.json"), "--trunc", "0:1"]) == OK
    text = capsys.readouterr().out
    csv, js = text.split("\n\n", 1)
    assert csv.splitlines()[1] == "0,0,0.5"
    assert json.loads(js)["classes"][0]["method"] == "direct"


@pytest.mark.parametrize("content", ["{not json", '{"kind": "gambler", "params": {"a": 1.5, "K": 4}}',
                                     '{"kind": "explicit-dt", "rows": [[0, [[0, 0.5], [1, 0.6]]]]}',
                                     '{"kind": "unicorn"}'])
def test_invalid_models_status_2(content, tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert main(["law", "--model", str(path), "--steps", "1", "--trunc", "0:1"]) == INVALID
    assert capsys.readouterr().err.startswith("error:")


def test_usage_errors(tmp_path, capsys):
    tw = str(MODELS / "twostate.json")
    assert main(["law", "--model", tw, "--steps", "1", "--trunc", "0:1"]) == INVALID
    assert main(["law", "--model", tw, "--time", "1"]) == INVALID
    assert main(["law", "--model", tw, "--time", "1", "--trunc", "a:b"]) == INVALID
    assert main(["skeleton", "--model", str(MODELS / "gambler.json"), "--time", "1", "--trunc", "0:2"]) == INVALID
    assert main(["law", "--model", str(tmp_path / "missing.json"), "--time", "1", "--trunc", "0:1"]) == INVALID


def test_trunc_file_overrides_box(tmp_path):
    tf = tmp_path / "t.json"
    tf.write_text("[[0]]")
    _, text = run(["law", "--model", str(MODELS / "twostate.json"), "--time", "1", "--trunc", "0:1",
                   "--trunc-file", str(tf)], tmp_path)
    assert footer(text)["truncation_size"] == "1"


@pytest.mark.parametrize("name", ["gambler", "twostate", "purebirth", "birthdeath"])
def test_model_round_trip(name, tmp_path):
    m = load_model(MODELS / f"{name}.json")
    p = tmp_path / "m.json"
    p.write_text(dump_model(m))
    m2 = load_model(p)
    for x in range(2 if name == "twostate" else 5):
        assert m.row(x) == m2.row(x)
    assert dict(m.gamma) == dict(m2.gamma)
