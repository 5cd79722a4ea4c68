import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from srnstat.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from srnstat.model import format_model, parse_model

from conftest import MODELS

TOGGLE = str(MODELS / "toggle.rxn")
UNI = str(MODELS / "schlogl_unimodal.rxn")
PARITY = str(MODELS / "parity.rxn")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_solve_ta_writes_csv_and_json(capsys, tmp_path):
    out = tmp_path / "ta"
    code, stdout, _ = run(capsys, "solve", "--model", TOGGLE, "--scheme", "ta", "--trunc-w", "(S1+S2)^6",
                          "--trunc-r", str(12 ** 6), "--reentry", "state:0,11", "--out", str(out))
    assert code == EXIT_OK and stdout == ""
    rows = _rows((tmp_path / "ta.csv").read_text())
    assert rows[0][:2] == ["S1", "S2"]
    assert sum(float(r[-1]) for r in rows[1:]) == pytest.approx(1.0)
    rep = json.loads((tmp_path / "ta.json").read_text())
    assert rep["scheme"] == "ta"
    names = {e["name"]: e for e in rep["entries"]}
    assert names["outflow"]["rigor"] == "heuristic"


def test_solve_outputs_are_byte_identical(capsys, tmp_path):
    args = ["solve", "--model", UNI, "--scheme", "ita", "--trunc-w", "S", "--trunc-r", "40", "--moment-c", "20"]
    for k in (1, 2):
        assert main(args + ["--out", str(tmp_path / f"run{k}")]) == EXIT_OK
    capsys.readouterr()
    assert (tmp_path / "run1.csv").read_bytes() == (tmp_path / "run2.csv").read_bytes()
    assert (tmp_path / "run1.json").read_bytes() == (tmp_path / "run2.json").read_bytes()


@pytest.mark.parametrize("scheme,extra", [
    ("bdp", []),
    ("bdp", ["--moment-c", "20"]),
    ("ldqbdp", ["--levels", "S"]),
    ("lp", ["--moment-c", "20"]),
    ("ilp", ["--moment-c", "20"]),
])
def test_solve_schemes_on_unimodal(capsys, scheme, extra):
    code, stdout, err = run(capsys, "solve", "--model", UNI, "--scheme", scheme, "--trunc-w", "S",
                            "--trunc-r", "30", *extra)
    assert code == EXIT_OK
    rows = _rows(stdout)
    assert len(rows) == 31
    json.loads(err)


def test_ilp_without_moment_bound_is_a_usage_error(capsys):
    code, _, err = run(capsys, "solve", "--model", UNI, "--scheme", "ilp", "--trunc-w", "S", "--trunc-r", "30")
    assert code == EXIT_USAGE
    assert "--moment-c" in err


@pytest.mark.parametrize("argv", [
    ["solve", "--model", UNI],
    ["solve", "--model", UNI, "--scheme", "magic", "--trunc-w", "S", "--trunc-r", "30"],
    ["solve", "--model", "missing.rxn", "--scheme", "ta", "--trunc-w", "S", "--trunc-r", "30"],
    ["solve", "--model", UNI, "--scheme", "ta"],
    ["solve", "--model", UNI, "--scheme", "ldqbdp", "--trunc-w", "S", "--trunc-r", "30"],
    ["bounds", "--model", UNI, "--scheme", "ita", "--trunc-w", "S", "--trunc-r", "40"],
    ["bounds", "--model", UNI, "--scheme", "ita", "--trunc-w", "S", "--trunc-r", "40", "--moment-c", "20",
     "--objective", "median"],
    ["drift-check", "--model", UNI, "--v", "S", "--F", "S 20", "--trunc-w", "S", "--trunc-r", "100"],
    [],
])
def test_usage_errors(capsys, argv):
    with pytest.raises(SystemExit) as info:
        sys.exit(main(argv))
    assert info.value.code == EXIT_USAGE


def test_bad_model_file_is_a_usage_error(capsys, tmp_path):
    bad = tmp_path / "bad.rxn"
    bad.write_text("species A\nreaction A -> : 1\n")
    code, _, err = run(capsys, "solve", "--model", str(bad), "--scheme", "ta", "--trunc-w", "A", "--trunc-r", "5")
    assert code == EXIT_USAGE and "line 2" in err


def test_singular_truncation_is_a_numerical_failure(capsys, tmp_path):
    net = tmp_path / "death.rxn"
    net.write_text(format_model(parse_model("species A\nreaction A -> 0 : A")))
    code, _, err = run(capsys, "solve", "--model", str(net), "--scheme", "ita", "--trunc-w", "A",
                       "--trunc-r", "3", "--moment-c", "1")
    assert code == EXIT_NUMERIC
    assert "numerical failure" in err


def test_bounds_objectives(capsys):
    base = ["bounds", "--model", UNI, "--trunc-w", "S", "--trunc-r", "40", "--moment-c", "20"]
    code, out, _ = run(capsys, *base, "--scheme", "ita", "--objective", "state:17")
    assert code == EXIT_OK
    (_, lo, hi), = _rows(out)[1:]
    assert 0 < float(lo) <= float(hi) < 1
    code, out, _ = run(capsys, *base, "--scheme", "ilp", "--objective", "mass")
    lo, hi = map(float, _rows(out)[1][1:])
    assert 1 - 20 / 40 - 1e-12 <= lo <= hi <= 1 + 1e-12
    code, out, _ = run(capsys, *base, "--scheme", "bdp")
    assert code == EXIT_OK


def test_marginal_bounds(capsys):
    code, out, err = run(capsys, "bounds", "--model", TOGGLE, "--scheme", "ita", "--trunc-w", "(S1+S2)^6",
                         "--trunc-r", str(24 ** 6), "--moment-c", "1.8e7", "--objective", "marginal:1")
    assert code == EXIT_OK
    rows = _rows(out)
    assert rows[0] == ["S2", "lower", "upper"]
    assert all(float(lo) <= float(hi) for _, lo, hi in rows[1:])
    rep = json.loads(err)
    assert rep["scheme"] == "ita-marginal"


def test_classes_on_parity(capsys):
    code, out, _ = run(capsys, "classes", "--model", PARITY, "--trunc-w", "S1+S2", "--trunc-r", "8")
    assert code == EXIT_OK
    assert "closed classes: 2" in out


def test_classes_from_file(capsys, tmp_path):
    f = tmp_path / "states.csv"
    f.write_text("S1,S2\n0,0\n2,0\n1,0\n")
    code, out, _ = run(capsys, "classes", "--model", PARITY, "--trunc-file", str(f))
    assert code == EXIT_OK and "truncation: 3 states" in out


def test_drift_check(capsys, tmp_path):
    code, out, _ = run(capsys, "drift-check", "--model", UNI, "--v", "S", "--F", "S < 20", "--trunc-w", "S",
                       "--trunc-r", "3000", "--beta", "28", "--reentry", "state:0", "--bound-r", "40")
    assert code == EXIT_OK
    doc = json.loads(out)
    vals = {e["name"]: e["value"] for e in doc["entries"]}
    assert vals["ta_tv_bound_refined"] <= vals["ta_tv_bound"]
    assert "finite-set" in doc["entries"][0]["note"]
    assert doc["F"] == [[i] for i in range(20)]
    # F = {0} leaves positive drift outside F
    code, _, err = run(capsys, "drift-check", "--model", UNI, "--v", "S", "--F", "S < 1", "--trunc-w", "S",
                       "--trunc-r", "3000")
    assert code == EXIT_USAGE and "outside F" in err


def test_simulate_command(capsys, tmp_path):
    args = ["simulate", "--model", TOGGLE, "--x0", "0,0", "--t-final", "50", "--seed", "4"]
    code, a, _ = run(capsys, *args)
    assert code == EXIT_OK
    _, b, _ = run(capsys, *args)
    assert a == b
    rows = _rows(a)
    assert rows[0] == ["S1", "S2", "fraction"]
    assert np.sum([float(r[2]) for r in rows[1:]]) == pytest.approx(1.0)
    code, _, err = run(capsys, *args, "--jump-cap", "10")
    assert code == EXIT_NUMERIC and "jump cap" in err


def test_compare_command(capsys, tmp_path):
    out = tmp_path / "grid.csv"
    args = ["compare", "--case", "schlogl-unimodal", "--schemes", "bdp,ta-last", "--trunc-r", "30,40"]
    assert main(args + ["--out", str(out)]) == EXIT_OK
    rows = _rows(out.read_text())
    assert [r[:2] for r in rows[1:]] == [["bdp", "30"], ["bdp", "40"], ["ta-last", "30"], ["ta-last", "40"]]
    code, _, err = run(capsys, *args[:4], "ldqbdp")
    assert code == EXIT_USAGE and "not part of" in err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "srnstat", "classes", "--model", PARITY, "--trunc-w", "S1+S2",
                          "--trunc-r", "4"], capture_output=True, text=True)
    assert res.returncode == 0 and "closed classes: 2" in res.stdout
    res = subprocess.run([sys.executable, "-m", "srnstat", "solve"], capture_output=True, text=True)
    assert res.returncode == EXIT_USAGE
