import csv
import io
import json
import math
import subprocess
import sys

import pytest

from magnetolab import flow
from magnetolab.cli import dumps, jsonable, run
from magnetolab.config import system_from_dict
from magnetolab.geometry import PhasePoint


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_sbounds(capsys):
    code, out, _ = call(capsys, "sbounds", "--norm-beta", "0", "--min-f", "-1")
    assert code == 0 and json.loads(out)["s_minus"] == 1.0
    code, out, _ = call(capsys, "sbounds", "--norm-beta", "0", "--min-f", "1")
    assert json.loads(out)["s_minus"] == "inf"


def test_sbounds_missing_data(capsys):
    code, _, err = call(capsys, "sbounds", "--norm-beta", "1")
    assert code == 2 and "min-f" in err


def test_unknown_subcommand(capsys):
    assert call(capsys, "frobnicate")[0] == 2
    assert call(capsys, "simulate", "--system", "sphere-symmetric")[0] == 2


def test_simulate_zero_time(capsys):
    code, out, _ = call(capsys, "simulate", "--system", "sphere-symmetric", "--init", "0.1,0.2,1,0",
                        "--time", "0")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["t", "chart", "q1", "q2", "v1", "v2", "rho"] and len(rows) == 2
    assert float(rows[1][2]) == 0.1 and float(rows[1][4]) == 1.0


def test_simulate_writes_file_and_is_deterministic(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        code, _, _ = call(capsys, "simulate", "--system", "genus-symmetric", "--init", "0.1,1.0,0.6,0.8",
                          "--time", "1.0", "--dt", "0.1", "--out", str(p))
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert len(paths[0].read_text().splitlines()) == 12


def test_simulate_bad_init(capsys):
    code, _, err = call(capsys, "simulate", "--system", "sphere-symmetric", "--init", "0.1,0.2", "--time", "1")
    assert code == 2 and "configuration error" in err


def test_simulate_out_of_domain(capsys):
    code, _, _ = call(capsys, "simulate", "--system", "genus-symmetric", "--init", "0,-1,1,0", "--time", "1")
    assert code == 2


def test_verify_appendix(capsys):
    code, out, _ = call(capsys, "verify-appendix", "--s", "1", "--samples", "100", "--seed", "42")
    rep = json.loads(out)
    assert code == 0 and rep["passed"] and rep["max_residual"] < 1e-8
    assert call(capsys, "verify-appendix", "--s", "1", "--samples", "100", "--seed", "42")[1] == out


def test_verify_appendix_tolerance_failure(capsys):
    code, out, _ = call(capsys, "verify-appendix", "--s", "1", "--samples", "50", "--tolerance", "1e-30")
    assert code == 1 and not json.loads(out)["passed"]


def test_verify_appendix_rejects_nonpositive_s(capsys):
    assert call(capsys, "verify-appendix", "--s", "0")[0] == 2


def test_certify_exit_codes(capsys):
    code, out, _ = call(capsys, "certify", "--system", "genus-symmetric", "--s", "0.5")
    assert code == 0 and json.loads(out)["verdict"] == "positive"
    code, out, _ = call(capsys, "certify", "--system", "genus-symmetric", "--s", "0.9,1.1")
    doc = json.loads(out)
    assert code == 1 and doc["kind"] == "certificate-grid"
    assert [c["verdict"] == "positive" for c in doc["certificates"]] == [True, False]


def test_malformed_orbit_json(capsys):
    code, _, err = call(capsys, "index", "--system", "sphere-symmetric", "--orbit", '{"p0": [1,')
    assert code == 2 and "line 1" in err and "column" in err


def test_index_degenerate_orbit(tmp_path, capsys):
    doc = {"surface": {"kind": "flat-torus"}, "f": {"type": "constant", "value": 0.0}, "s": 0.0}
    spath = tmp_path / "flat.json"
    spath.write_text(json.dumps(doc))
    sysm = system_from_dict(doc)
    orb = flow.ClosedOrbit(PhasePoint.make(sysm.surface, 0, [0.1, 0.3], [1.0, 0.0]), 1.0, 0.0, {})
    code, _, err = call(capsys, "index", "--system", str(spath), "--orbit", json.dumps(orb.to_json()))
    assert code == 3 and "numerical failure" in err


def test_index_on_ray_orbit(capsys):
    from magnetolab.config import builtin
    orb = flow.ray_orbit(builtin("genus-symmetric"))
    code, out, _ = call(capsys, "index", "--system", "genus-symmetric", "--orbit", json.dumps(orb.to_json()),
                        "--iterates", "3")
    doc = json.loads(out)
    assert code == 0 and doc["type"] in ("hyperbolic", "negative-hyperbolic") and len(doc["table"]) == 3


def test_complex_checks(capsys):
    orbits = json.dumps([{"name": "x", "mu": 2, "kind": "hyperbolic", "period": 1.0}])
    code, out, _ = call(capsys, "complex", "--orbits", orbits, "--k-max", "3", "--morse", "sphere",
                        "--check", "acyclic")
    assert code == 0 and json.loads(out)["feasible"] is False
    code, out, _ = call(capsys, "complex", "--check", "mb=3,3,3", "--equivariant")
    assert code == 0 and json.loads(out)["feasible"] is False
    code, _, _ = call(capsys, "complex", "--orbits", orbits, "--k-max", "3", "--check", "target=2:x")
    assert code == 2
    code, _, _ = call(capsys, "complex", "--check", "acyclic")
    assert code == 2


def test_complex_bv(capsys):
    orbits = json.dumps([{"name": "x", "mu": 1, "kind": "elliptic", "delta": math.sqrt(2) - 1, "period": 1.0}])
    code, out, _ = call(capsys, "complex", "--orbits", orbits, "--k-max", "6", "--morse", "sphere",
                        "--check", 'bv={"cycle": ["x^1+", "x^2+"]}', "--no-search")
    rep = json.loads(out)
    assert code == 0 and rep["verdict"] == "contradiction" and rep["check"] == "bv"


def test_ql_torus_roundtrip(capsys, tmp_path):
    code, out, _ = call(capsys, "ql-torus", "--radius", "0.2", "--width", "0.1")
    doc = json.loads(out)
    assert code == 0 and doc["meta"]["epsilon"] == 5.0
    p = tmp_path / "ql.json"
    p.write_text(out)
    code, out, _ = call(capsys, "sbounds", "--system", str(p))
    assert code == 0
    assert call(capsys, "ql-torus", "--radius", "0.3", "--width", "0.25")[0] == 2


def test_plot_byte_stable(tmp_path, capsys):
    res = tmp_path / "traj.csv"
    call(capsys, "simulate", "--system", "sphere-symmetric", "--init", "0.1,0.2,1,0", "--time", "2",
         "--dt", "0.05", "--out", str(res))
    outs = []
    for i in range(2):
        p = tmp_path / f"t{i}.svg"
        assert call(capsys, "plot", str(res), "--kind", "trajectory", "--out", str(p))[0] == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1] and outs[0].lstrip().startswith(b"<?xml")
    assert call(capsys, "plot", str(res), "--kind", "grading")[0] == 2


def test_plot_certificate(tmp_path, capsys):
    res = tmp_path / "cert.json"
    call(capsys, "certify", "--system", "genus-symmetric", "--s", "0.5,1.2", "--out", str(res))
    code, out, _ = call(capsys, "plot", str(res), "--kind", "certificate")
    assert code == 0 and "<svg" in out


def test_jsonable():
    from fractions import Fraction
    import numpy as np
    doc = jsonable({"a": math.inf, "b": Fraction(2, 3), "c": np.float64(0.5), "d": (1, np.int64(2))})
    assert doc == {"a": "inf", "b": "2/3", "c": 0.5, "d": [1, 2]}
    text = dumps({"z": 1, "a": 2})
    assert text.index('"a"') < text.index('"z"')


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "magnetolab.cli", "sbounds", "--norm-beta", "2", "--min-f", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["s_plus"] == 1.0


@pytest.mark.parametrize("flag", ["--seed", "-v"])
def test_common_flags(flag, capsys):
    args = ["sbounds", "--norm-beta", "0", "--min-f", "-1", flag] + (["3"] if flag == "--seed" else [])
    assert call(capsys, *args)[0] == 0
