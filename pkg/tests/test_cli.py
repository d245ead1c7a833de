import io
import json
import math
from importlib import resources

import jsonschema
import pytest

from vwspec.cli import run

SCHEMA = json.loads(resources.files("vwspec").joinpath("schemas/output.schema.json").read_text())
ROT = json.dumps({"kind": "rotation", "ell": 2 * math.pi})
O33 = json.dumps({"kind": "odd", "params": {"p_plus": 3, "q_minus": 3}})


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def doc(*argv):
    code, out, err = call(*argv)
    assert code == 0, err
    d = json.loads(out)
    jsonschema.validate(d, SCHEMA)
    return d


def test_clifford_check():
    assert doc("clifford", "check", "--json")["result"]["violations"] == []


def test_spectrum_d0_identity():
    rows = doc("spectrum", "d0", "--M", "identity", "--R", "1", "--count", "5", "--json")["result"]["rows"]
    vals = {round(r["eigenvalue"], 9): r["multiplicity"] for r in rows}
    assert vals[0.0] == 1
    assert round(2 ** 0.75, 9) in vals and round(-(2 ** 0.75), 9) in vals


def test_lattice_index():
    r = doc("lattice", "index", "--b1", "4", "--b2plus", "3", "--tt", "0", "--tK", "0", "--json")
    assert r["result"]["index"] == "0"


@pytest.mark.parametrize("argv", [
    ("clifford", "dump", "--json"),
    ("spectrum", "model1d", "--R", "4", "--count", "4", "--json"),
    ("spectrum", "circle", "--loop", ROT, "--R", "50", "--band", "2", "--nmax", "2", "--json"),
    ("berry", "--loop", ROT, "--R", "50", "--json"),
    ("flow", "--family", json.dumps({"kind": "random-pencil", "n": 8}), "--seed", "3", "--json"),
    ("lattice", "pontrjagin", "--form", O33, "--k", "4", "--json"),
    ("lattice", "search-t", "--form", O33, "--K", "[1,1,1,1,1,1]", "--w", "[2,1,1,0,0,0]", "--json"),
    ("lattice", "search-zeta", "--form", O33, "--K", "[1,0,0,1,1,0]", "--w", "[1,0,0,0,0,0]", "--json"),
    ("lattice", "criterion", "--n", "3", "--json"),
    ("lattice", "prop515", "--form", O33, "--F", "[1,0,0,0,0,0]", "--Sigma", "[1,0,0,1,1,0]", "--json"),
], ids=lambda a: " ".join(a[:2]))
def test_commands_validate_and_are_byte_stable(argv):
    d = doc(*argv)
    assert d["version"] and d["command"] == argv[0]
    assert call(*argv)[1] == call(*argv)[1]


def test_flow_matches_oracle():
    r = doc("flow", "--family", json.dumps({"kind": "random-pencil", "n": 10}), "--seed", "1", "--json")["result"]
    assert r["net"] == r["oracle_net"]


def test_berry_rotation():
    assert doc("berry", "--loop", ROT, "--R", "50", "--json")["result"]["alpha"] == pytest.approx(0.5, abs=1e-6)


def test_csv():
    code, out, _ = call("spectrum", "d0", "--R", "1", "--count", "3", "--csv")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "index,eigenvalue,multiplicity,residual" and len(lines) == 4


def test_out_file(tmp_path):
    p = tmp_path / "o.json"
    code, out, _ = call("clifford", "check", "--json", "--out", str(p))
    assert code == 0 and json.loads(p.read_text())["command"] == "clifford"


@pytest.mark.parametrize("argv,code", [
    (("spectrum", "d0", "--M", "1,2"), 2),
    (("lattice", "pontrjagin", "--form", json.dumps({"kind": "even", "N": 2}), "--k", "2"), 2),
    (("lattice", "pontrjagin", "--form", O33, "--k", "2"), 2),
    (("spectrum", "circle", "--loop", json.dumps({"kind": "constant", "ell": 1, "M": [1, 0, 0, 0, 1, 0, 0, 0, 0]})), 2),
    (("berry", "--loop", "{not json"), 2),
    (("clifford", "check", "--out", "/nonexistent/dir/x.json"), 4),
])
def test_exit_codes(argv, code):
    assert call(*argv)[0] == code
