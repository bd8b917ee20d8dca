import json

import numpy as np
import pytest

from glmsparse.cli import run
from glmsparse.matrix_io import RowMatrix, save_matrix, save_response


@pytest.fixture
def files(tmp_path):
    g = np.random.default_rng(0)
    a = g.standard_normal((300, 4))
    save_matrix(RowMatrix.from_dense(a), tmp_path / "A.mtx")
    save_response(a @ np.ones(4) + g.standard_normal(300), tmp_path / "b.txt")
    return tmp_path


def _report(path):
    return json.loads(path.read_text())


def test_sparsify_contract(files):
    out = files / "r.json"
    code = run(["sparsify", "--matrix", str(files / "A.mtx"), "--family", "ell_p", "--p", "1",
                "--eps", "0.3", "--seed", "7", "--report", str(out),
                "--output", str(files / "sp.json")])
    assert code == 0
    rep = _report(out)
    assert set(rep) == {"meta", "config", "inputs", "constants", "ledger", "result"}
    assert rep["result"]["nnz"] <= rep["result"]["M"]
    assert rep["ledger"]["loss-eval"] > 0
    for key in ("c_m", "delta_init_formula", "T_clamp"):
        assert key in rep["constants"]
    assert rep["config"]["s_min"] is not None and rep["config"]["seed"] == 7


def test_validate_contract(files):
    run(["sparsify", "--matrix", str(files / "A.mtx"), "--family", "gamma_p", "--p", "1",
         "--output", str(files / "sp.json"), "--report", str(files / "s.json")])
    out = files / "v.json"
    code = run(["validate", "--sparsifier", str(files / "sp.json"), "--matrix",
                str(files / "A.mtx"), "--points", "200", "--report", str(out)])
    rep = _report(out)
    assert "violation_fraction" in rep["result"]
    assert code == (0 if rep["result"]["passed"] else 2)
    code = run(["validate", "--sparsifier", str(files / "sp.json"), "--matrix",
                str(files / "A.mtx"), "--points", "20", "--eps", "1e-9",
                "--max-violation", "0", "--report", str(out)])
    assert code == 2


def test_budget_passthrough(files, capsys):
    assert run(["budget", "--m", "1e6", "--n", "100", "--r", "100", "--eps", "0.5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["result"]["quantum_leading_term"] == pytest.approx(2e6)
    assert rep["result"]["classical_term"] == 1e8


def test_solve_and_bench(files):
    out = files / "s.json"
    assert run(["solve", "--kind", "ell_p", "--p", "1", "--matrix", str(files / "A.mtx"),
                "--response", str(files / "b.txt"), "--report", str(out)]) == 0
    res = _report(out)["result"]
    assert res["objective_full"] <= 1.3 * res["reference_objective"]
    assert run(["bench", "--matrix", str(files / "A.mtx"), "--family", "ell_p", "--p", "1",
                "--trials", "2", "--points", "20", "--csv", str(files / "b.csv"),
                "--report", str(files / "bench.json")]) == 0
    lines = (files / "b.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("trial,seed")


def test_exit_codes(files, capsys):
    A = str(files / "A.mtx")
    assert run(["sparsify", "--matrix", A, "--eps", "2"]) == 2
    assert run(["sparsify", "--matrix", A, "--family", "ell_p"]) == 2
    assert run(["sparsify", "--matrix", A, "--s-min", "5", "--s-max", "1"]) == 2
    assert run(["sparsify", "--matrix", str(files / "missing.mtx")]) == 1
    (files / "bad.mtx").write_text("not a matrix\n")
    assert run(["sparsify", "--matrix", str(files / "bad.mtx")]) == 1
    assert run(["budget", "--m", "5", "--n", "10", "--r", "1", "--eps", "0.5"]) == 1
    with pytest.raises(SystemExit) as e:
        run(["sparsify", "--bogus"])
    assert e.value.code == 2


def test_seed_from_environment(files, monkeypatch):
    monkeypatch.setenv("GLMSPARSE_SEED", "41")
    out = files / "r.json"
    run(["sparsify", "--matrix", str(files / "A.mtx"), "--report", str(out)])
    assert _report(out)["config"]["seed"] == 41


def test_pretty(files, capsys):
    assert run(["budget", "--m", "100", "--n", "10", "--r", "2", "--eps", "0.5", "--pretty"]) == 0
    out = capsys.readouterr().out
    assert "result.quantum_total" in out
