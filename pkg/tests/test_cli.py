import json

import pytest

from spalf.cli import run
from spalf.exponent import ModelSpec
from spalf.paths import PathBundle

from helpers import brownian2d, coupled_model, death_model


@pytest.fixture
def files(tmp_path):
    out = {}
    for name, model in (("death", death_model()), ("coupled", coupled_model()), ("bm", brownian2d())):
        p = tmp_path / f"{name}.json"
        p.write_text(model.to_json())
        out[name] = str(p)
    paths = PathBundle.lattice(1, 10.0, [[(1, (1,)), (2, (-1,)), (3, (-1,))]])
    p = tmp_path / "paths.json"
    p.write_text(json.dumps(paths.to_dict()))
    out["paths"] = str(p)
    return out


def call(capsys, argv):
    code = run(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def report(capsys, argv):
    code, out, err = call(capsys, argv)
    assert code == 0, err
    return json.loads(out)


def test_exponent_eval(capsys, files):
    rep = report(capsys, ["exponent-eval", "--model", files["bm"], "--lam", "1,1", "--jacobian"])
    assert rep["command"] == "exponent-eval" and rep["model_hash"] == brownian2d().content_hash()
    assert rep["result"]["phi"][0] == pytest.approx(1.0)


def test_invert_and_classify(capsys, files):
    rep = report(capsys, ["invert", "--model", files["bm"], "--target", "1,1"])
    assert rep["result"]["converged"]
    rep = report(capsys, ["classify", "--model", files["bm"]])
    assert rep["result"]["class"] == "drifts-to-minus-infinity"
    rep = report(capsys, ["hypothesis", "--model", files["bm"]])
    assert rep["result"]["holds"]


def test_hit_on_path_file(capsys, files):
    rep = report(capsys, ["hit", "--paths", files["paths"], "--r", "1"])
    assert rep["result"]["s"] == [3.0]


def test_verifications(capsys, files, tmp_path):
    rep = report(capsys, ["verify-laplace", "--model", files["death"], "--r", "2", "--lam", "1", "--seed", "1",
                          "--n", "20000", "--horizon", "40"])
    assert rep["pass"] is True
    out = tmp_path / "fin.csv"
    code, _, _ = call(capsys, ["verify-finiteness", "--model", files["death"], "--r", "1", "--seed", "1",
                               "--n", "2000", "--format", "csv", "--output", str(out)])
    assert code == 0 and out.read_text().startswith("check,mc_mean,stderr")
    rep = report(capsys, ["verify-bivariate", "--model", files["coupled"], "--r", "1,1", "--lam", "1,0.5",
                          "--mu", "0.1,0.1;0.05,0", "--seed", "2", "--n", "20000"])
    assert rep["pass"] is True
    rep = report(capsys, ["verify-increments", "--model", files["coupled"], "--r", "1,1", "--r2", "1,0",
                          "--seed", "3", "--n", "5000", "--horizon", "60"])
    assert rep["pass"] is True


def test_ballot(capsys):
    rep = report(capsys, ["verify-ballot", "--d", "1", "--p", "1/3", "--n", "3", "--x", "-1"])
    assert rep["pass"] is True
    rep = report(capsys, ["verify-ballot", "--d", "2", "--k", "1", "--p", "1/2", "--n", "2,2"])
    assert rep["pass"] is True


def test_kemperman_commands(capsys, files):
    rep = report(capsys, ["verify-kemperman", "--model", files["death"], "--alpha", "1", "--lam", "1",
                          "--mu", "0.2", "--seed", "4", "--n", "50000"])
    assert rep["pass"] is True
    rep = report(capsys, ["kemperman-d1", "--a", "-1", "--q", "1", "--r", "1", "--t-grid", "0.5,1,2"])
    assert rep["pass"] is True
    rep = report(capsys, ["levy-measure-d1", "--a", "0", "--q", "1", "--t-grid", "1", "--lam-grid", "0.1,1"])
    assert rep["pass"] is True


def test_lamperti_and_example2d(capsys, files):
    rep = report(capsys, ["lamperti", "--model", files["coupled"], "--r", "2,1", "--seed", "5", "--n", "2000",
                          "--t-max", "100"])
    assert "pass" in rep
    code, out, _ = call(capsys, ["lamperti", "--model", files["coupled"], "--r", "2,1", "--seed", "5",
                                 "--replicate", "0", "--format", "csv", "--record-every", "50"])
    assert code == 0 and out.startswith("t,Z1,Z2,L1,L2")
    rep = report(capsys, ["example2d", "--a1", "-1", "--a2", "-1", "--a12", "0.5", "--a21", "0.5",
                          "--q1", "1", "--q2", "1", "--lam", "1,1"])
    assert rep["result"]["rho"] == pytest.approx(-0.5)


def test_lattice_approximation_flag(capsys, files):
    rep = report(capsys, ["verify-laplace", "--model", files["bm"], "--k", "10", "--r", "1,1", "--lam", "1,1",
                          "--seed", "6", "--n", "2000", "--horizon", "20"])
    assert rep["config"]["k"] == 10


def test_usage_errors(capsys, files):
    assert call(capsys, ["verify-laplace", "--model", files["death"], "--r", "1", "--lam", "1"])[0] == 1
    assert call(capsys, ["nonsense"])[0] == 1
    assert call(capsys, ["exponent-eval", "--model", files["bm"], "--lam", "1"])[0] == 1
    assert call(capsys, ["verify-laplace", "--model", files["bm"], "--r", "1,1", "--lam", "1,1",
                         "--seed", "1"])[0] == 1
    code, _, err = call(capsys, ["invert", "--model", "/nonexistent.json", "--target", "1"])
    assert code == 1 and "cannot read" in err


def test_failed_verification_exits_2(capsys, files, monkeypatch):
    from spalf import montecarlo

    monkeypatch.setattr(montecarlo, "agrees", lambda *a, **kw: False)
    code, out, _ = call(capsys, ["verify-laplace", "--model", files["death"], "--r", "1", "--lam", "1",
                                 "--seed", "1", "--n", "500"])
    assert code == 2 and json.loads(out)["pass"] is False
