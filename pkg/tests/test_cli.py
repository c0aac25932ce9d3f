import json

import numpy as np
import pytest

from momderiv.cli import main
from momderiv.data import write_csv
from momderiv.montecarlo import LinearLogisticDGP, dgp_sample


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_csv(dgp_sample(1500, 2), root / "d.csv", intercept=True)
    write_csv(LinearLogisticDGP(0, 1, 1, 0).sample(1500, 2), root / "loc.csv", intercept=True)
    return root


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def common(files, name="d.csv"):
    return ["--data", str(files / name), "--response", "y", "--intercept"]


def test_qr_deriv_json(capsys, files):
    code, out, _ = run(capsys, ["qr-deriv", "--u", "0.5", "--h", "0.9", *common(files)])
    assert code == 0
    payload = json.loads(out)
    assert payload["schema_version"] == "1.0"
    assert len(payload["result"]["theta_u"]) == 2
    cfg = payload["config"]
    assert cfg["kernel"] == "triangular" and cfg["seed"] == 0 and cfg["method"] == "moment"


def test_qr_deriv_variance_and_methods(capsys, files):
    code, out, _ = run(capsys, ["qr-deriv", "--u", "0.5", "--h", "0.9", "--variance", "200",
                                *common(files)])
    assert code == 0 and len(json.loads(out)["result"]["variance"]) == 2
    for method in ("smoothed", "aqr"):
        code, out, _ = run(capsys, ["qr-deriv", "--u", "0.5", "--h", "0.2", "--method", method,
                                    *common(files)])
        assert code == 0 and len(json.loads(out)["result"]["theta_u"]) == 2


def test_fits(capsys, files):
    code, out, _ = run(capsys, ["qr-fit", "--u", "0.5", *common(files)])
    assert code == 0 and json.loads(out)["result"]["converged"]
    code, out, _ = run(capsys, ["dr-fit", "--u", "1.0", *common(files)])
    assert code == 0


def test_dr_deriv(capsys, files):
    code, out, _ = run(capsys, ["dr-deriv", "--u", "1.0", "--h", "0.3", "--variance",
                                "--u-lower", "-3", "--u-upper", "5", *common(files, "loc.csv")])
    res = json.loads(out)
    assert code == 0 and res["config"]["u_lower"] == -3
    assert len(res["result"]["variance"]) == 2


def test_density_and_curve(capsys, files, tmp_path):
    grid = tmp_path / "curve.csv"
    code, out, _ = run(capsys, ["density", "--model", "qr", "--y", "1", "--x", "1,1", "--h", "0.7",
                                "--grid-out", str(grid), *common(files)])
    assert code == 0 and json.loads(out)["result"]["density"] > 0
    rows = grid.read_text().splitlines()
    assert rows[0] == "u,y,density" and len(rows) > 100
    code, out, _ = run(capsys, ["density", "--model", "dr", "--u", "1", "--x", "1,1", "--h", "0.3",
                                *common(files, "loc.csv")])
    assert code == 0 and "negative" in json.loads(out)["result"]


def test_applications(capsys, files):
    code, out, _ = run(capsys, ["density-quantile", "--u", "0.5", "--x", "1,1", "--h", "0.7",
                                "--powell", *common(files)])
    assert code == 0 and json.loads(out)["result"]["density_quantile"] > 0
    code, out, _ = run(capsys, ["auction", "--u", "0.5", "--bidders", "4", "--x", "1,1", "--h", "0.7",
                                *common(files)])
    assert code == 0
    code, out, _ = run(capsys, ["qpe", "--tau", "0.5", "--x", "1,1", "--h", "0.3",
                                *common(files, "loc.csv")])
    assert code == 0 and len(json.loads(out)["result"]["qpe"]) == 2
    code, out, _ = run(capsys, ["cdf", "--y", "1", "--x", "1,1", *common(files)])
    assert code == 0 and 0 < json.loads(out)["result"]["cdf"] < 1


def test_simulate_csv(capsys):
    code, out, _ = run(capsys, ["simulate", "--table", "1", "--reps", "2", "--seed", "1",
                                "--n", "200,300"])
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0].startswith("u,n,h,bias_0")
    assert len(lines) == 1 + 9 * 2


def test_threads_env(capsys, monkeypatch):
    monkeypatch.setenv("MOMDERIV_THREADS", "2")
    code, out, _ = run(capsys, ["simulate", "--n", "100", "--h", "1.0", "--reps", "2"])
    assert code == 0 and len(out.strip().splitlines()) == 2


def test_usage_errors(capsys, files):
    assert run(capsys, ["qr-deriv", "--u", "0.5", *common(files)])[0] == 1
    assert run(capsys, ["qr-deriv", "--u", "0.5", "--h", "1", "--bogus", *common(files)])[0] == 1
    assert run(capsys, ["nope"])[0] == 1
    assert run(capsys, ["qr-fit", "--u", "0.5", "--data", "/no/file.csv", "--response", "y"])[0] == 1
    assert run(capsys, ["auction", "--u", "0.5", "--bidders", "2", "--x", "1,1", "--h", "1",
                        *common(files)])[0] == 1
    assert run(capsys, ["density", "--y", "1", "--x", "1", "--h", "1", *common(files)])[0] == 1


def test_numerical_failure(capsys, files):
    code, _, err = run(capsys, ["dr-fit", "--u", "1000", *common(files)])
    assert code == 2 and "numerical failure" in err


def test_arbitrary_csv_end_to_end(capsys, tmp_path):
    rng = np.random.default_rng(0)
    n = 800
    educ = rng.integers(8, 20, n).astype(float)
    exper = rng.uniform(0, 40, n)
    wage = 1.0 + 0.08 * educ + 0.01 * exper + 0.5 * rng.logistic(size=n)
    f = tmp_path / "wages.csv"
    f.write_text("lwage,educ,exper\n" + "\n".join(f"{a},{b},{c}" for a, b, c in zip(wage, educ, exper)))
    base = ["--data", str(f), "--response", "lwage", "--intercept"]
    assert run(capsys, ["qr-fit", "--u", "0.5", *base])[0] == 0
    assert run(capsys, ["qr-deriv", "--u", "0.5", "--h", "0.5", *base])[0] == 0
    curve = tmp_path / "curve.csv"
    code, _, _ = run(capsys, ["density", "--x", "1,12,10", "--h", "0.5", "--grid-out", str(curve), *base])
    assert code == 0 and curve.exists()
