import json
import os

import numpy as np
import pytest

from depthpca import _io
from depthpca.cli import main
from depthpca.diagnostics import planted_outlier_data
from oracles import halfspace_depth_bruteforce


def _write(path, x, headers=None):
    headers = headers or [f"v{j + 1}" for j in range(x.shape[1])]
    _io.write_csv(str(path), headers, x.tolist())
    return str(path)


def _cloud(seed=0, n=40, p=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, p)) @ np.diag(np.linspace(2.0, 0.5, p))


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def _report(out):
    with open(os.path.join(out, "report.json"), encoding="utf-8") as fh:
        return json.load(fh)


def test_pca_scm_square(tmp_path):
    sq = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    data = _write(tmp_path / "sq.csv", sq)
    out = str(tmp_path / "out")
    assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "scm", "--k", "1"]) == 0
    rep = _report(out)
    assert rep["command"] == "pca"
    np.testing.assert_allclose(rep["payload"]["eigenvalues"], [0.5, 0.5], atol=1e-15)
    _, rows = _read_csv(os.path.join(out, "eigen.csv"))
    np.testing.assert_allclose([float(r[1]) for r in rows], [0.5, 0.5], atol=1e-15)
    for name in rep["payload"]["files"]:
        assert os.path.exists(os.path.join(out, name))


def test_pca_variance_table(tmp_path):
    data = _write(tmp_path / "x.csv", _cloud(1, p=4))
    out = str(tmp_path / "out")
    assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "dcm-projection",
                 "--seed", "3", "--q-max", "3"]) == 0
    _, rows = _read_csv(os.path.join(out, "variance.csv"))
    vals = [float(r[1]) for r in rows]
    assert len(vals) == 3 and np.all(np.diff(vals) <= 0)


def test_depth_command(tmp_path):
    x = np.random.default_rng(2).standard_normal((25, 2))
    data = _write(tmp_path / "x.csv", x)
    out = str(tmp_path / "out")
    assert main(["depth", "--input", data, "--output-dir", out, "--seed", "0"]) == 0
    header, rows = _read_csv(os.path.join(out, "depth.csv"))
    assert header == ["v1", "v2", "depth", "htped", "rank_1", "rank_2"]
    vals = np.array(rows, dtype=float)
    want = np.array([halfspace_depth_bruteforce(x, pt) for pt in x])
    np.testing.assert_allclose(vals[:, 2], want, atol=1e-12)
    rep = _report(out)["payload"]
    deepest = rep["deepest_row"] - 1
    assert vals[deepest, 3] == vals[:, 3].min()
    assert np.max(np.linalg.norm(vals[:, 4:], axis=1)) <= rep["max_depth"] + 1e-12


def test_simulate_fse_smoke(tmp_path):
    out = str(tmp_path / "out")
    assert main(["simulate-fse", "--output-dir", out, "--seed", "1", "--reps", "1", "--sizes", "20",
                 "--estimator", "scm"]) == 0
    header, rows = _read_csv(os.path.join(out, "fse.csv"))
    assert header[4] == "estimator"
    assert sorted(r[4] for r in rows) == ["sample-cov", "scm"]
    assert all(np.isfinite(float(r[6])) for r in rows)


def test_are_degenerate_cell_is_recorded(tmp_path):
    out = str(tmp_path / "out")
    assert main(["are", "--output-dir", out, "--seed", "1", "--families", "normal", "--rho", "0.5,1",
                 "--estimator", "scm", "--mc-n", "20000"]) == 0
    cells = _report(out)["payload"]["cells"]
    assert len(cells) == 2
    good, bad = cells
    assert good["status"] == "ok" and np.isfinite(good["are"])
    assert bad["status"].startswith("DegenerateModel")


def test_influence_grid(tmp_path):
    out = str(tmp_path / "out")
    assert main(["influence-grid", "--output-dir", out, "--seed", "2", "--estimator", "sample-cov,dcm-mahalanobis",
                 "--resolution", "11", "--limit", "6", "--mc-n", "20000"]) == 0
    meta = _report(out)["payload"]["estimators"]
    assert meta["sample-cov"]["at_center"] == pytest.approx(0.0, abs=1e-12)
    assert meta["dcm-mahalanobis"]["at_center"] == pytest.approx(0.0, abs=1e-12)
    assert meta["sample-cov"]["grows_at_boundary"]
    assert not meta["dcm-mahalanobis"]["grows_at_boundary"]
    _, rows = _read_csv(os.path.join(out, "influence_grid.csv"))
    grid = np.array([float(r[3]) for r in rows if r[0] == "sample-cov"]).reshape(11, 11)
    np.testing.assert_allclose(grid, grid[::-1, ::-1], rtol=1e-10, atol=1e-12)


def test_influence_grid_needs_p2(tmp_path, capsys):
    code = main(["influence-grid", "--output-dir", str(tmp_path), "--seed", "1",
                 "--sigma", "1,0,0;0,1,0;0,0,1"])
    assert code == 2
    assert capsys.readouterr().err.startswith("error[InvalidInput]:")


@pytest.mark.parametrize("argv", [
    ["pca"],
    ["are", "--rho", "0.5"],
    ["are", "--seed", "1", "--rho", "1.5"],
    ["simulate-fse", "--seed", "1", "--reps", "0"],
    ["simulate-fse", "--seed", "1", "--sizes", "3"],
    ["pca", "--estimator", "mcd"],
    ["depth", "--bogus", "1"],
    [],
])
def test_validation_errors_exit_2(tmp_path, capsys, argv):
    data = _write(tmp_path / "x.csv", _cloud())
    full = list(argv)
    if argv and argv[0] in ("pca", "depth"):
        full += ["--input", data]
    if argv:
        full += ["--output-dir", str(tmp_path / "out")]
    assert main(full) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error[")


def test_validation_happens_before_work(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate-fse", "--output-dir", str(out), "--seed", "1", "--sizes", "3"]) == 2
    assert not (out / "fse.csv").exists()
    assert not (out / "checkpoints").exists() or not os.listdir(out / "checkpoints")


def test_io_error_exit_4(tmp_path, capsys):
    code = main(["pca", "--input", str(tmp_path / "missing.csv"), "--output-dir", str(tmp_path),
                 "--estimator", "scm"])
    assert code == 4
    assert capsys.readouterr().err.startswith("error[")


def test_missing_values_rejected(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,\n4,5\n", encoding="utf-8")
    assert main(["pca", "--input", str(path), "--output-dir", str(tmp_path), "--estimator", "scm"]) == 2


def test_mad_zero_column(tmp_path, capsys):
    x = _cloud(3)
    x[:, 1] = 7.0
    data = _write(tmp_path / "x.csv", x, ["a", "const", "c"])
    out = str(tmp_path / "out")
    assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "scm", "--mad-scale"]) == 2
    assert "const" in capsys.readouterr().err
    assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "scm", "--mad-scale",
                 "--exclude-cols", "const", "--k", "1"]) == 0
    assert _report(out)["payload"]["p"] == 2
    assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "scm", "--mad-scale",
                 "--exclude-cols", "2", "--k", "1"]) == 0


def test_config_overrides_flags(tmp_path, capsys):
    data = _write(tmp_path / "x.csv", _cloud(4))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"estimator": "tyler", "k": 1}), encoding="utf-8")
    out = str(tmp_path / "out")
    assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "scm", "--config", str(cfg)]) == 0
    rep = _report(out)
    assert rep["payload"]["estimator"] == "tyler" and rep["payload"]["k"] == 1
    cfg.write_text(json.dumps({"nonsense": 1}), encoding="utf-8")
    assert main(["pca", "--input", data, "--output-dir", out, "--config", str(cfg)]) == 2
    assert "nonsense" in capsys.readouterr().err


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((30, 3)) * 10.0 ** rng.integers(-8, 8, size=(30, 3))
    path = _write(tmp_path / "x.csv", x)
    headers, back = _io.read_table(path)
    assert headers == ["v1", "v2", "v3"]
    np.testing.assert_array_equal(back, x)


def _payloads(out):
    return {f: open(os.path.join(out, f), "rb").read() for f in sorted(os.listdir(out)) if f.endswith(".csv")}


def test_determinism(tmp_path):
    data = _write(tmp_path / "x.csv", _cloud(6))
    runs = []
    for tag in ("a", "b"):
        out = str(tmp_path / tag)
        assert main(["pca", "--input", data, "--output-dir", out, "--estimator", "dcm-halfspace",
                     "--seed", "9"]) == 0
        assert main(["simulate-fse", "--output-dir", out, "--seed", "4", "--reps", "3", "--sizes", "20",
                     "--estimator", "scm,dcm-projection"]) == 0
        runs.append(_payloads(out))
    assert runs[0] == runs[1] and len(runs[0]) >= 5


def test_planted_outliers_end_to_end(tmp_path):
    x, planted = planted_outlier_data(seed=1)
    data = _write(tmp_path / "octane.csv", x)
    flagged = {}
    for est in ("dcm-projection", "sample-cov"):
        out = str(tmp_path / est)
        assert main(["pca", "--input", data, "--output-dir", out, "--estimator", est,
                     "--k", "2", "--seed", "1"]) == 0
        diag = str(tmp_path / (est + "-diag"))
        assert main(["diagnose", "--input", data, "--fit", os.path.join(out, "fit.json"),
                     "--output-dir", diag, "--k", "2", "--quantiles", "0.5,0.9"]) == 0
        flagged[est] = _report(diag)["payload"]["diagnostics"]["flagged_rows"]
    assert flagged["dcm-projection"] == sorted(int(i) + 1 for i in planted)
    assert len(flagged["sample-cov"]) < 6
