"""End-to-end command-line runs: fit, band, monotonize, mc, estimand-gap."""

import json
import os

import numpy as np
import pytest
from scipy.stats import norm

from seriesqr.artifact import load_process
from seriesqr.cli import main

RNG_SEED = 4321

FIT_CFG = {
    "response": "y",
    "basis": {"family": "linear"},
    "grid": {"lo": 0.25, "hi": 0.75, "step": 0.05},
}
BAND_CFG = {
    "method": "pivotal",
    "B": 200,
    "functional": {"kind": "value", "ws": [[0.5]]},
}


def _write_cfg(tmp_path, doc, name):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _write_sample(tmp_path, n=80, columns=("y", "w")):
    gen = np.random.default_rng(RNG_SEED)
    w = gen.uniform(0.0, 1.0, n)
    y = 1.0 + 2.0 * w + 0.4 * gen.standard_normal(n)
    path = tmp_path / "sample.csv"
    table = {"y": y, "w": w}
    rows = zip(*[table[c] for c in columns])
    lines = [",".join(columns)] + [",".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def _fit(tmp_path, fit_cfg=None, sample=None, seed=0):
    sample = sample or _write_sample(tmp_path)
    cfg = _write_cfg(tmp_path, fit_cfg or FIT_CFG, "fit.json")
    out = tmp_path / "fit_out"
    code = main(["fit", "--config", cfg, "--data", sample, "--out", str(out), "--seed", str(seed)])
    assert code == 0
    return str(out / "process.npz"), str(out)


def _band(tmp_path, artifact, band_cfg, seed=11, name="band.json", outname="band_out"):
    cfg = _write_cfg(tmp_path, band_cfg, name)
    out = tmp_path / outname
    code = main(["band", "--config", cfg, "--data", artifact, "--out", str(out), "--seed", str(seed)])
    return code, str(out)


def _read_band(out_dir):
    table = np.genfromtxt(os.path.join(out_dir, "band.csv"), delimiter=",", names=True)
    with open(os.path.join(out_dir, "band_meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    return table, meta


def test_fit_writes_artifact_and_summary(tmp_path, capsys):
    artifact, out = _fit(tmp_path)
    assert capsys.readouterr().out.strip() == artifact
    proc, meta = load_process(artifact)
    assert proc.betas.shape == (11, 2)
    assert proc.dataset is not None and meta["sample_x"].shape == (80, 1)
    summary = open(os.path.join(out, "fit_summary.txt"), encoding="utf-8").read()
    assert "observations (n)      80" in summary
    assert "design columns (m)    2" in summary
    assert "linear" in summary and meta["data_sha256"] in summary


def test_fit_then_uniform_band(tmp_path):
    artifact, _ = _fit(tmp_path)
    code, out = _band(tmp_path, artifact, BAND_CFG)
    assert code == 0
    table, meta = _read_band(out)
    assert table.shape == (11,)
    np.testing.assert_allclose(table["u"], np.round(0.25 + 0.05 * np.arange(11), 12))
    assert np.all(table["lower"] <= table["theta_hat"])
    assert np.all(table["theta_hat"] <= table["upper"])
    width = table["upper"] - table["lower"]
    np.testing.assert_allclose(width, 2.0 * meta["c_n"] * table["sigma_hat"], rtol=1e-12)
    assert meta["band_kind"] == "uniform" and meta["method"] == "pivotal"
    assert meta["B"] == 200 and meta["seed"] == 11
    np.testing.assert_allclose(meta["c_n"], meta["k_n"] + meta["delta_n"])
    assert meta["n"] == 80 and meta["m"] == 2
    # the quantile-value curve at a fixed w rises with u
    assert np.all(np.diff(table["theta_hat"]) > -1e-8)


def test_pointwise_normal_band_uses_the_z_quantile(tmp_path):
    artifact, _ = _fit(tmp_path)
    cfg = dict(BAND_CFG, band="pointwise", critical="normal", alpha=0.05)
    code, out = _band(tmp_path, artifact, cfg)
    assert code == 0
    table, meta = _read_band(out)
    assert meta["band_kind"] == "pointwise-normal"
    np.testing.assert_allclose(meta["c_n"], norm.ppf(0.975), rtol=1e-12)
    assert meta["delta_n"] == 0.0
    assert np.all(table["lower"] < table["upper"])


def test_band_methods_on_slim_artifact(tmp_path, capsys):
    slim_cfg = dict(FIT_CFG, embed_sample=False)
    artifact, _ = _fit(tmp_path, slim_cfg)
    proc, meta = load_process(artifact)
    assert proc.dataset is None and "sample_x" not in meta

    code, out = _band(tmp_path, artifact, dict(BAND_CFG, method="gaussian"))
    assert code == 0
    capsys.readouterr()

    code, _ = _band(tmp_path, artifact, BAND_CFG, outname="band_fail")
    assert code == 1
    err = capsys.readouterr().err
    assert "embed_sample" in err and err.startswith("error:")

    avg = dict(BAND_CFG, method="gaussian", functional={"kind": "average_derivative"})
    code, _ = _band(tmp_path, artifact, avg, outname="band_fail2")
    assert code == 1
    assert "does not embed" in capsys.readouterr().err


def test_band_average_derivative_and_weighted_method(tmp_path):
    artifact, _ = _fit(tmp_path)
    cfg = {
        "method": "weighted",
        "B": 25,
        "functional": {"kind": "average_derivative", "us": [0.45, 0.5, 0.55]},
    }
    code, out = _band(tmp_path, artifact, cfg)
    assert code == 0
    table, meta = _read_band(out)
    assert table.shape == (3,)
    np.testing.assert_array_equal(table["u"], [0.45, 0.5, 0.55])
    # the fitted slope of y = 1 + 2 w + noise should be near 2
    assert np.all(np.abs(table["theta_hat"] - 2.0) < 1.0)
    assert meta["B"] == 25


def test_intercept_only_fit_recovers_the_median(tmp_path):
    sample = _write_sample(tmp_path, n=81, columns=("y",))
    cfg = dict(FIT_CFG, grid={"points": [0.5]})
    artifact, out = _fit(tmp_path, cfg, sample=sample)
    proc, _ = load_process(artifact)
    y = np.genfromtxt(sample, delimiter=",", names=True)["y"]
    np.testing.assert_allclose(proc.betas[0, 0], np.median(y), atol=1e-10)
    summary = open(os.path.join(out, "fit_summary.txt"), encoding="utf-8").read()
    assert "intercept only" in summary

    code, _ = _band(tmp_path, artifact, dict(BAND_CFG, method="gaussian"))
    assert code == 1  # covariate-point functionals need a basis


def test_fit_data_errors(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, FIT_CFG, "fit.json")
    out = str(tmp_path / "out")

    def run(data):
        return main(["fit", "--config", cfg, "--data", data, "--out", out])

    assert run(str(tmp_path / "absent.csv")) == 1
    assert "data file not found" in capsys.readouterr().err

    bad = tmp_path / "bad.csv"
    bad.write_text("y,w\n1.0,2.0\n3.0,oops\n", encoding="utf-8")
    assert run(str(bad)) == 1
    err = capsys.readouterr().err
    assert "row 3" in err and "'w'" in err and "'oops'" in err

    ragged = tmp_path / "ragged.csv"
    ragged.write_text("y,w\n1.0,2.0\n3.0\n", encoding="utf-8")
    assert run(str(ragged)) == 1
    assert "row 3 has 1 cells, expected 2" in capsys.readouterr().err

    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    assert run(str(empty)) == 1
    assert "header row is required" in capsys.readouterr().err

    headers_only = tmp_path / "headers.csv"
    headers_only.write_text("y,w\n", encoding="utf-8")
    assert run(str(headers_only)) == 1
    assert "no data rows" in capsys.readouterr().err

    dup = tmp_path / "dup.csv"
    dup.write_text("y,y\n1.0,2.0\n", encoding="utf-8")
    assert run(str(dup)) == 1
    assert "repeats a column name" in capsys.readouterr().err

    wrong = _write_cfg(tmp_path, dict(FIT_CFG, response="z"), "wrong.json")
    sample = _write_sample(tmp_path)
    assert main(["fit", "--config", wrong, "--data", sample, "--out", out]) == 1
    assert "lacks column(s) ['z']" in capsys.readouterr().err

    assert main(["fit", "--config", cfg, "--out", out]) == 1
    assert "needs --data" in capsys.readouterr().err


def test_parser_and_config_errors_exit_one(tmp_path, capsys):
    assert main(["fit", "--config", "x.json"]) == 1
    assert "--out" in capsys.readouterr().err

    assert main(["frobnicate", "--config", "x.json", "--out", "o"]) == 1
    assert "invalid choice" in capsys.readouterr().err

    cfg = _write_cfg(tmp_path, {"response": "y"}, "bad.json")
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "fails the fit schema" in capsys.readouterr().err


def test_monotonize_roundtrip(tmp_path):
    artifact, _ = _fit(tmp_path)
    code, band_out = _band(tmp_path, artifact, BAND_CFG)
    assert code == 0
    before, before_meta = _read_band(band_out)

    cfg = _write_cfg(tmp_path, {"operator": "average", "lambda": 0.5}, "mono.json")
    out = tmp_path / "mono_out"
    code = main([
        "monotonize", "--config", cfg,
        "--data", os.path.join(band_out, "band.csv"),
        "--out", str(out),
    ])
    assert code == 0
    after, meta = _read_band(str(out))
    assert np.all(np.diff(after["lower"]) >= -1e-12)
    assert np.all(np.diff(after["upper"]) >= -1e-12)
    assert np.all(after["lower"] <= after["upper"])
    assert meta["monotonize"]["operator"] == "average"
    assert meta["alpha"] == before_meta["alpha"]
    np.testing.assert_array_equal(after["u"], before["u"])

    icfg = _write_cfg(tmp_path, {"operator": "intersect"}, "intersect.json")
    iout = tmp_path / "intersect_out"
    code = main([
        "monotonize", "--config", icfg,
        "--data", os.path.join(band_out, "band.csv"),
        "--out", str(iout),
    ])
    assert code == 0
    inter, _ = _read_band(str(iout))
    assert np.all(np.diff(inter["lower"]) >= -1e-12)
    assert np.all(np.diff(inter["upper"]) >= -1e-12)
    assert np.all(inter["lower"] >= before["lower"] - 1e-12)
    assert np.all(inter["upper"] <= before["upper"] + 1e-12)


def test_monotonize_requires_adjacent_metadata(tmp_path, capsys):
    table = tmp_path / "lonely.csv"
    table.write_text("u,theta_hat,sigma_hat,lower,upper\n0.5,0.0,1.0,-1.0,1.0\n", encoding="utf-8")
    cfg = _write_cfg(tmp_path, {"operator": "rearrangement"}, "mono.json")
    code = main(["monotonize", "--config", cfg, "--data", str(table), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "band metadata not found" in capsys.readouterr().err


def test_mc_reports_are_deterministic(tmp_path, capsys):
    mc_cfg = {
        "dgp": {"n": 120},
        "bases": [{"family": "linear"}],
        "methods": ["gaussian"],
        "R": 10,
        "B_simulation": 150,
        "grid": {"lo": 0.3, "hi": 0.7, "step": 0.1},
    }
    cfg = _write_cfg(tmp_path, mc_cfg, "mc.json")
    outs = []
    for name in ("mc1", "mc2"):
        out = tmp_path / name
        assert main(["mc", "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
        assert capsys.readouterr().out.strip() == str(out / "report.csv")
        outs.append(out)
    for fname in ("report.csv", "report.json"):
        a = (outs[0] / fname).read_bytes()
        b = (outs[1] / fname).read_bytes()
        assert a == b
    doc = json.loads((outs[0] / "report.json").read_text(encoding="utf-8"))
    assert doc["config"]["R"] == 10 and doc["config"]["alpha"] == 0.10
    rows = (outs[0] / "report.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0].startswith("basis,method,")
    assert len(rows) == 2


def test_estimand_gap_is_small_for_a_linear_truth(tmp_path):
    gap_cfg = {
        "dgp": {"g_coeffs": [1.0, 0.5, 0.0, 0.0, 0.0, 0.0]},
        "basis": {"family": "linear"},
        "functional": "value",
        "mega_n": 2000,
        "w_points": 3,
        "grid": {"points": [0.3, 0.5, 0.7]},
    }
    cfg = _write_cfg(tmp_path, gap_cfg, "gap.json")
    out = tmp_path / "gap_out"
    assert main(["estimand-gap", "--config", cfg, "--out", str(out), "--seed", "2"]) == 0
    table = np.genfromtxt(out / "gap.csv", delimiter=",", names=True)
    assert table.shape == (9,)
    assert np.all(np.abs(table["gap"]) <= 4.0 * table["se"] + 1e-3)
    meta = json.loads((out / "gap_meta.json").read_text(encoding="utf-8"))
    assert meta["mega_n"] == 2000
    assert meta["max_abs_gap"] == pytest.approx(np.max(np.abs(table["gap"])))


def test_thread_controls(tmp_path, capsys, monkeypatch):
    sample = _write_sample(tmp_path)
    cfg = _write_cfg(tmp_path, FIT_CFG, "fit.json")
    out = str(tmp_path / "out")

    monkeypatch.setenv("SERIESQR_THREADS", "junk")
    assert main(["fit", "--config", cfg, "--data", sample, "--out", out]) == 1
    assert "thread count must be an integer" in capsys.readouterr().err

    monkeypatch.setenv("SERIESQR_THREADS", "1")
    assert main(["fit", "--config", cfg, "--data", sample, "--out", out, "--threads", "junk"]) == 0

    monkeypatch.delenv("SERIESQR_THREADS")
    assert main(["fit", "--config", cfg, "--data", sample, "--out", out, "--threads", "64"]) == 0
