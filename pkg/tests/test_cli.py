import json
import subprocess
import sys

import numpy as np
import pytest

from frcimpact import io as fio
from frcimpact.cli import RunConfig, build_parser, load_config, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--kappa", "1.3", "--n", "5", "--days", "800", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_simulate_writes_panel_and_manifest(sim_dir):
    for name in ("rates.csv", "flows.csv", "truth.json", "run-manifest.json"):
        assert (sim_dir / name).exists()
    manifest = fio.read_json(sim_dir / "run-manifest.json", "run-manifest")
    assert manifest["command"] == "simulate" and manifest["seed"] == 3
    assert set(manifest["artifacts"]) == {"rates.csv", "flows.csv", "truth.json"}
    assert {"numpy", "scipy", "numba", "python", "frcimpact"} <= set(manifest["versions"])
    assert manifest["timings"]["total_seconds"] >= 0
    truth = fio.read_json(sim_dir / "truth.json", "simulation-truth")
    assert truth["kappa"] == 1.3


def test_simulate_then_fit_kappa_round_trip(sim_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "fit-kappa", "--rates", sim_dir / "rates.csv", "--flows", sim_dir / "flows.csv", "--out", tmp_path)
    assert code == 0
    assert json.loads(out)["command"] == "fit-kappa"
    fit = fio.read_json(tmp_path / "kappa.json", "kappa-fit")
    assert fit["kappa_hat"] == pytest.approx(1.3, rel=0.05)
    manifest = fio.read_json(tmp_path / "run-manifest.json")
    assert manifest["inputs"]["rates"]["sha256"] == fio.sha256(sim_dir / "rates.csv")


def test_fit_kappa_from_correlation_matrix(tmp_path, capsys):
    from frcimpact.field import FieldParams, TenorGrid, build_field_model

    fm = build_field_model(FieldParams.small_psi(0.84), TenorGrid(20))
    labels = TenorGrid(20).labels()
    fio.write_matrix(tmp_path / "corr.csv", fm.price_corr, labels, labels, "price-corr")
    code, _, _ = run(capsys, "fit-kappa", "--corr", tmp_path / "corr.csv", "--out", tmp_path / "o")
    assert code == 0
    fit = fio.read_json(tmp_path / "o" / "kappa.json")
    assert fit["kappa_hat"] == pytest.approx(0.84, abs=1e-3) and fit["kappa_r2"] >= 0.99


def test_fit_y_and_build_impact(sim_dir, tmp_path, capsys):
    common = ["--rates", sim_dir / "rates.csv", "--flows", sim_dir / "flows.csv", "--out", tmp_path]
    assert run(capsys, "fit-y", "--kind", "bbdls", *common)[0] == 0
    cal = fio.read_json(tmp_path / "calibration.json")
    assert len(cal["y_hat"]) == 5 and all(0 <= v <= 1 for v in cal["y_hat"])
    assert run(capsys, "build-impact", "--kind", "bbdls", *common)[0] == 0
    lam, rows, cols, _ = fio.read_matrix(tmp_path / "lambda.csv")
    assert lam.shape == (5, 5) and rows == cols
    assert np.linalg.norm(lam - lam.T) <= 1e-8 * np.linalg.norm(lam)


def test_y_override_is_flagged(sim_dir, tmp_path, capsys):
    code, _, _ = run(capsys, "fit-y", "--kind", "bbdlw", "--kappa", "1.3", "--y", "0.5,0.5,0.5,0.5,0.5",
                     "--rates", sim_dir / "rates.csv", "--flows", sim_dir / "flows.csv", "--out", tmp_path)
    assert code == 0
    cal = fio.read_json(tmp_path / "calibration.json")
    assert cal["y_hat"] == [0.5] * 5 and "y-override" in cal["flags"]


def test_impulse_zero_volume_is_all_zero(tmp_path, capsys):
    code, _, _ = run(capsys, "impulse", "--kappa", "1.3", "--n", "6", "--theta0", "3", "--volume", "0", "--out", tmp_path)
    assert code == 0
    _, y, series = fio.read_long(tmp_path / "impulse.csv")
    assert len(y) == 6 * len(set(series)) and np.all(y == 0)


def test_impulse_peaks_at_traded_tenor(tmp_path, capsys):
    assert run(capsys, "impulse", "--kappa", "1.3", "--n", "20", "--theta0", "8", "--volume", "1e9", "--out", tmp_path)[0] == 0
    x, y, series = fio.read_long(tmp_path / "impulse.csv")
    first = np.array(series) == series[0]
    assert x[first][np.argmax(y[first])] == 24


def test_pairwise_kyle_grid(tmp_path, capsys):
    assert run(capsys, "pairwise-dr2", "--mode", "kyle-numeric", "--out", tmp_path)[0] == 0
    res = fio.read_json(tmp_path / "pairwise.json")
    assert res["max_abs"] <= 0.01
    assert (tmp_path / "plot_kyle_grid.csv").exists()


def test_pairwise_theory_from_config_inputs(tmp_path, capsys):
    code, _, _ = run(capsys, "pairwise-dr2", "--mode", "bbdl-eta", "--kappa", "1.3", "--n", "4", "--y", "[1,1,1,1]", "--out", tmp_path)
    assert code == 0
    m, _, _, name = fio.read_matrix(tmp_path / "pairwise.csv")
    assert name == "pairwise-bbdl-eta" and np.all(m.sum(axis=1) <= 1 + 1e-12)


def test_pairwise_and_autocorr_on_panel(sim_dir, tmp_path, capsys):
    common = ["--rates", sim_dir / "rates.csv", "--flows", sim_dir / "flows.csv"]
    assert run(capsys, "pairwise-dr2", "--mode", "ml-theory", *common, "--out", tmp_path / "a")[0] == 0
    m, _, _, _ = fio.read_matrix(tmp_path / "a" / "pairwise.csv")
    assert np.all(np.diag(m) == 0) and np.all(m >= 0)
    assert run(capsys, "autocorr", *common, "--out", tmp_path / "b")[0] == 0
    ac = fio.read_json(tmp_path / "b" / "autocorr.json")
    assert set(ac["tenors"]) == {"t03", "t06", "t09", "t12", "t15"}
    assert (tmp_path / "b" / "plot_autocorr.csv").exists()


def test_mc_verify_command(tmp_path, capsys):
    code, _, _ = run(capsys, "mc-verify", "--kappa", "1.3", "--n", "3", "--days", "2000", "--seed", "1", "--out", tmp_path)
    assert code == 0
    rep = fio.read_json(tmp_path / "mc-report.json")
    assert rep["passed"] is True


def test_artifacts_are_deterministic(tmp_path, capsys):
    hashes = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run(capsys, "simulate", "--kappa", "0.84", "--n", "4", "--days", "100", "--seed", "9", "--out", out)[0] == 0
        assert run(capsys, "fit-y", "--rates", out / "rates.csv", "--flows", out / "flows.csv", "--out", out / "fit")[0] == 0
        hashes.append((fio.read_json(out / "run-manifest.json")["artifacts"], fio.read_json(out / "fit" / "run-manifest.json")["artifacts"]))
    assert hashes[0] == hashes[1]


def test_kyle_in_sample_beats_out_of_sample_on_average(tmp_path, capsys):
    gaps = []
    for seed in range(5):
        out = tmp_path / f"s{seed}"
        assert run(capsys, "simulate", "--kappa", "1.3", "--n", "5", "--days", str(261 * 6), "--seed", seed,
                   "--y", "0.8,0.65,0.5,0.35,0.2", "--out", out)[0] == 0
        assert run(capsys, "evaluate", "--kinds", "kyle", "--rates", out / "rates.csv", "--flows", out / "flows.csv",
                   "--out", out / "ev")[0] == 0
        reports = fio.read_json(out / "ev" / "evaluation.json")["reports"]
        r_in = np.mean([r["r2_w_sigma"] for r in reports if r["sample"] == "in"])
        r_out = np.mean([r["r2_w_sigma"] for r in reports if r["sample"] == "out"])
        gaps.append(r_in - r_out)
    assert np.mean(gaps) >= 0


# --- errors and configuration --------------------------------------------------


def test_exit_codes_and_error_json(tmp_path, capsys):
    code, _, err = run(capsys, "fit-kappa", "--bogus", "1")
    assert code == 2 and json.loads(err)["exit_code"] == 2
    code, _, err = run(capsys, "fit-kappa", "--rates", tmp_path / "nope.csv", "--flows", tmp_path / "nope.csv", "--out", tmp_path)
    assert code == 4 and json.loads(err)["error"] == "FrcIOError"
    code, _, err = run(capsys, "impulse", "--kappa", "0.1", "--n", "5", "--dt", "0.002", "--out", tmp_path)
    assert code == 3 and "spectral radius" in json.loads(err)["message"]
    code, _, _ = run(capsys, "fit-y", "--kind", "nonsense", "--out", tmp_path)
    assert code == 2
    code, _, err = run(capsys, "fit-y", "--out", tmp_path)
    assert code == 2 and "rates" in json.loads(err)["message"]


def test_bad_panel_reports_line(tmp_path, capsys):
    (tmp_path / "r.csv").write_text("# schema=frcimpact-panel/1 kind=increments\ndate,t03,t06\n2021-01-04,1,x\n")
    (tmp_path / "q.csv").write_text("# schema=frcimpact-panel/1 kind=flows\ndate,t03,t06\n2021-01-04,1,2\n")
    code, _, err = run(capsys, "autocorr", "--rates", tmp_path / "r.csv", "--flows", tmp_path / "q.csv", "--out", tmp_path)
    assert code == 2 and "r.csv:3" in json.loads(err)["message"]


def test_config_file_and_env_var(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kappa": 1.3, "n": 4, "volume": 0.0, "out": str(tmp_path / "env")}))
    monkeypatch.setenv("FRCIMPACT_CONFIG", str(cfg))
    assert run(capsys, "impulse")[0] == 0
    assert (tmp_path / "env" / "impulse.csv").exists()
    # flags override the file
    assert run(capsys, "impulse", "--n", "3", "--out", tmp_path / "flag")[0] == 0
    assert fio.read_json(tmp_path / "flag" / "run-manifest.json")["config"]["n"] == 3
    cfg.write_text(json.dumps({"kapa": 1.3}))
    code, _, err = run(capsys, "impulse")
    assert code == 2 and "kapa" in json.loads(err)["message"]


def test_load_config_defaults(monkeypatch):
    monkeypatch.delenv("FRCIMPACT_CONFIG", raising=False)
    cfg = load_config(None)
    assert cfg == RunConfig()
    with pytest.raises(ValueError):
        RunConfig.from_mapping({"nope": 1})


def test_every_config_key_has_a_flag():
    parser = build_parser()
    args = vars(parser.parse_args(["impulse", "--whiten", "--no-plot", "--kinds", "ml,kyle", "--quad-points", "128"]))
    assert args["whiten"] is True and args["plot"] is False and args["kinds"] == ["ml", "kyle"] and args["quad_points"] == 128


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "frcimpact", "impulse", "--kappa", "1.3", "--n", "3", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "impulse"
