import json

import pandas as pd
import pytest

from supplyshare.cli import EXIT_CONFIG, EXIT_DATA, EXIT_MISSING, EXIT_OK, main
from supplyshare.posterior import CLOSURE_NOTE
from supplyshare.variants import MODEL_NAMES

FAST = ["--iterations", "600", "--burn-in", "100", "--thin", "5", "--chains", "2", "--seed", "3"]
ALL5 = "sterilization,pill,implant,iud,injectable"


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--seed", "5"]) == EXIT_OK
    return out / "data.csv"


@pytest.fixture(scope="module")
def five_method_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("five")
    assert main(["simulate", "--out", str(root / "sim"), "--methods", ALL5, "--countries", "2",
                 "--regions-per-country", "2", "--seed", "1"]) == EXIT_OK
    run = root / "run"
    assert main(["fit", "--data", str(root / "sim" / "data.csv"), "--out", str(run), *FAST]) == EXIT_OK
    return run


def test_simulate_writes_data_and_truth(sim_csv):
    frame = pd.read_csv(sim_csv)
    assert len(frame) == 3 * 4 * 2 * 4
    truth = json.loads((sim_csv.parent / "truth.json").read_text())
    assert truth["truth"]["seed"] == 5 and truth["methods"] == ["sterilization", "pill"]


def test_fit_outputs_and_byte_identical_rerun(sim_csv, tmp_path):
    for name in ("a", "b"):
        assert main(["fit", "--data", str(sim_csv), "--model", "multivariate_intercept",
                     "--out", str(tmp_path / name), *FAST]) == EXIT_OK
    for artifact in ("draws.npz", "convergence.json"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()
    # the run configs differ only in the output directory
    a, b = (json.loads((tmp_path / n / "run_config.json").read_text()) for n in "ab")
    assert a.pop("out") != b.pop("out") and a == b
    conv = json.loads((tmp_path / "a" / "convergence.json").read_text())
    assert {"parameter", "r_hat", "ess", "flagged"} <= set(conv[0])


def test_fit_csv_draws_and_basis_dump(sim_csv, tmp_path):
    assert main(["fit", "--data", str(sim_csv), "--out", str(tmp_path), "--draw-format", "csv",
                 "--dump-basis", *FAST]) == EXIT_OK
    assert (tmp_path / "draws.csv").exists()
    basis = pd.read_csv(tmp_path / "basis.csv")
    sums = basis.groupby(["region_id", "year"])["value"].sum()
    assert (sums - 1.0).abs().max() < 1e-12


def test_unknown_model_lists_names(sim_csv, tmp_path, capsys):
    assert main(["fit", "--data", str(sim_csv), "--model", "bogus", "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert all(name in err for name in MODEL_NAMES)


def test_exit_codes(sim_csv, tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == EXIT_MISSING
    assert main(["project", "--run", str(tmp_path / "empty")]) == EXIT_MISSING
    assert main(["report", "--run", str(tmp_path)]) == EXIT_MISSING
    assert main(["fit", "--data", str(sim_csv), "--out", str(tmp_path), "--iterations", "10",
                 "--burn-in", "20"]) == EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    bad.write_text("country_id,region_id,method,year,prop_public,se_prop\nA,a,pill,2010,1.7,0.1\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path), *FAST]) == EXIT_DATA
    assert main(["validate", "--data", str(sim_csv), "--out", str(tmp_path), "--cutoff", "2030",
                 *FAST]) == EXIT_DATA


def test_project_year_summary_and_header(five_method_run):
    assert main(["project", "--run", str(five_method_run), "--year", "2025"]) == EXIT_OK
    table = pd.read_csv(five_method_run / "year_summary.csv", comment="#")
    assert list(table["method"]) == ALL5.split(",")
    text = (five_method_run / "trajectories.csv").read_text()
    assert text.startswith(CLOSURE_NOTE)
    assert main(["project", "--run", str(five_method_run), "--year", "2040"]) == EXIT_CONFIG


def test_report_summarises_run(five_method_run, capsys):
    assert main(["report", "--run", str(five_method_run)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "max R-hat" in out and (five_method_run / "report.txt").exists()


def test_config_file_with_flag_override(sim_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# desk run\nmodel = zero_covariance\niterations = 600\nburn-in = 100\nthin = 5\n"
                   "chains = 2\nseed = 1\n")
    assert main(["fit", "--config", str(cfg), "--data", str(sim_csv), "--out", str(tmp_path / "r"),
                 "--chains", "1"]) == EXIT_OK
    saved = json.loads((tmp_path / "r" / "run_config.json").read_text())
    assert saved["model"] == "zero_covariance"
    assert saved["sampler"]["chains"] == 1 and saved["sampler"]["iterations"] == 600
    cfg.write_text("iterations: 300\n")
    assert main(["fit", "--config", str(cfg), "--data", str(sim_csv), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_validate_single_model(sim_csv, tmp_path):
    assert main(["validate", "--data", str(sim_csv), "--model", "shrinkage", "--out", str(tmp_path),
                 *FAST]) == EXIT_OK
    payload = json.loads((tmp_path / "validation_report.json").read_text())
    assert [r["model_name"] for r in payload] == ["shrinkage"]


def test_compare_five_models(sim_csv, tmp_path):
    assert main(["compare", "--data", str(sim_csv), "--cutoff", "2015", "--out", str(tmp_path),
                 *FAST]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "validation_report.csv")
    assert list(frame.columns[1:]) == list(MODEL_NAMES)
    assert not frame.isna().any().any()
