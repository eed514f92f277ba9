"""End-to-end tests of the command-line entry point."""

import json

import pandas as pd
import pytest

import main as cli
from main import main


def analyze_args(path, out, *extra):
    return ["analyze", "--input", str(path), "--label", "tissue", "--out", str(out), "--jobs", "1", *extra]


def test_analyze_success_writes_manifest(labelled_csv, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(analyze_args(labelled_csv, out, "--k", "1", "--factor-reg", "l2")) == 0

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "analyze"
    assert manifest["status"] == "DONE"
    assert manifest["input_digest"].startswith("sha256:")
    assert manifest["options"]["pfa"]["k_policy"]["k"] == 1
    assert manifest["options"]["pfa"]["estimator"] == "l2"
    assert "features_1.csv" in manifest["outputs"]
    assert capsys.readouterr().out == ""


def test_analyze_k_zero(labelled_csv, tmp_path):
    out = tmp_path / "run"
    assert main(analyze_args(labelled_csv, out, "--k", "0", "--count-raw")) == 0
    features = pd.read_csv(out / "features_2.csv")
    assert (features["p_adjusted"] - features["p_raw"]).abs().max() <= 1e-12


def test_baseline_flag_changes_pairs(labelled_csv, tmp_path):
    out = tmp_path / "run"
    assert main(analyze_args(labelled_csv, out, "--baseline", "ADC")) == 0
    summary = json.loads((out / "summary_1.json").read_text())
    assert summary["pair"] == "Pancreatic vs ADC"


def test_missing_input_exit_code(tmp_path):
    out = tmp_path / "run"
    assert main(analyze_args(tmp_path / "absent.csv", out)) == 3
    assert json.loads((out / "manifest.json").read_text())["status"] == "FAILED"


def test_validation_failure_exit_code(labelled_csv, tmp_path):
    args = analyze_args(labelled_csv, tmp_path / "run")
    args[args.index("tissue")] = "class"
    assert main(args) == 2
    assert json.loads((tmp_path / "run" / "manifest.json").read_text())["status"] == "FAILED"


def test_invalid_grid_exit_code(labelled_csv, tmp_path):
    out = tmp_path / "run"
    assert main(analyze_args(labelled_csv, out, "--grid-min", "0.1", "--grid-max", "0.01")) == 2

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "FAILED"
    assert manifest["options"]["grid_min"] == 0.1
    assert manifest["errors"]


def test_bad_k_is_usage_error(labelled_csv, tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(analyze_args(labelled_csv, tmp_path / "run", "--k", "many"))
    assert excinfo.value.code == 2


SIM_FLAGS = ["--n", "80", "--p", "20", "--p1", "2", "--k", "2", "--t", "0.01", "--reps", "2", "--bootstrap", "20"]


def test_simulate_outputs_and_determinism(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", *SIM_FLAGS, "--seed", "7", "--out", str(first), "--jobs", "1"]) == 0
    assert main(["simulate", *SIM_FLAGS, "--seed", "7", "--out", str(second), "--jobs", "2"]) == 0

    assert (first / "summary.csv").read_bytes() == (second / "summary.csv").read_bytes()
    summary = pd.read_csv(first / "summary.csv")
    assert summary.columns[0] == "c"
    assert len(summary) == 2
    records = pd.read_csv(first / "records.csv")
    assert len(records) == 4

    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 7
    assert manifest["options"]["reps"] == 2


def test_simulate_invalid_config_exit_code(tmp_path):
    assert main(["simulate", "--p", "5", "--p1", "10", "--out", str(tmp_path)]) == 2

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["status"] == "FAILED"
    assert manifest["options"]["p1"] == 10


def test_simulate_failure_inside_run_still_writes_manifest(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("worker crashed")

    monkeypatch.setattr(cli, "run_monte_carlo", broken)
    assert main(["simulate", *SIM_FLAGS, "--out", str(tmp_path)]) == 1

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "FAILED"
    assert "worker crashed" in manifest["errors"][0]


def test_no_command_prints_help():
    assert main([]) == 2
