"""Tests for CLI commands."""

import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from robust_policy.cli import app


runner = CliRunner()


@pytest.fixture(autouse=True)
def temp_config(tmp_path, monkeypatch):
    """Keep settings and caches out of the home directory."""
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    monkeypatch.setattr("robust_policy.config.get_config_dir", lambda: config_dir)
    monkeypatch.setattr("robust_policy.evaluation.get_config_dir", lambda: config_dir)
    yield config_dir


@pytest.fixture
def synthetic_files(tmp_path):
    """Generated synthetic data plus a fitted weight model."""
    data = tmp_path / "data.csv"
    model = tmp_path / "model.json"
    result = runner.invoke(app, ["generate", "synthetic", "-o", str(data), "--n", "150", "--seed", "3"])
    assert result.exit_code == 0
    result = runner.invoke(
        app, ["fit-weights", str(data), "-o", str(model), "--kind", "product", "--binary-columns", "1"]
    )
    assert result.exit_code == 0
    return data, model


def test_version():
    """Test version command."""
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert "0.1.0" in result.output


def test_help():
    """Test help output."""
    result = runner.invoke(app, ["--help"])
    assert result.exit_code == 0
    assert "fit-weights" in result.output
    assert "coverage" in result.output


def test_configure(temp_config):
    """Test that configure writes the YAML file."""
    result = runner.invoke(app, ["configure", "--alpha", "0.1", "--seed", "5"])
    assert result.exit_code == 0
    assert (temp_config / "config.yaml").exists()


def test_configure_rejects_bad_alpha():
    result = runner.invoke(app, ["configure", "--alpha", "1.5"])
    assert result.exit_code == 1


def test_generate_writes_schema(tmp_path, synthetic_files):
    """Test the x,y,z1,z2 layout of a generated dataset."""
    data, _ = synthetic_files
    frame = pd.read_csv(data)
    assert list(frame.columns) == ["x", "y", "z1", "z2"]
    assert len(frame) == 150


def test_generate_ihdp_truth(tmp_path):
    """Test that the IHDP-style generator writes contexts and truth."""
    data, contexts, truth = tmp_path / "ihdp.csv", tmp_path / "contexts.csv", tmp_path / "truth.json"
    result = runner.invoke(
        app,
        ["generate", "ihdp", "-o", str(data), "--contexts", str(contexts), "--truth", str(truth)],
    )
    assert result.exit_code == 0
    record = json.loads(truth.read_text())
    assert len(record["beta"]) == 25
    assert "omega" in record
    assert len(pd.read_csv(contexts)) == 147


def test_generate_unknown_scenario(tmp_path):
    result = runner.invoke(app, ["generate", "jobs", "-o", str(tmp_path / "x.csv")])
    assert result.exit_code == 1
    assert "unknown scenario" in result.output


def test_fit_weights_writes_model(synthetic_files):
    _, model = synthetic_files
    saved = json.loads(model.read_text())
    assert saved["mode"] == "generative"
    assert len(saved["arms"]) == 2


def test_limit_outputs_json(synthetic_files):
    """Test the limit command's JSON record."""
    data, model = synthetic_files
    result = runner.invoke(
        app,
        ["limit", str(data), str(model), "-z", "45,0", "-x", "1",
         "--y-min", "-30", "--y-max", "30", "--grid-points", "601"],
    )
    assert result.exit_code == 0
    record = json.loads(result.stdout)
    assert set(record) == {"decision", "value", "saturated", "test_mass"}
    assert -30.0 <= record["value"] <= 30.0


def test_limit_pretty_panels(synthetic_files):
    """Test the rendered form of the limit command."""
    data, model = synthetic_files
    result = runner.invoke(
        app,
        ["limit", str(data), str(model), "-z", "45,0", "--y-min", "-30", "--y-max", "30",
         "--grid-points", "601", "--pretty"],
    )
    assert result.exit_code == 0
    assert "Decision 0" in result.output
    assert "Decision 1" in result.output
    assert "Test-point mass" in result.output


def test_limit_rejects_bad_context(synthetic_files):
    data, model = synthetic_files
    result = runner.invoke(
        app, ["limit", str(data), str(model), "-z", "45,abc", "--y-min", "-30", "--y-max", "30"]
    )
    assert result.exit_code == 1


def test_policy_batch(tmp_path, synthetic_files):
    """Test one decision row per context, in order."""
    data, model = synthetic_files
    contexts = tmp_path / "contexts.csv"
    contexts.write_text("z1,z2\n47,0\n30,1\n60,0\n", encoding="utf-8")
    output = tmp_path / "decisions.csv"
    result = runner.invoke(
        app,
        ["policy", str(data), str(model), str(contexts), "--y-min", "-30", "--y-max", "30",
         "--grid-points", "601", "-o", str(output)],
    )
    assert result.exit_code == 0
    frame = pd.read_csv(output)
    assert list(frame.columns) == ["decision", "certificate", "tied"]
    assert len(frame) == 3
    assert frame["decision"].isin([0, 1]).all()


def test_policy_rejects_inverted_range(tmp_path, synthetic_files):
    """Test that a bad cost range exits nonzero with a diagnostic."""
    data, model = synthetic_files
    contexts = tmp_path / "contexts.csv"
    contexts.write_text("47,0\n", encoding="utf-8")
    result = runner.invoke(
        app, ["policy", str(data), str(model), str(contexts), "--y-min", "30", "--y-max", "-30"]
    )
    assert result.exit_code == 1
    assert "failed" in result.output


def test_validate_reports_counts(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("x,y,z1\n0,1.0,2.0\n1,-1.0,3.0\n0,40.0,2.5\n", encoding="utf-8")
    report = tmp_path / "report.json"
    result = runner.invoke(
        app, ["validate", str(data), "--y-min", "-30", "--y-max", "30", "-o", str(report)]
    )
    assert result.exit_code == 0
    saved = json.loads(report.read_text())
    assert saved["arm_counts"] == [2, 1]
    assert saved["out_of_range_costs"] == 1


def test_validate_missing_file(tmp_path):
    result = runner.invoke(
        app, ["validate", str(tmp_path / "missing.csv"), "--y-min", "-30", "--y-max", "30"]
    )
    assert result.exit_code == 1


def test_ccdf_writes_curves(tmp_path):
    """Test one threshold,value file per compared policy."""
    output = tmp_path / "curve.csv"
    result = runner.invoke(
        app,
        ["ccdf", "synthetic", "-o", str(output), "-p", "past", "-p", "baseline",
         "--draws", "500", "--n", "200", "--grid-points", "101"],
    )
    assert result.exit_code == 0
    for name in ("past", "baseline"):
        frame = pd.read_csv(tmp_path / f"curve_{name}.csv")
        assert list(frame.columns) == ["threshold", "value"]
        assert frame["value"].is_monotonic_decreasing


def test_coverage_table(tmp_path, temp_config):
    """Test a short coverage sweep and its cached copy."""
    output = tmp_path / "coverage.csv"
    result = runner.invoke(
        app,
        ["coverage", "synthetic", "--alpha", "0.2", "--alpha", "0.3", "--runs", "30",
         "--n", "80", "--grid-points", "201", "-o", str(output)],
    )
    assert result.exit_code == 0
    frame = pd.read_csv(output)
    assert frame["alpha"].tolist() == [0.2, 0.3]
    assert (temp_config / "last_coverage.json").exists()


def test_coverage_with_known_propensity(tmp_path):
    output = tmp_path / "coverage.csv"
    result = runner.invoke(
        app,
        ["coverage", "synthetic", "--alpha", "0.2", "--runs", "30", "--n", "80",
         "--grid-points", "201", "--known-propensity", "-o", str(output)],
    )
    assert result.exit_code == 0
    assert len(pd.read_csv(output)) == 1


def test_coverage_needs_enough_runs():
    result = runner.invoke(app, ["coverage", "synthetic", "--runs", "5"])
    assert result.exit_code == 1
