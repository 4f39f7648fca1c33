import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from src.cli import exit_codes, main
from src.morse.report import assemble_report, verify_bound


@pytest.fixture
def runner():
    return CliRunner()


def test_eval_at_circle_center(runner, data_dir):
    result = runner.invoke(main, ["eval", "--knot", str(data_dir / "unknot.json"), "--point", "0,0,0"])
    assert result.exit_code == 0, result.output
    sample = json.loads(result.output)
    assert set(sample) == {"x", "phi", "grad", "hess", "nodes_used", "est_error"}
    assert abs(sample["phi"] - 2 * np.pi) <= 1e-10


def test_eval_on_the_knot(runner, data_dir):
    result = runner.invoke(main, ["eval", "--knot", str(data_dir / "unknot.json"), "--point", "1,0,0"])
    assert result.exit_code == 2


def test_eval_malformed_knot_file(runner, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"kind": "torus", "p": 2, "q": 3, "R": 2.0}))
    result = runner.invoke(main, ["eval", "--knot", str(path), "--point", "0,0,0"])
    assert result.exit_code == 3
    assert "r: missing key" in result.output


def test_eval_malformed_point(runner, data_dir):
    result = runner.invoke(main, ["eval", "--knot", str(data_dir / "unknot.json"), "--point", "0,0"])
    assert result.exit_code == 3


def test_oracle_subcommand(runner, data_dir):
    result = runner.invoke(main, ["oracle", "--knot", str(data_dir / "unknot.json"), "--point", "0,0,0.5"])
    assert result.exit_code == 0, result.output
    data = json.loads(result.output)
    assert data["phi"] == pytest.approx(2 * np.pi / np.sqrt(1.25), rel=1e-12)
    assert data["knot"] == "unknot"


def test_scan_writes_csv_with_metadata(runner, data_dir, tmp_path):
    args = ["scan", "--knot", str(data_dir / "unknot.json"), "--grid", "12", "--out", str(tmp_path), "--format", "csv"]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output

    path = tmp_path / "critical_points.csv"
    header = [line for line in path.read_text().splitlines() if line.startswith("#")]
    assert any("units.potential" in line for line in header)
    assert any("tolerances.tol_res" in line for line in header)
    df = pd.read_csv(path, comment="#")
    assert len(df) == 1 and df["index"].iloc[0] == 1
    assert list(tmp_path.glob(".cache/scan_*.pkl"))


def test_flow_writes_obj(runner, data_dir, tmp_path):
    args = ["flow", "--knot", str(data_dir / "unknot.json"), "--grid", "12", "--out", str(tmp_path)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "arcs.obj").read_text().splitlines()
    assert {line for line in lines if line.startswith("o ")} == {"o theta_0_+", "o theta_0_-"}
    assert sum(line.startswith("l ") for line in lines) == 2


def run_report(runner, knot_file, out, *extra):
    result = runner.invoke(main, ["report", "--knot", str(knot_file), "--out", str(out), *extra])
    return result, json.loads((out / "report.json").read_text())


def test_unknot_report(runner, data_dir, tmp_path):
    result, report = run_report(runner, data_dir / "unknot.json", tmp_path, "--grid", "12")
    assert result.exit_code == 0, result.output
    assert report["m"] == [1, 1, 0, 0]
    assert report["cp_found"] == 2
    assert report["t_known"] == 0
    assert report["bound_ok"] is True and report["margin"] == 0
    assert report["arcs"]["gamma"] == 0 and report["arcs"]["theta"] == 1
    assert report["t_upper_bounds"]["crossings"] == 0
    assert "units" in report["metadata"]


def test_report_is_deterministic(runner, data_dir, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    run_report(runner, data_dir / "unknot.json", first, "--grid", "12", "--census", "4", "--seed", "3")
    run_report(runner, data_dir / "unknot.json", second, "--grid", "12", "--census", "4", "--seed", "3")
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


@pytest.mark.slow
def test_trefoil_report(runner, data_dir, tmp_path):
    result, report = run_report(runner, data_dir / "trefoil.json", tmp_path, "--grid", "24")
    assert result.exit_code == 0, result.output
    assert report["m"][1] - report["m"][2] == 1
    assert report["cp_found"] >= 4
    assert report["t_known"] == 1 and report["bound_ok"] is True
    assert report["arcs"]["gamma"] == report["m"][2] and report["arcs"]["theta"] == report["m"][1]
    assert report["t_upper_bounds"]["crossings"] >= 3


@pytest.mark.slow
def test_torus_3_4_report(runner, data_dir, tmp_path):
    result, report = run_report(runner, data_dir / "torus_3_4.json", tmp_path, "--grid", "24")
    assert result.exit_code == 0, result.output
    assert report["m"][1] - report["m"][2] == 1
    assert report["cp_found"] >= 4 and report["bound_ok"] is True


@pytest.mark.slow
def test_uncataloged_knot_report(runner, data_dir, tmp_path):
    result, report = run_report(runner, data_dir / "figure_eight.json", tmp_path)
    assert result.exit_code in (0, 4)
    assert report["bound_ok"] is None
    assert "crossings" in report["t_upper_bounds"]


def test_invalid_options_exit_with_parse_code(runner, data_dir, tmp_path):
    knot = str(data_dir / "unknot.json")
    result = runner.invoke(main, ["report", "--knot", knot, "--census", "-1", "--out", str(tmp_path)])
    assert result.exit_code == 3
    assert "Invalid option" in result.output

    # Ten diameters of the unit circle are 20.
    result = runner.invoke(main, ["flow", "--knot", knot, "--far-field", "15", "--out", str(tmp_path)])
    assert result.exit_code == 3
    assert "far_field_radius" in result.output


def test_internal_assertions_are_not_option_errors():
    with pytest.raises(AssertionError):
        with exit_codes():
            verify_bound(assemble_report("unknot", []), -1)
