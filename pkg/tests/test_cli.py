import csv
import json

import pytest
from click.testing import CliRunner

from ghdiag.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_fit_table(runner):
    res = runner.invoke(main, ["fit", "--fixture", "lung", "--models", "pgw-gh,weibull-aft"])
    assert res.exit_code == 0, res.output
    assert "342.35" in res.output and "339.48" in res.output


def test_fit_json(runner, tmp_path):
    out = tmp_path / "fit.json"
    res = runner.invoke(main, ["fit", "--fixture", "lung", "--family", "weibull", "--structure", "ph", "--out", str(out)])
    assert res.exit_code == 0, res.output
    payload = json.loads(out.read_text())
    assert payload["model"] == "W-PH" and payload["n"] == 227


def test_input_errors_exit_2(runner, tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert runner.invoke(main, ["fit", "--data", str(empty)]).exit_code == 2
    assert runner.invoke(main, ["fit", "--fixture", "lung", "--hlevel", "height"]).exit_code == 2
    assert runner.invoke(main, ["fit"]).exit_code == 2
    assert runner.invoke(main, ["simulate", "--scenario", "1", "--n", "100", "--censoring", "0.3",
                                "--replicates", "0"]).exit_code == 2


def test_diagnose_json_round_trip(runner, tmp_path):
    out = tmp_path / "diag.json"
    res = runner.invoke(main, ["diagnose", "--fixture", "lung", "--no-pni", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "near-redundant" in res.output
    payload = json.loads(out.read_text())
    assert payload["flags"] == {"nr_kl": True, "nr_hellinger": True, "nr_hessian": True}
    assert payload["n_eff"] == 195.5 and payload["bootstrap_probs"] is None


def test_profile_single_point(runner, tmp_path):
    out = tmp_path / "prof.csv"
    res = runner.invoke(main, ["profile", "--fixture", "lung", "--params", "beta[sex]", "--grid-points", "1",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and float(rows[0]["rel_profile"]) == 1.0


def test_simulate_from_config(runner, tmp_path):
    cfg = tmp_path / "cell.cfg"
    cfg.write_text("scenario = 1\nn = 200\ncensoring = 0.3\nreplicates = 1\nseed = 3\n")
    out = tmp_path / "cell.json"
    res = runner.invoke(main, ["simulate", "--config", str(cfg), "--out-json", str(out)])
    assert res.exit_code == 0, res.output
    payload = json.loads(out.read_text())
    assert payload["scenario"]["n"] == 200 and payload["replicates"] == 1
