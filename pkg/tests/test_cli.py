import json

import numpy as np
import pytest

from smallmass.main import EXIT_BLOWUP, EXIT_FAILURE, EXIT_PASS, EXIT_USAGE, main
from smallmass.schemas.run_config import load_run_config
from smallmass.utils.persistence import read_trajectory_csv


def test_validate_config(write_config, capsys):
    assert main(["validate-config", str(write_config("canonical"))]) == EXIT_PASS
    assert "valid" in capsys.readouterr().out


def test_rejected_nonlinearity(write_config, capsys):
    assert main(["validate-config", str(write_config("rejected-cubic")), "--json"]) == EXIT_FAILURE

    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is False
    assert report["error_code"] == "growth-out-of-range"


def test_usage_errors(write_config, tmp_path):
    assert main(["validate-config"]) == EXIT_USAGE
    assert main(["validate-config", str(tmp_path / "missing.ini")]) == EXIT_USAGE

    path = write_config("canonical", probe={"masses": "0.1"})
    assert main(["probe", "spectral-gap", str(path)]) == EXIT_USAGE
    assert main(["probe", "mass-gap", str(path)]) == EXIT_USAGE


def test_simulate_writes_the_trajectory(write_config, tmp_path, capsys):
    path = write_config("canonical", sim={"horizon": "0.02"})
    digest = load_run_config(path).digest()

    assert main(["simulate", str(path), "--json"]) == EXIT_PASS

    summary = json.loads(capsys.readouterr().out)
    assert summary["config_hash"] == digest
    assert summary["records"] == 3
    table = read_trajectory_csv(tmp_path / "out" / f"simulate_{digest}.csv")
    assert np.allclose(table["t"], [0.0, 0.01, 0.02])


def test_seed_override_changes_the_artifact(write_config, tmp_path):
    path = write_config("canonical", sim={"horizon": "0.01"})

    assert main(["simulate", str(path), "--seed", "7"]) == EXIT_PASS
    assert main(["simulate", str(path), "--seed", "8"]) == EXIT_PASS
    assert len(list((tmp_path / "out").glob("simulate_*.csv"))) == 2


def test_probe_writes_its_report(write_config, tmp_path):
    path = write_config("canonical", probe={"audit_samples": "400"})
    digest = load_run_config(path).digest()

    assert main(["probe", "functional-audit", str(path)]) == EXIT_PASS

    report = json.loads((tmp_path / "out" / f"probe_functional-audit_{digest}.json").read_text())
    assert report["experiment"] == "functional-audit"
    assert report["config_hash"] == digest
    assert all(criterion["passed"] for criterion in report["criteria"])


def test_blow_up_exit_code(write_config, capsys):
    path = write_config("canonical", name="explosive", phi={"terms": "1:1.9"}, sim={
        "mass": "0", "horizon": "1.0", "noise_mode": "off", "initial": "mode", "initial_amplitude": "100",
    })

    with np.errstate(all="ignore"):
        assert main(["simulate", str(path), "--json"]) == EXIT_BLOWUP

    summary = json.loads(capsys.readouterr().out)
    assert summary["error_code"] == "blow-up"
    assert summary["blowup_step"] > 0


@pytest.mark.parametrize("command", ["convolution", "langevin", "shifted"])
def test_other_trajectory_commands(write_config, command):
    path = write_config("canonical", sim={"horizon": "0.01"})
    assert main([command, str(path)]) == EXIT_PASS
