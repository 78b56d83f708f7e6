import json
import os
import sys
from unittest.mock import patch

import pytest
import yaml

from conftest import fast_config_data
from kgcouple import experiment_processor
from kgcouple.config import THREADS_ENV_VAR, __version__
from kgcouple.errors import InstabilityError
from kgcouple.main import EXIT_CONDITION, EXIT_ERROR, EXIT_OK, main, run


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    """Write a fast config and keep the bundled and home configs out of the merge."""
    monkeypatch.setenv("KGCOUPLE_SKIP_BUNDLED_CONFIG_LOAD", "true")
    monkeypatch.setenv("HOME", str(tmp_path / "home"))

    def _write(experiment="check-model", **kwargs):
        path = tmp_path / f"{experiment}.yaml"
        path.write_text(yaml.safe_dump(fast_config_data(experiment, **kwargs)))
        return str(path)

    return _write


def test_main_version(capsys):
    with patch.object(sys, "argv", ["kgcouple", "--version"]):
        with pytest.raises(SystemExit) as exc:
            main()
    assert exc.value.code == 0
    assert f"kgcouple {__version__}" in capsys.readouterr().out


def test_main_rejects_unknown_experiment(capsys):
    with patch.object(sys, "argv", ["kgcouple", "teleport"]):
        with pytest.raises(SystemExit) as exc:
            main()
    assert exc.value.code == 2
    assert "invalid choice" in capsys.readouterr().err


def test_run_check_model(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert run("check-model", config_file(), str(out)) == EXIT_OK
    assert (out / "conditions.json").is_file()
    assert (out / "metadata.json").is_file()
    assert (out / "run.log").is_file()
    assert f"Artifacts written to {out}" in capsys.readouterr().out


def test_run_quiet_prints_nothing(config_file, tmp_path, capsys):
    assert run("check-model", config_file(), str(tmp_path / "out"), quiet=True) == EXIT_OK
    assert capsys.readouterr().out == ""


def test_condition_failure_exit_code(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = run("check-model", config_file(amplitude=40.0), str(out), quiet=True)
    assert code == EXIT_CONDITION
    assert "Condition failure" in capsys.readouterr().err
    conditions = json.loads((out / "conditions.json").read_text())
    assert "A1'" in conditions["failures"]
    assert "Condition check failed" in (out / "run.log").read_text()


def test_missing_config_exit_code(tmp_path, capsys):
    code = run("check-model", str(tmp_path / "missing.yaml"), str(tmp_path / "out"), quiet=True)
    assert code == EXIT_ERROR
    assert "does not exist" in capsys.readouterr().err
    log = (tmp_path / "out" / "run.log").read_text()
    assert "Could not set up the run" in log
    assert "does not exist" in log
    assert not (tmp_path / "out" / "metadata.json").exists()


def test_invalid_config_exit_code(config_file, tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    data = fast_config_data()
    data["MODEL"]["omega"] = -1.0
    path.write_text(yaml.safe_dump(data))
    assert run(None, str(path), str(tmp_path / "out"), quiet=True) == EXIT_ERROR
    assert "model.omega" in capsys.readouterr().err
    assert "model.omega" in (tmp_path / "out" / "run.log").read_text()


def test_setup_failure_without_out_dir_writes_no_run_log(tmp_path, clean_cwd, capsys):
    assert run("check-model", str(tmp_path / "missing.yaml"), quiet=True) == EXIT_ERROR
    assert "does not exist" in capsys.readouterr().err
    assert not list(tmp_path.rglob("run.log"))


def test_threads_must_be_positive(config_file, tmp_path, capsys):
    assert run("check-model", config_file(), str(tmp_path / "out"), threads=0) == EXIT_ERROR
    assert "--threads must be positive" in capsys.readouterr().err


def test_threads_are_exported(config_file, tmp_path, monkeypatch):
    monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
    assert run("check-model", config_file(), str(tmp_path / "out"), threads=2, quiet=True) == EXIT_OK
    assert os.environ[THREADS_ENV_VAR] == "2"


def test_instability_is_an_error(config_file, tmp_path, monkeypatch, capsys):
    def blow_up(*args, **kwargs):
        raise InstabilityError("Instability: energy grew by a factor 12 at t=0.5", time=0.5, ratio=12.0)

    monkeypatch.setattr(experiment_processor, "evolve", blow_up)
    out = tmp_path / "out"
    assert run("simulate", config_file("simulate"), str(out), quiet=True) == EXIT_ERROR
    assert "energy grew" in capsys.readouterr().err
    assert "InstabilityError" in (out / "run.log").read_text()
    assert (out / "metadata.json").is_file()


def test_rerun_is_byte_identical(config_file, tmp_path):
    path = config_file("equilibrium")
    for name in ("first", "second"):
        assert run(None, path, str(tmp_path / name), quiet=True) == EXIT_OK
    for artifact in ("statistics.csv", "characteristic.csv"):
        assert (tmp_path / "first" / artifact).read_bytes() == (tmp_path / "second" / artifact).read_bytes()


def test_seed_override_changes_samples(config_file, tmp_path):
    path = config_file("equilibrium")
    assert run(None, path, str(tmp_path / "a"), quiet=True) == EXIT_OK
    assert run(None, path, str(tmp_path / "b"), seed=6, quiet=True) == EXIT_OK
    meta = json.loads((tmp_path / "b" / "metadata.json").read_text())
    assert meta["seeds"][0] == 6
    assert (tmp_path / "a" / "statistics.csv").read_bytes() != (tmp_path / "b" / "statistics.csv").read_bytes()


def test_main_runs_experiment(config_file, tmp_path):
    argv = ["kgcouple", "check-model", "--config", config_file(), "--out", str(tmp_path / "out"), "-q"]
    with patch.object(sys, "argv", argv):
        with pytest.raises(SystemExit) as exc:
            main()
    assert exc.value.code == EXIT_OK
    assert (tmp_path / "out" / "conditions.json").is_file()


def test_main_init(tmp_path, clean_cwd, capsys):
    target = clean_cwd / "init.yaml"
    with patch.object(sys, "argv", ["kgcouple", "--init", "--config", str(target)]):
        main()
    assert target.is_file()
    assert "OUTPUT_DIR" in target.read_text()
    with patch.object(sys, "argv", ["kgcouple", "--init", "--config", str(target)]):
        with pytest.raises(SystemExit) as exc:
            main()
    assert exc.value.code != 0
