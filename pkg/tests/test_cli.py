import json

import pytest

from rdloc import io
from rdloc.cli import main


def write_config(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


QUICK_CFG = "[training]\nmax_epochs = 30\n"


def test_simulate_to_stdout_and_file(tmp_path, capsys):
    assert main(["simulate", "--section", "2", "--depth", "9"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("frequency_hz,magnitude\n")
    target = tmp_path / "c.csv"
    assert main(["simulate", "--section", "2", "--depth", "9", "--out", str(target)]) == 0
    assert target.read_text() == out


def test_simulate_fault_from_config(tmp_path, capsys):
    cfg = write_config(tmp_path, "[fault]\nsection = 3\ndepth_mm = 12\n[grid]\nn_points = 50\n")
    assert main(["simulate", "--config", cfg]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 51


def test_invalid_fault_exit_code(capsys):
    assert main(["simulate", "--section", "9", "--depth", "6"]) == 1
    assert "error" in capsys.readouterr().err


def test_invalid_plan_exit_code(tmp_path):
    cfg = write_config(tmp_path, "[plan]\ntest_depths_mm = 9\n")
    assert main(["build-dataset", "--config", cfg, "--out", str(tmp_path / "d")]) == 1


def test_bad_config_exit_code(tmp_path):
    cfg = write_config(tmp_path, "[model]\nmeasurement_resistance = nope\n")
    assert main(["build-dataset", "--config", cfg]) == 1


def test_divergence_exit_code(tmp_path, monkeypatch):
    from rdloc import harness
    from rdloc.errors import TrainingDivergenceError

    def boom(dataset, hyper):
        raise TrainingDivergenceError("non-finite loss", epoch=3)

    monkeypatch.setattr(harness, "train", boom)
    assert main(["run-experiment", "--out", str(tmp_path / "x")]) == 2
    assert json.loads((tmp_path / "x/report.json").read_text())["diverged_epoch"] == 3


def test_pipeline_build_train_evaluate_locate(tmp_path, capsys):
    cfg = write_config(tmp_path, QUICK_CFG)
    d, m = tmp_path / "ds", tmp_path / "model"
    assert main(["build-dataset", "--config", cfg, "--out", str(d)]) == 0
    assert main(["train", "--config", cfg, "--dataset", str(d), "--out", str(m)]) == 0
    assert (m / "checkpoint.bin").exists() and (m / "training_log.csv").exists()
    report = tmp_path / "report.json"
    assert main(["evaluate", "--checkpoint", str(m / "checkpoint.bin"), "--dataset", str(d),
                 "--out", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert len(rep["train"]["items"]) == 8 and len(rep["test"]["items"]) == 4
    curves = tmp_path / "curves"
    assert main(["export-curves", "--out", str(curves)]) == 0
    capsys.readouterr()
    assert main(["locate", "--checkpoint", str(m / "checkpoint.bin"),
                 "--curve", str(curves / "section1_depth6mm.csv")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("section=") and "probabilities=" in out


def test_locate_parse_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, QUICK_CFG)
    assert main(["run-experiment", "--config", cfg, "--out", str(tmp_path / "run")]) == 0
    bad = tmp_path / "bad.csv"
    bad.write_text("frequency_hz,magnitude\n20,1e-3\n30,oops\n")
    assert main(["locate", "--checkpoint", str(tmp_path / "run/checkpoint.bin"), "--curve", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_run_experiment_seed_flag(tmp_path):
    cfg = write_config(tmp_path, QUICK_CFG)
    assert main(["run-experiment", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r/report.json").read_text())
    assert rep["seed"] == 3
    assert rep["checkpoint_hash"] == io.sha256((tmp_path / "r/checkpoint.bin").read_bytes())


def test_missing_file_is_input_error(tmp_path):
    assert main(["locate", "--checkpoint", str(tmp_path / "nope.bin"), "--curve", "x.csv"]) == 1


def test_subcommand_required():
    with pytest.raises(SystemExit):
        main([])
