import json
import subprocess
import sys

import pytest
import yaml

from jumpfilter.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, EXIT_RUNTIME, main
from jumpfilter.config import EXPERIMENTS
from jumpfilter.zoo import MODEL_ZOO


def _write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def _simulate(out="run", **extra):
    raw = {
        "experiment": "simulate",
        "model": {"name": "zero"},
        "grid": {"T": 1.0, "n_steps": 10},
        "seeds": {"master": 1, "n_replicas": 1},
        "output_dir": out,
    }
    raw.update(extra)
    return raw


def test_list_models(capsys):
    assert main(["list-models"]) == EXIT_PASS
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(MODEL_ZOO)


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == EXIT_PASS
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(EXPERIMENTS)


def test_validate_prints_canonical_form(tmp_path, capsys):
    assert main(["validate", _write(tmp_path, _simulate())]) == EXIT_PASS
    echoed = yaml.safe_load(capsys.readouterr().out)
    assert echoed["options"] == {"clip_radius": None, "detect_threshold": None, "jump_adapted": False}
    assert echoed["workers"] == 1


def test_config_error_exit_code_and_message(tmp_path, capsys):
    raw = _simulate()
    del raw["model"]["name"]
    assert main(["validate", _write(tmp_path, raw)]) == EXIT_CONFIG
    assert "model.name required" in capsys.readouterr().err
    assert main(["run", _write(tmp_path, raw)]) == EXIT_CONFIG


def test_missing_file_is_a_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
    assert "cannot read" in capsys.readouterr().err


def test_run_pass(tmp_path, capsys):
    assert main(["run", "-q", _write(tmp_path, _simulate()), "--output-root", str(tmp_path)]) == EXIT_PASS
    out = capsys.readouterr().out
    assert "PASS  oracle_roundtrip" in out
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["passed"] is True


def test_run_failure_exit_code(tmp_path, capsys):
    # a bound this small cannot hold, so the residual flag fails
    raw = {
        "experiment": "fkk_residual",
        "model": {"name": "ou_jump"},
        "grid": {"T": 1.0, "n_steps": 20},
        "filter": {"n_particles": 50, "resampling": "systematic", "mode": "fkk"},
        "seeds": {"master": 1, "n_replicas": 1},
        "output_dir": "res",
        "options": {"refine_check": False, "residual_constant": 1e-12},
    }
    assert main(["run", "-q", _write(tmp_path, raw), "--output-root", str(tmp_path)]) == EXIT_FAIL
    assert "FAIL  residual_bound" in capsys.readouterr().out


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_error_exit_code(tmp_path, capsys):
    # an explosive drift from a huge initial state overflows and the simulated path is rejected
    raw = {
        "experiment": "filter_run",
        "model": {"name": "linear_gaussian", "params": {"A": 1e6, "m0": 1e300}},
        "grid": {"T": 1.0, "n_steps": 5},
        "filter": {"n_particles": 10},
        "output_dir": "boom",
    }
    code = main(["run", "-q", _write(tmp_path, raw), "--output-root", str(tmp_path)])
    assert code == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "runtime error in jumpfilter.experiments" in err and "rejected" in err


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("JUMPFILTER_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["run", "-q", _write(tmp_path, _simulate(out="rel"))]) == EXIT_PASS
    assert (tmp_path / "root" / "rel" / "manifest.json").exists()


def test_output_root_flag_beats_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("JUMPFILTER_OUTPUT_ROOT", str(tmp_path / "env"))
    cfg = _write(tmp_path, _simulate(out="rel"))
    assert main(["run", "-q", cfg, "--output-root", str(tmp_path / "flag")]) == EXIT_PASS
    assert (tmp_path / "flag" / "rel" / "manifest.json").exists()
    assert not (tmp_path / "env").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "jumpfilter", "list-experiments"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "kalman_compare" in proc.stdout


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
