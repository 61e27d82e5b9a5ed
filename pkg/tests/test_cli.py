import json
import subprocess
import sys

import pytest

from repeatlab import __version__
from repeatlab.cli import main

TINY = ["--set", "task.d=8", "--set", "task.k=2", "--set", "model.width=16", "--set", "data.size=128",
        "--set", "max_steps=40", "--set", "eval.test_size=256", "--set", "seeds=[0,1]"]


def test_verify_defaults_pass(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["schema_version"] == "1" and rep["pass"] is True
    names = {l["lemma"] for l in rep["lemmas"]}
    assert {"q_monotone", "phase2_contraction", "phase1_sign_and_q", "w_drift", "sign_transfer",
            "q0_anticoncentration", "sign_match", "beta_cdf_half", "mhat_opnorm_decreasing"} <= names
    assert rep["n_checks"] == len(rep["lemmas"])


def test_report_on_empty_dir(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert main(["report", "--out", str(tmp_path / "nope")]) == 2


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--out", str(a), "--workers", "1", *TINY]) == 0
    assert main(["run", "--out", str(b), "--workers", "2", *TINY]) == 0
    for name in ("runs.csv", "summary.csv", "meta.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta = json.loads((a / "meta.json").read_text())
    assert meta["version"] == __version__ and meta["seeds"] == [0, 1]
    assert meta["config"]["task"]["d"] == 8 and "workers" not in json.dumps(meta["config"])


def test_seed_flag_changes_output(tmp_path):
    main(["run", "--out", str(tmp_path / "a"), *TINY])
    main(["run", "--out", str(tmp_path / "b"), "--seed", "5", *TINY])
    assert (tmp_path / "a" / "runs.csv").read_bytes() != (tmp_path / "b" / "runs.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "meta.json").read_text())["base_seed"] == 5


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path), "--set", "optim.lrr=0.3"]) == 2
    assert "optim.lr" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["run", "--out", str(tmp_path), "--config", str(cfg)]) == 2
    assert main(["run", "--out", str(tmp_path), "--workers", "0", *TINY]) == 2


def test_env_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("REPEATLAB_WORKERS", "many")
    assert main(["run", "--out", str(tmp_path), *TINY]) == 2
    monkeypatch.setenv("REPEATLAB_WORKERS", "2")
    assert main(["run", "--out", str(tmp_path), *TINY]) == 0


def test_sweep_and_report(tmp_path):
    out = tmp_path / "s"
    rc = main(["sweep", "--out", str(out), "--workers", "1", "--set", "experiment=gap_sweep",
               "--set", "sweep.sizes=[64,256]", "--set", "sweep.lrs=[0.1,0.12]", *TINY])
    assert rc in (0, 1)
    checks = json.loads((out / "checks.json").read_text())["checks"]
    assert "small_fewer_steps" in checks
    assert rc == (0 if checks["small_fewer_steps"] else 1)
    assert main(["report", "--out", str(out)]) == 0
    for name in ("test_acc.svg", "test_acc.png", "norm_ratio.svg", "test_loss_compute.svg"):
        assert (out / "plots" / name).stat().st_size > 0
    assert (out / "aggregate.csv").exists()


def test_theory_outputs(tmp_path):
    rc = main(["theory", "--out", str(tmp_path), "--set", "theory.trials=20", "--set", "theory.schedule_trials=10",
               "--set", "theory.width=10000"])
    assert rc in (0, 1)
    assert (tmp_path / "trials.csv").exists() and (tmp_path / "summary.csv").exists()
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "plots" / "theory_steps.png").exists()


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "repeatlab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "run" in res.stdout and "--workers" in res.stdout
