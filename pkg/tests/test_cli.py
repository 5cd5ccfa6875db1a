import csv
import json
import subprocess
import sys

import pytest

from dufm import theory
from dufm.cli import main

BASE = {"layers": 3, "n": 4, "width": 8, "lambda_h": 5e-3, "lambda_w": 5e-3, "lr": 0.5, "steps": 200, "log_every": 50}


def write_cfg(tmp_path, **kw):
    doc = {**BASE, **kw}
    doc = {k: v for k, v in doc.items() if v is not None}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "dufm.cli", *args], capture_output=True, text=True)


def test_train_writes_run(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path), "--out", str(tmp_path / "out")]) == 0
    run = tmp_path / "out" / "run-0"
    rows = list(csv.reader((run / "metrics.csv").open()))
    assert len(rows) - 1 == 200 // 50 + 1
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["regime"] == "collapse"


def test_train_seed_override(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path), "--out", str(tmp_path / "o"), "--seed", "11"]) == 0
    assert json.loads((tmp_path / "o" / "run-0" / "manifest.json").read_text())["seed"] == 11


def test_train_rejects_negative_lr(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path, lr=-0.1), "--out", str(tmp_path / "o")]) == 1


def test_train_rejects_unknown_key(tmp_path):
    proc = run_cli("train", "--config", write_cfg(tmp_path, momentum=0.9), "--out", str(tmp_path / "o"))
    assert proc.returncode == 1
    assert "momentum" in proc.stderr


def test_train_divergence_exit_code(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path, lr=1000.0), "--out", str(tmp_path / "o")]) == 2


def test_train_missing_config(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1


def test_optimum_zero_example(capsys):
    assert main(["optimum", "--layers", "2", "--n", "1", "--lambda-h", "0.2", "--lambda-w", "0.2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["regime"] == "zero" and rep["optimal_loss"] == 0.5


def test_optimum_threshold_and_default(capsys):
    assert main(["optimum", "--layers", "3", "--n", "50", "--lambda-h", "5e-4", "--lambda-w", "5e-4"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["threshold"] == pytest.approx(3.4294e-4, rel=1e-4)
    assert rep["regime"] == "collapse" and rep["optimal_loss"] < 0.5


def test_optimum_boundary(capsys):
    t = float(theory.dnc_threshold(2))
    assert main(["optimum", "--layers", "2", "--n", "1", "--lambda-h", repr(t), "--lambda-w", "1,1"]) == 0
    assert json.loads(capsys.readouterr().out)["regime"] == "boundary"


def test_optimum_bad_arity():
    assert main(["optimum", "--layers", "3", "--n", "1", "--lambda-h", "1", "--lambda-w", "1,2"]) == 1


def test_construct_default(tmp_path):
    cfg = write_cfg(tmp_path, n=50, width=64, lambda_h=5e-4, lambda_w=5e-4)
    assert main(["construct", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert rep["passed"] and abs(rep["rel_gap"]) < 1e-8
    assert (tmp_path / "c" / "params.json").exists()


def test_construct_zero_regime(tmp_path):
    cfg = write_cfg(tmp_path, layers=2, n=1, width=2, lambda_h=0.2, lambda_w=0.2)
    assert main(["construct", "--config", cfg, "--out", str(tmp_path / "c")]) == 3


def test_verify_counterexample(capsys):
    assert main(["verify", "--lemma", "counterexample"]) == 0
    line = json.loads(capsys.readouterr().out)
    assert line["passed"] and line["details"]["nuclear_norm_relu"] > line["details"]["nuclear_norm"]


def test_verify_unknown_lemma():
    assert main(["verify", "--lemma", "nope"]) == 1


def test_verify_key_reports_convention(capsys):
    assert main(["verify", "--lemma", "key", "--trials", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["details"]["convention"] == "squared"


def test_verify_deterministic(capsys):
    main(["verify", "--lemma", "rowkkt", "--trials", "5", "--seed", "4"])
    a = capsys.readouterr().out
    main(["verify", "--lemma", "rowkkt", "--trials", "5", "--seed", "4"])
    assert capsys.readouterr().out == a


def test_ablate_index(tmp_path):
    cfg = write_cfg(tmp_path, sweep={"width": [4, 6], "seed": [0, 1]})
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rows = list(csv.reader((tmp_path / "a" / "index.csv").open()))
    assert rows[0] == ["run", "width", "seed", "run_seed", "final_loss", "optimum_gap", "regime"]
    assert len(rows) == 5
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["index.csv", "run-0", "run-1", "run-2", "run-3"]


def test_ablate_empty_sweep(tmp_path):
    assert main(["ablate", "--config", write_cfg(tmp_path, sweep={}), "--out", str(tmp_path / "a")]) == 1


def test_sweep_rejected_by_train(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path, sweep={"seed": [1]}), "--out", str(tmp_path / "o")]) == 1


def test_outputs_byte_stable(tmp_path):
    cfg = write_cfg(tmp_path)
    for d in ("x", "y"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    ma = json.loads((tmp_path / "x" / "run-0" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "y" / "run-0" / "manifest.json").read_text())
    ma.pop("wall_clock_seconds"), mb.pop("wall_clock_seconds")
    assert ma == mb
    assert (tmp_path / "x" / "run-0" / "metrics.csv").read_bytes() == (tmp_path / "y" / "run-0" / "metrics.csv").read_bytes()
    for d in ("cx", "cy"):
        main(["construct", "--config", cfg, "--out", str(tmp_path / d)])
    for name in ("params.json", "report.json"):
        assert (tmp_path / "cx" / name).read_bytes() == (tmp_path / "cy" / name).read_bytes()


def test_console_script_help():
    proc = subprocess.run(["dufm", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "ablate" in proc.stdout
