import json
import subprocess
import sys

import pytest
import yaml

from conftest import CONFIGS


def _run(*args):
    return subprocess.run([sys.executable, "-m", "maryland_nls", *map(str, args)],
                          capture_output=True, text=True)


def _config(tmp_path, **patch):
    cfg = yaml.safe_load((CONFIGS / "quick_d1.yaml").read_text())
    for key, value in patch.items():
        sec, sub = key.split("__")
        cfg.setdefault(sec, {})[sub] = value
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def _failure(out):
    doc = json.loads((out / "failure.json").read_text())
    assert doc["schema_version"] == "1.0" and doc["kind"] == "failure"
    return doc


def test_config_error_exit_2(tmp_path):
    cfg = _config(tmp_path, model__tau=0.5)
    proc = _run("spectrum", "--config", cfg, "--out", tmp_path / "o")
    assert proc.returncode == 2
    assert _failure(tmp_path / "o")["config_error_code"] == "E_TAU"


def test_did_not_converge_exit_3(tmp_path):
    cfg = _config(tmp_path, solver__tol=1e-300, solver__max_r=1)
    proc = _run("solve", "--config", cfg, "--out", tmp_path / "o")
    assert proc.returncode == 3
    doc = _failure(tmp_path / "o")
    assert doc["error"] == "DidNotConverge" and len(doc["history"]) == 2


def test_singular_phase_exit_4(tmp_path):
    cfg = _config(tmp_path, model__theta=0.0)
    proc = _run("spectrum", "--config", cfg, "--out", tmp_path / "o")
    assert proc.returncode == 4
    assert _failure(tmp_path / "o")["error"] == "SingularPhase"


def test_rational_alpha_fails_predicate_only(tmp_path):
    cfg = _config(tmp_path, model__alpha=[1 / 3], model__theta=0.1)
    out = tmp_path / "o"
    proc = _run("spectrum", "--config", cfg, "--out", out)
    assert proc.returncode == 0, proc.stderr
    checks = json.loads((out / "spectrum_checks.json").read_text())
    assert checks["predicates"]["diophantine"]["holds"] is False


def test_delta_zero_solve(tmp_path):
    cfg = _config(tmp_path, solver__delta=0.0)
    out = tmp_path / "o"
    assert _run("solve", "--config", cfg, "--out", out).returncode == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["iterations"] == 0


def test_report_errors(tmp_path):
    assert _run("report", tmp_path / "nothing").returncode == 2
    (tmp_path / "empty").mkdir()
    assert _run("report", tmp_path / "empty").returncode == 2
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "solution.json").write_text("{")
    proc = _run("report", bad)
    assert proc.returncode == 2 and "solution.json" in proc.stderr


def test_quick_pipeline_and_report(tmp_path):
    out = tmp_path / "run"
    for verb in ("spectrum", "separation", "solve", "ldt"):
        proc = _run(verb, "--config", CONFIGS / "quick_d1.yaml", "--out", out, "--threads", 1)
        assert proc.returncode == 0, proc.stderr
    proc = _run("report", out)
    assert proc.returncode == 0
    text = (out / "report.md").read_text()
    assert text.startswith("# Run summary")
    assert (out / "summary.csv").exists()


def test_usage_error():
    with pytest.raises(SystemExit):
        from maryland_nls.cli import run
        run(["bogus"])
