import csv
import hashlib
import json
import subprocess
import sys

import pytest
import yaml

from pisaa import cli
from pisaa.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, EXIT_RUNTIME, main, run_experiment
from pisaa.config import validate_config

TINY = {"name": "tiny", "problem": {"name": "quadratic", "dim": 2}, "n": 200, "stride": 50,
        "partition": {"grid": [0.1, 0.5]}, "seed": 4}


def write(tmp_path, cfg, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_single_replicate_run(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, TINY), "-o", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == str(out)
    traces = list((out / "traces").iterdir())
    assert [p.name for p in traces] == ["pisaa_k1_b0.55_r0.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    entry = manifest["replicates"][0]
    assert entry["status"] == "ok" and entry["iterations"] == 200
    assert entry["sha256"] == hashlib.sha256(traces[0].read_bytes()).hexdigest()
    assert manifest["config_hash"] == validate_config(TINY).config_hash()
    assert {"pisaa", "numpy", "python"} <= set(manifest["versions"])
    assert rows(out / "terminal.csv")[0]["replicates"] == "1"
    assert not (out / "diagnostics.csv").exists()


def test_rerun_and_manifest_round_trip(tmp_path):
    cfg = {**TINY, "kappa": [1, 3], "replicates": 2, "mode": ["pisaa", "psaa", "sa"]}
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["run", write(tmp_path, cfg), "-o", str(a)]) == EXIT_OK
    assert main(["run", write(tmp_path, cfg), "-o", str(b), "-j", "2"]) == EXIT_OK
    assert main(["run", str(a / "manifest.json"), "-o", str(c)]) == EXIT_OK
    for name in ("summary.csv", "terminal.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    for p in (a / "traces").iterdir():
        assert p.read_bytes() == (b / "traces" / p.name).read_bytes() == (c / "traces" / p.name).read_bytes()
    ma, mc = (json.loads((d / "manifest.json").read_text()) for d in (a, c))
    assert ma["spec"] == mc["spec"] and ma["replicates"] == mc["replicates"]


def test_no_two_jobs_share_a_seed(tmp_path):
    cfg = {**TINY, "kappa": [1, 2, 3], "beta": [0.6, 0.8], "replicates": 3, "mode": ["pisaa", "sa"]}
    run_experiment(validate_config(cfg), tmp_path)
    entries = json.loads((tmp_path / "manifest.json").read_text())["replicates"]
    assert len({e["seed"] for e in entries}) == len(entries) == 36
    assert len({e["trace"] for e in entries}) == 36


def test_summary_is_tidy(tmp_path):
    run_experiment(validate_config({**TINY, "replicates": 2, "kappa": [1, 2]}), tmp_path)
    summary = rows(tmp_path / "summary.csv")
    assert list(summary[0]) == ["problem", "mode", "kappa", "beta", "t", "statistic", "value"]
    assert {r["statistic"] for r in summary} == {"best_mean", "best_se", "best_min", "best_max"}
    (tmp_path / "summary.csv").unlink()
    assert main(["summarize", str(tmp_path)]) == EXIT_OK
    assert rows(tmp_path / "summary.csv") == summary


def test_diagnostics_with_oracle(tmp_path):
    cfg = {**TINY, "kappa": [1, 2, 4], "replicates": 2, "oracle": True, "split_budget": True,
           "temperature": {"tau_h": 0.5, "n_tau": 1, "tau_star": 0.5}}
    assert run_experiment(validate_config(cfg), tmp_path) == EXIT_OK
    diag = rows(tmp_path / "diagnostics.csv")
    stats = {r["statistic"] for r in diag}
    assert {"mse", "mse_mean", "mse_se", "re", "re_squared", "re_slope", "re_squared_slope"} <= stats
    re1 = [float(r["value"]) for r in diag if r["statistic"] == "re" and r["kappa"] == "1"]
    assert re1 == [1.0]
    assert len(list((tmp_path / "oracle").iterdir())) >= 1


def test_oracle_verb(tmp_path, capsys):
    cfg = {**TINY, "temperature": {"tau_h": 0.5, "n_tau": 1, "tau_star": 0.5}}
    assert main(["oracle", write(tmp_path, cfg), "-o", str(tmp_path / "o")]) == EXIT_OK
    path = capsys.readouterr().out.strip()
    table = rows(path)
    assert [r["j"] for r in table] == ["1", "2", "3"]


def test_oracle_verb_unsupported(tmp_path):
    cfg = {"problem": {"name": "rastrigin", "dim": 5}, "n": 10}
    assert main(["oracle", write(tmp_path, cfg), "-o", str(tmp_path)]) == EXIT_RUNTIME


def test_validate_verb(tmp_path, capsys):
    assert main(["validate", write(tmp_path, {k: v for k, v in TINY.items() if k != "stride"})]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["lam"] == 0.1 and printed["stride"] == 100
    assert main(["validate", write(tmp_path, {"n": 10, "beta": 0.3}, "bad.yaml")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "problem: required field is missing" in err and "beta: must be > 0.5" in err
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert main(["validate", str(empty)]) == EXIT_CONFIG


def test_bad_worker_count(tmp_path):
    assert main(["run", write(tmp_path, TINY), "-o", str(tmp_path / "o"), "-j", "0"]) == EXIT_CONFIG


@pytest.mark.parametrize("failing,expected", [((), EXIT_OK), ((3,), EXIT_PARTIAL), ((1, 3), EXIT_RUNTIME)])
def test_exit_codes_for_failures(tmp_path, monkeypatch, failing, expected):
    real = cli._run_job

    def flaky(job):
        stem, cfg, *_ = job
        if cfg.kappa in failing:
            return stem, None, "RuntimeError: injected"
        return real(job)

    monkeypatch.setattr(cli, "_run_job", flaky)
    code = run_experiment(validate_config({**TINY, "kappa": [1, 3], "replicates": 2}), tmp_path)
    assert code == expected
    entries = json.loads((tmp_path / "manifest.json").read_text())["replicates"]
    assert all((e["status"] == "failed") == (e["kappa"] in failing) for e in entries)


def test_single_failed_replicate_is_not_fatal(tmp_path, monkeypatch):
    real = cli._run_job

    def flaky(job):
        return (job[0], None, "RuntimeError: injected") if job[0].endswith("_r1") else real(job)

    monkeypatch.setattr(cli, "_run_job", flaky)
    assert run_experiment(validate_config({**TINY, "replicates": 2}), tmp_path) == EXIT_OK
    assert rows(tmp_path / "terminal.csv")[0]["replicates"] == "1"


def test_checkpoint_and_resume(tmp_path):
    cfg = validate_config({**TINY, "n": 400, "checkpoint_every": 100})
    plain = tmp_path / "plain"
    run_experiment(validate_config({**TINY, "n": 400}), plain)
    run_experiment(cfg, tmp_path / "ck")
    ckpt = tmp_path / "ck" / "checkpoints" / "pisaa_k1_b0.55_r0.ckpt"
    assert ckpt.exists()
    trace = tmp_path / "ck" / "traces" / "pisaa_k1_b0.55_r0.csv"
    expected = trace.read_bytes()
    trace.unlink()
    assert main(["resume", str(ckpt)]) == EXIT_OK
    assert trace.read_bytes() == expected == (plain / "traces" / trace.name).read_bytes()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PISAA_OUTPUT_ROOT", str(tmp_path))
    assert main(["run", write(tmp_path, TINY)]) == EXIT_OK
    assert (tmp_path / "tiny" / "manifest.json").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pisaa", "validate", write(tmp_path, TINY)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["n"] == 200
