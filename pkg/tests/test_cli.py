import json
from importlib import resources

import pytest

from tracereg import __version__
from tracereg.cli import EXIT_INPUT, EXIT_OK, main

jsonschema = pytest.importorskip("jsonschema")


@pytest.fixture(scope="module")
def schema():
    ref = resources.files("tracereg") / "data" / "report.schema.json"
    return json.loads(ref.read_text())


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main([*args, "--out", str(out)])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, out, report


def test_select_toy(tmp_path, schema, capsys):
    code, out, report = run(tmp_path, "select", "--data", "builtin:toy")
    assert code == EXIT_OK
    jsonschema.validate(report, schema)
    stdout = capsys.readouterr().out
    assert f"chosen_lambda={report['chosen_lambda']:.6g}" in stdout
    table = (out / "table.csv").read_text().splitlines()
    assert table[0] == "method,lambda_star,mse,rank,time_seconds"
    assert float(table[1].split(",")[1]) == report["chosen_lambda"]
    assert report["version"] == __version__
    assert report["config"]["grid_count"] == 20  # defaults are embedded
    assert "wall_time_seconds" not in report
    assert json.loads((out / "timings.json").read_text())["wall_time_seconds"] >= 0


def test_select_cv_and_log_grid(tmp_path, schema):
    code, _, report = run(tmp_path, "select", "--data", "builtin:toy", "--method", "cv",
                          "--folds", "4", "--grid", "log", "--grid-count", "6")
    assert code == EXIT_OK
    jsonschema.validate(report, schema)
    assert report["fold_count"] == 4 and report["solver_calls"] == 30
    assert report["grid"]["scheme"] == "log_interpolated"


def test_df_at_zero_is_gram_rank(tmp_path, schema, capsys):
    code, _, report = run(tmp_path, "df", "--data", "builtin:toy", "--lambda", "0")
    assert code == EXIT_OK
    jsonschema.validate(report, schema)
    assert report["df"] == report["gram_rank"] == 12
    assert "df=12 " in capsys.readouterr().out


def test_fit(tmp_path, schema):
    code, _, report = run(tmp_path, "fit", "--data", "builtin:toy", "--lambda", "0.1")
    assert code == EXIT_OK
    jsonschema.validate(report, schema)
    assert report["converged"] and len(report["b_hat"]) == 3


def test_simulate_small(tmp_path, schema):
    code, out, report = run(tmp_path, "simulate", "--p1", "3", "--p2", "3", "--n", "60",
                            "--rank", "1", "--replicates", "1", "--grid-count", "10",
                            "--methods", "bic", "cv5")
    assert code == EXIT_OK
    jsonschema.validate(report, schema)
    assert [r["method"] for r in report["rows"]] == ["bic", "cv5"]
    assert (out / "table.json").exists()
    assert (out / "table.csv").read_text().startswith("method,lambda_star")


def test_rerun_from_report_config_is_identical(tmp_path):
    _, out, _ = run(tmp_path, "select", "--data", "builtin:toy", "--grid-count", "8", "--seed", "4")
    first = (out / "report.json").read_bytes()
    out2 = tmp_path / "again"
    assert main(["select", "--config", str(out / "report.json"), "--out", str(out2)]) == EXIT_OK
    assert (out2 / "report.json").read_bytes() == first


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("TRACEREG_OUT", str(tmp_path / "env"))
    assert main(["fit", "--data", "builtin:toy", "--lambda", "0.1"]) == EXIT_OK
    assert (tmp_path / "env" / "report.json").exists()


@pytest.mark.parametrize("args", [
    ["select"],
    ["select", "--data", "missing.csv"],
    ["fit", "--data", "builtin:toy"],
    ["fit", "--data", "builtin:toy", "--lambda", "-1"],
    ["select", "--data", "builtin:toy", "--gamma", "2"],
    ["select", "--data", "builtin:toy", "--method", "cv", "--folds", "50"],
])
def test_bad_input_exit_codes(tmp_path, args, capsys):
    assert main([*args, "--out", str(tmp_path)]) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["select", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INPUT


def test_nonconvergence_gives_nonzero_status(tmp_path):
    code, _, report = run(tmp_path, "fit", "--data", "builtin:toy", "--lambda", "0.001",
                          "--max-iter", "2")
    assert code != EXIT_OK
    assert report["status"] == "not_converged"


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "tracereg", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
