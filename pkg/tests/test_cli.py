import csv
import json

import numpy as np
import pytest

from distforest.cli import main

GOLDEN_EVAL = {"mean_crps": 4.246314671723132, "mean_wis": 4.314876470405769, "crossing_pct": 0.0, "n_test": 200}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    for name, kind, n, seed in [
        ("tr", "gamma", 300, 1),
        ("te", "gamma", 200, 2),
        ("htr", "hetero", 600, 4),
        ("hcal", "hetero", 400, 5),
        ("hte", "hetero", 300, 6),
    ]:
        assert main(["synth", "--kind", kind, "--n", str(n), "--seed", str(seed), "--out", str(d / f"{name}.csv")]) == 0
    assert main(["fit", "--data", str(d / "tr.csv"), "--trees", "5", "--seed", "3", "--out", str(d / "m.json"), "--threads", "1"]) == 0
    assert main(["fit", "--data", str(d / "htr.csv"), "--trees", "5", "--out", str(d / "h.json")]) == 0
    return d


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_synth_writes_header(workdir):
    header, values = read_csv(workdir / "htr.csv")
    assert header == ["x1", "x2", "y"] and values.shape == (600, 3)


def test_fit_summary_schema(workdir, capsys):
    code, out, _ = run(capsys, "fit", "--data", workdir / "tr.csv", "--trees", "3", "--criterion", "pinball",
                       "--levels", "0.1,0.5,0.9", "--out", workdir / "p.json")
    assert code == 0
    summary = json.loads(out)
    assert set(summary) == {"model", "criterion", "trees", "rows", "rows_per_tree", "mean_leaves"}
    assert summary["criterion"] == "pinball" and summary["rows_per_tree"] == 180
    model = json.loads((workdir / "p.json").read_text())
    assert model["criterion"] == {"name": "pinball", "levels": [0.1, 0.5, 0.9]}
    assert model["format_version"] == 1 and len(model["trees"]) == 3


def test_fit_is_thread_independent(workdir, capsys):
    run(capsys, "fit", "--data", workdir / "tr.csv", "--trees", "5", "--seed", "3", "--out", workdir / "m4.json", "--threads", "4")
    assert (workdir / "m4.json").read_text() == (workdir / "m.json").read_text()


def test_eval_golden(workdir, capsys):
    code, out, _ = run(capsys, "eval", "--model", workdir / "m.json", "--data", workdir / "te.csv")
    assert code == 0
    report = json.loads(out)
    assert set(report) == {"mean_crps", "mean_wis", "crossing_pct", "n_test", "grid_step", "coverage", "mean_width"}
    for key, value in GOLDEN_EVAL.items():
        assert report[key] == pytest.approx(value, rel=1e-12)


def test_eval_table(workdir, capsys):
    code, out, _ = run(capsys, "eval", "--model", workdir / "m.json", "--data", workdir / "te.csv", "--format", "table")
    assert code == 0 and "mean_crps" in out and "{" not in out


def test_predict_stdout_and_file(workdir, capsys):
    code, out, _ = run(capsys, "predict", "--model", workdir / "m.json", "--data", workdir / "te.csv", "--target", "y",
                       "--levels", "0.25,0.75")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "q_0.25,q_0.75" and len(lines) == 201
    run(capsys, "predict", "--model", workdir / "m.json", "--data", workdir / "te.csv", "--target", "y",
        "--out", workdir / "q.csv")
    header, q = read_csv(workdir / "q.csv")
    assert header == ["q_0.1", "q_0.5", "q_0.9"]
    assert np.all(np.diff(q, axis=1) >= 0)


@pytest.mark.parametrize("method", ["distributional", "cqr"])
def test_conformal_round_trip(workdir, capsys, method):
    model = workdir / f"c_{method}.json"
    code, out, _ = run(capsys, "conformal-calibrate", "--model", workdir / "h.json", "--data", workdir / "hcal.csv",
                       "--alpha", "0.2", "--method", method, "--out", model)
    assert code == 0
    info = json.loads(out)
    assert info["method"] == method and info["counts"] == {"-1": 400}
    code, out, err = run(capsys, "conformal-predict", "--model", model, "--data", workdir / "hte.csv", "--target", "y")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "lo,hi" and len(lines) == 301
    stats = json.loads(err)
    assert 0.65 <= stats["coverage"] <= 0.95


def test_conformal_groups(workdir, capsys):
    code, out, _ = run(capsys, "conformal-calibrate", "--model", workdir / "h.json", "--data", workdir / "hcal.csv",
                       "--alpha", "0.2", "--group-depth", "1", "--partition-data", workdir / "htr.csv",
                       "--out", workdir / "g.json")
    assert code == 0
    info = json.loads(out)
    assert info["partition"] == [1, 2] and sum(info["counts"].values()) == 400
    assert run(capsys, "conformal-predict", "--model", workdir / "g.json", "--data", workdir / "hte.csv",
               "--target", "y")[0] == 0


def test_bench_small(workdir, capsys):
    code, out, _ = run(capsys, "bench", "--fast-sizes", "64,128,256", "--brute-sizes", "32,64", "--repeats", "3",
                       "--out", workdir / "b.csv")
    assert code == 0
    summary = json.loads(out)
    assert {"correctness_gap", "fast_slope", "brute_slope"} <= set(summary)
    with open(workdir / "b.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["n", "method", "seconds", "repeats"] and len(rows) == 5


def test_config_defaults_and_flag_precedence(workdir, capsys):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"trees": 2, "seed": 3, "criterion": "mse"}))
    code, out, _ = run(capsys, "fit", "--config", cfg, "--data", workdir / "tr.csv", "--out", workdir / "cf.json")
    assert code == 0
    summary = json.loads(out)
    assert summary["trees"] == 2 and summary["criterion"] == "mse"
    code, out, _ = run(capsys, "fit", "--config", cfg, "--trees", "4", "--data", workdir / "tr.csv",
                       "--out", workdir / "cf.json")
    assert json.loads(out)["trees"] == 4


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fit"],
        ["fit", "--data", "x.csv"],
        ["fit", "--data", "x.csv", "--out", "m.json", "--criterion", "pinball"],
        ["fit", "--data", "x.csv", "--out", "m.json", "--levels", "0.5"],
        ["fit", "--data", "x.csv", "--out", "m.json", "--subsample", "1.5"],
        ["predict", "--model", "m.json", "--data", "x.csv", "--levels", "1.5"],
        ["conformal-calibrate", "--model", "m.json", "--data", "x.csv", "--out", "o.json", "--group-depth", "1"],
        ["conformal-calibrate", "--model", "m.json", "--data", "x.csv", "--out", "o.json", "--alpha", "0"],
        ["bench", "--out", "b.csv", "--repeats", "1"],
        ["bench", "--out", "b.csv", "--fast-sizes", "64,32"],
        ["synth", "--kind", "uniform", "--out", "s.csv"],
        ["eval", "--model", "m.json"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert "error" in err


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"bogus": 1}')
    assert run(capsys, "synth", "--config", bad, "--out", tmp_path / "s.csv")[0] == 2
    bad.write_text("not json")
    assert run(capsys, "synth", "--config", bad, "--out", tmp_path / "s.csv")[0] == 2
    assert run(capsys, "synth", "--config", tmp_path / "none.json", "--out", tmp_path / "s.csv")[0] == 2


def test_data_errors_exit_3(workdir, tmp_path, capsys):
    blank = tmp_path / "blank.csv"
    blank.write_text("x,y\n1,2\n3,\n")
    code, _, err = run(capsys, "fit", "--data", blank, "--out", tmp_path / "m.json")
    assert code == 3 and "line 3" in err
    assert run(capsys, "fit", "--data", tmp_path / "missing.csv", "--out", tmp_path / "m.json")[0] == 3
    assert run(capsys, "eval", "--model", workdir / "m.json", "--data", workdir / "hte.csv")[0] == 3
    assert run(capsys, "conformal-predict", "--model", workdir / "m.json", "--data", workdir / "te.csv")[0] == 3
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert run(capsys, "eval", "--model", junk, "--data", workdir / "te.csv")[0] == 3
    code, _, err = run(capsys, "conformal-calibrate", "--model", workdir / "h.json", "--data", workdir / "hcal.csv",
                       "--alpha", "0.001", "--out", tmp_path / "o.json")
    assert code == 3 and "calibration points" in err


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "distforest", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
