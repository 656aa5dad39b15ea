import csv
import json

import numpy as np
import pytest

from evcore import cli, jsonfmt
from evcore.fbst import EvalueConfig, compute_evalue
from evcore.mc import TruthFunction
from evcore.models import hardy_weinberg_model, product_model


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def _run(tmp_path, name, model, data, *extra):
    src = data if not isinstance(data, dict) else _write(tmp_path / f"{name}.json", data)
    out = tmp_path / f"{name}.report.json"
    code = cli.main(["run", "--model", model, "--data", str(src), "--out", str(out), *extra])
    return code, out


def test_run_schema(tmp_path):
    code, out = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "100000", "--seed", "7")
    assert code == cli.EXIT_OK
    rep = json.loads(out.read_text())
    for key in ("ev", "sev", "delta", "ev_bar", "log_s_star", "log_s_hat", "m", "seed", "model", "hypothesis"):
        assert key in rep
    assert rep["seed"] == 7 and rep["m"] == 100_000
    assert 0 <= rep["ev"] <= 1 and rep["delta"] > 0


def test_run_is_deterministic_across_runs_and_streams(tmp_path):
    data = _write(tmp_path / "hw.json", {"counts": [4, 6, 10]})
    texts = []
    for i, streams in enumerate(["1", "1", "4"]):
        out = tmp_path / f"r{i}.json"
        tf = tmp_path / f"t{i}.json"
        assert cli.main(["run", "--model", "hardy-weinberg", "--data", str(data), "--m", "50000", "--seed", "3",
                         "--streams", streams, "--out", str(out), "--truth", str(tf)]) == 0
        texts.append((out.read_bytes(), tf.read_bytes()))
    assert texts[0] == texts[1] == texts[2]


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("EVCORE_SEED", "12")
    code, out = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "2000")
    assert code == 0 and json.loads(out.read_text())["seed"] == 12
    monkeypatch.setenv("EVCORE_SEED", "x")
    assert _run(tmp_path, "hw2", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "2000")[0] == cli.EXIT_CONFIG


def test_exit_codes(tmp_path, capsys):
    hw = {"counts": [4, 6, 10]}
    assert _run(tmp_path, "a", "hardy-weinberg", hw, "--m", "10")[0] == cli.EXIT_CONFIG
    assert _run(tmp_path, "b", "no-such-model", hw)[0] == cli.EXIT_CONFIG
    assert _run(tmp_path, "c", "hardy-weinberg", hw, "--beta", "1.5")[0] == cli.EXIT_CONFIG
    assert _run(tmp_path, "d", "cv", {"counts": [1, 2, 3]}, "--m", "2000")[0] == cli.EXIT_DATA
    assert "missing field(s) c" in capsys.readouterr().err
    assert _run(tmp_path, "e", "hardy-weinberg", {"counts": [0, 5, 5]}, "--reference", "maxent",
                "--m", "2000")[0] == cli.EXIT_DATA
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, "f", "hardy-weinberg", bad)[0] == cli.EXIT_DATA
    assert _run(tmp_path, "g", "cv", {"c": 0.1, "n": 16, "mean": 10, "std": 1.1}, "--reference", "maxent")[0] \
        == cli.EXIT_CONFIG


def test_run_with_loss_adds_decision(tmp_path):
    code, out = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "5000", "--loss", "2,1,1")
    rep = json.loads(out.read_text())
    assert rep["phi"] == pytest.approx(2 / 3)
    assert rep["decision"] == ("accept" if rep["ev"] >= 2 / 3 else "reject")


def test_each_model_runs(tmp_path):
    gen = np.random.default_rng(0)
    runs = [
        ("cv", {"c": 0.1, "n": 16, "mean": 10.0, "std": 1.1}),
        ("homogeneity", {"table": [[3, 7], [9, 5]]}),
        ("independence", {"table": [[3, 7], [9, 5]]}),
        ("weibull-wearout", {"failures": [0.5, 0.8, 1.1, 0.9, 1.3, 0.7], "rho": 0.5}),
    ]
    for name, data in runs:
        code, out = _run(tmp_path, name, name, data, "--m", "5000")
        assert code == 0, name
    rep = json.loads((tmp_path / "homogeneity.report.json").read_text())
    assert rep["bayes_factor"] > 0
    rows = gen.normal(size=(40, 4)) + [1, 2, 1, 2]
    dose = tmp_path / "dose.csv"
    dose.write_text("x1,x2,x3,x4\n" + "\n".join(",".join(f"{v:.6f}" for v in r) for r in rows) + "\n")
    assert _run(tmp_path, "dose", "dose-equivalence", dose, "--m", "2000")[0] == 0
    wb = tmp_path / "wb.csv"
    wb.write_text("# rho = 0.5\ntime,failed\n0.5,1\n0.8,1\n1.1,1\n0.9,0\n1.3,1\n0.7,1\n")
    assert _run(tmp_path, "wb", "weibull-wearout", wb, "--m", "2000")[0] == 0


# --------------------------------------------------------------- compose

def _report_file(tmp_path, name, ev):
    return _write(tmp_path / name, {"format": "evcore.report/1", "ev": ev})


def test_or_is_max(tmp_path):
    a, b = _report_file(tmp_path, "a.json", 0.2), _report_file(tmp_path, "b.json", 0.9)
    out = tmp_path / "or.json"
    assert cli.main(["compose", "or", str(a), str(b), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["ev"] == 0.9


def test_and_with_full_support_component(tmp_path):
    tf = tmp_path / "hw.tf.json"
    code, _ = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "50000", "--truth", str(tf))
    assert code == 0
    other = TruthFunction.from_dict(jsonfmt.loads(tf.read_text()))
    full = TruthFunction(np.array([-2.0]), np.array([1.0]), log_s_star=-2.0, log_s_hat=-2.0)
    ftf = _write(tmp_path / "full.json", {})
    ftf.write_text(jsonfmt.dumps(full.to_dict()))
    out = tmp_path / "and.json"
    assert cli.main(["compose", "and", str(tf), str(ftf), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["ev"] == pytest.approx(other.ev, abs=1e-12)


def test_and_needs_truth_files(tmp_path):
    a, b = _report_file(tmp_path, "a.json", 0.2), _report_file(tmp_path, "b.json", 0.9)
    assert cli.main(["compose", "and", str(a), str(b)]) == cli.EXIT_DATA
    broken = _write(tmp_path / "tf.json", {"format": "evcore.truth_function/1", "log_thresholds": [1, 0]})
    assert cli.main(["compose", "or", str(broken)]) == cli.EXIT_DATA


def test_and_of_two_runs_matches_product_model(tmp_path):
    xs = ([4, 6, 10], [9, 8, 3])
    tfs = []
    for i, x in enumerate(xs):
        tf = tmp_path / f"t{i}.json"
        code, _ = _run(tmp_path, f"hw{i}", "hardy-weinberg", {"counts": x}, "--m", "200000", "--truth", str(tf),
                       "--k", "256")
        assert code == 0
        tfs.append(str(tf))
    out = tmp_path / "and.json"
    assert cli.main(["compose", "and", *tfs, "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    joint = compute_evalue(*product_model([hardy_weinberg_model(x) for x in xs]), EvalueConfig(m=200_000, seed=1))
    assert abs(res["ev"] - joint.ev) <= 0.02
    assert res["lower"] <= res["ev"] <= res["upper"]


# ---------------------------------------------------------------- report

def test_report_single_row(tmp_path, capsys):
    _, out = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "5000")
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert lines[0].split() == list(cli.REPORT_COLUMNS)
    assert len(lines[1].split()) == 10


def test_report_missing_fields_named(tmp_path, capsys):
    p = _write(tmp_path / "r.json", {"model": "x", "ev": 0.5})
    assert cli.main(["report", str(p)]) == cli.EXIT_DATA
    err = capsys.readouterr().err
    assert "ev_bar" in err and "seed" in err


def test_truth_curve_csv_monotone(tmp_path):
    tf = tmp_path / "tf.json"
    _, out = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "20000", "--truth", str(tf))
    table = tmp_path / "curves.csv"
    assert cli.main(["report", str(out), str(tf), "--csv", str(table)]) == 0
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    w = [(float(r["x"]), float(r["y"])) for r in rows if r["curve"] == "W"]
    assert len(w) == len(TruthFunction.from_dict(jsonfmt.loads(tf.read_text())).log_thresholds) >= 64
    assert all(b[0] > a[0] and b[1] >= a[1] for a, b in zip(w, w[1:]))
    assert sum(r["curve"] == "ev_bar" for r in rows) == 1


def test_sensitivity_grid(tmp_path, capsys):
    refs = ("uniform", "maxent", "exclude1", "exclude2", "exclude3")
    files = []
    for n in (8, 16, 32, 64, 128):
        x = [n // 4, n // 4, n // 2]
        data = _write(tmp_path / f"hw{n}.json", {"counts": x})
        for r in refs:
            out = tmp_path / f"{r}{n}.json"
            assert cli.main(["run", "--model", "hardy-weinberg", "--data", str(data), "--reference", r,
                             "--m", "5000", "--out", str(out)]) == 0
            files.append(str(out))
    capsys.readouterr()
    assert cli.main(["report", *files]) == 0
    text = capsys.readouterr().out
    grid = text.split("\n\n")[1].strip().splitlines()
    assert grid[0].split() == ["reference"] + [f"n={n}" for n in (8, 16, 32, 64, 128)]
    assert [g.split()[0] for g in grid[1:]] == sorted(refs) + ["inconsistency"]
    assert all(len(g.split()) == 6 for g in grid[1:])
    inc = [float(v) for v in grid[-1].split()[1:]]
    assert all(0 <= v <= 1 for v in inc)


def test_report_round_trip_is_byte_identical(tmp_path):
    _, out = _run(tmp_path, "hw", "hardy-weinberg", {"counts": [4, 6, 10]}, "--m", "5000", "--seed", "4")
    text = out.read_text()
    assert jsonfmt.dumps(jsonfmt.loads(text)) == text
