import csv
import json
import math
import subprocess
import sys

import pytest

from gswinding.cli import DEFAULT_SEED, classify_regime, main


def run(tmp_path, *argv):
    return main([argv[0], "--out", str(tmp_path), *argv[1:]])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_kernel_gaussian(tmp_path):
    assert run(tmp_path, "kernel", "--builtin", "gaussian", "--xmax", "10", "--n", "2001") == 0
    rows = read_csv(tmp_path / "kernel.csv")
    assert rows[0] == ["x", "K", "Ktilde", "KtildeStar"]
    assert len(rows) == 2002
    assert min(float(r[2]) for r in rows[1:]) >= 0
    side = json.loads((tmp_path / "kernel_singular.json").read_text())
    assert side["singular_points"] == [0.0] and side["seed"] == DEFAULT_SEED


def test_kernel_sinc_value(tmp_path):
    assert run(tmp_path, "kernel", "--builtin", "sinc", "--xmax", "10", "--n", "11") == 0
    row = read_csv(tmp_path / "kernel.csv")[2]
    assert float(row[0]) == 1.0 and float(row[1]) == pytest.approx(0.5, abs=1e-15)


def test_kernel_atomic_singular_points(tmp_path):
    assert run(tmp_path, "kernel", "--builtin", "atomic", "--params", "1:0.5,3:0.5",
               "--xmax", "10", "--n", "101") == 0
    pts = json.loads((tmp_path / "kernel_singular.json").read_text())["singular_points"]
    assert pts == pytest.approx([0, math.pi, 2 * math.pi, 3 * math.pi], abs=1e-10)


def test_kernel_degenerate_exit(tmp_path):
    assert run(tmp_path, "kernel", "--builtin", "atomic", "--params", "2:1") == 2


def test_variance_gaussian(tmp_path):
    assert run(tmp_path, "variance", "--builtin", "gaussian", "--T-min", "1", "--T-max", "200") == 0
    rows = read_csv(tmp_path / "variance.csv")
    assert rows[0] == ["T", "mean", "V_K", "V_Ktilde", "boundary"]
    for r in rows[1:]:
        assert abs(float(r[2]) - float(r[3])) / float(r[2]) < 1e-6
    doc = json.loads((tmp_path / "variance.json").read_text())
    assert doc["max_rel_gap"] < 1e-6 and doc["min_V_over_T"] > 0


def test_variance_bessel_stabilizes(tmp_path):
    assert run(tmp_path, "variance", "--builtin", "bessel_j0", "--T-min", "100", "--T-max", "400",
               "--T-count", "5") == 0
    rows = read_csv(tmp_path / "variance.csv")[1:]
    ratios = [float(r[2]) / (float(r[0]) * math.log(float(r[0]))) for r in rows]
    assert max(ratios) / min(ratios) - 1 < 0.1
    doc = json.loads((tmp_path / "variance.json").read_text())
    assert doc["asymptotic_slope"] is None and doc["slope_diverges"]


@pytest.mark.parametrize("name,params,label", [
    ("gaussian", None, "linear"),
    ("bessel_j0", None, "T log T"),
    ("power_cosine", "0.25", "power 1.5"),
])
def test_classify(tmp_path, name, params, label):
    argv = ["classify", "--builtin", name] + (["--params", params] if params else [])
    assert run(tmp_path, *argv) == 0
    assert json.loads((tmp_path / "classify.json").read_text())["regime"] == label


def test_classify_regime_rules():
    T = [100.0, 200.0, 400.0]
    assert classify_regime(T, [t * t for t in T], 2.0) == "quadratic"
    assert classify_regime(T, [2 * t + 1 for t in T], 1.0) == "linear"


def test_simulate_degenerate_exact(tmp_path):
    assert run(tmp_path, "simulate", "--builtin", "atomic", "--params", "2:1", "--T", "5",
               "--n-paths", "50", "--per-path-csv") == 0
    rows = read_csv(tmp_path / "paths.csv")
    assert rows[0] == ["path_index", "T", "delta", "n_segments", "refinements"]
    assert all(abs(float(r[2]) + 10) < 1e-9 for r in rows[1:])


def test_simulate_byte_identical_and_thread_independent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["simulate", "--builtin", "gaussian", "--T", "10", "--n-paths", "300", "--seed", "5"]
    assert main([*argv, "--out", str(a)]) == 0
    assert main([*argv, "--out", str(b), "--threads", "3"]) == 0
    assert (a / "simulate.json").read_bytes() == (b / "simulate.json").read_bytes()
    doc = json.loads((a / "simulate.json").read_text())
    assert doc["seed"] == 5
    assert set(doc) >= {"kernel", "T", "n_paths", "seed", "mean", "var", "se_mean", "se_var",
                        "theory_V", "z", "ks", "p"}


def test_simulate_gaussian_theory_z(tmp_path):
    assert run(tmp_path, "simulate", "--builtin", "gaussian", "--T", "50", "--n-paths", "2000",
               "--theory", "--threads", "4") == 0
    doc = json.loads((tmp_path / "simulate.json").read_text())
    assert abs(doc["z"]) < 3


def test_verify_gaussian(tmp_path):
    code = run(tmp_path, "verify", "--builtin", "gaussian", "--T", "50", "--threads", "4")
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert code == 0 and doc["pass"]
    assert {c["criterion"] for c in doc["checks"]} == {"mean", "variance", "clt", "lower_bound"}


def test_verify_atomic_quadratic_profile(tmp_path):
    code = run(tmp_path, "verify", "--builtin", "atomic", "--params", "1:0.5,3:0.5", "--T", "160",
               "--n-paths", "1000", "--threads", "4")
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert code == 0 and doc["profile"] == "quadratic"
    assert "clt" not in {c["criterion"] for c in doc["checks"]}


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["kernel", "--builtin", "nope"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["variance", "--T-min", "5", "--T-max", "1"])
    assert info.value.code == 1
    assert run(tmp_path, "kernel", "--builtin", "power_cosine", "--params", "0.9") == 1


def test_print_config_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 11, "T": 7.0, "builtin": "sinc"}))
    assert main(["simulate", "--config", str(cfg), "--T", "3", "--print-config"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["seed"] == 11 and shown["T"] == 3.0 and shown["builtin"] == "sinc"
    assert main(["classify", "--print-config"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert (shown["T_min"], shown["T_max"], shown["seed"]) == (100.0, 400.0, DEFAULT_SEED)
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit) as info:
        main(["kernel", "--config", str(cfg)])
    assert info.value.code == 1


def test_measure_json_file(tmp_path):
    doc = {"atoms": [{"freq": 1.0, "mass": 0.5}, {"freq": 3.0, "mass": 0.5}]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    assert run(tmp_path, "kernel", "--measure", str(path), "--xmax", "7", "--n", "8") == 0
    side = json.loads((tmp_path / "kernel_singular.json").read_text())
    assert side["kernel"] == "m.json"
    assert side["singular_points"] == pytest.approx([0, math.pi, 2 * math.pi], abs=1e-10)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gswinding", "kernel", "--builtin", "sinc",
                           "--n", "5", "--xmax", "2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["singular_points"] == [0.0]
