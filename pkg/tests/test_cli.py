import json
import subprocess
import sys

import pytest

from latentrepair.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    code = run("synth", "--template", "seven_node", "--records", 20000, "--seed", 3,
               "--output", d / "data.csv", "--roles-out", d / "roles.json", "--spec-out", d / "spec.json")
    assert code == 0
    return d


def test_synth_preprocess_evaluate_round_trip(synth_data, tmp_path):
    d = synth_data
    assert run("preprocess", "--input", d / "data.csv", "--roles", d / "roles.json",
               "--output", tmp_path / "fixed.csv", "--params-out", tmp_path / "params.json",
               "--report", tmp_path / "report.json", "--seed", 1, "--keep-latent") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["n_records"] == 20000
    assert "timings" not in report
    header = (tmp_path / "fixed.csv").read_text().splitlines()[0].split(",")
    assert header[-1] == "L"
    assert run("evaluate", "--train", tmp_path / "fixed.csv", "--test", d / "data.csv",
               "--roles", d / "roles.json", "--latent-column", "L",
               "--report", tmp_path / "eval.json") == 0
    ev = json.loads((tmp_path / "eval.json").read_text())
    assert 0.0 <= ev["auc"] <= 1.0 and ev["rod_abs_log"] >= 0.0


def test_subcommands_exit_zero(synth_data, tmp_path, capsys):
    d = synth_data
    data = ["--input", d / "data.csv", "--roles", d / "roles.json"]
    assert run("identify", *data) == 0
    assert run("partition", *data) == 0
    assert run("estimate", *data, "--params-out", tmp_path / "p.json", "--n-iter", 20) == 0
    assert run("indep-test", "--input", d / "data.csv", "--x", "V0", "--y", "Y", "--z", "V1") == 0
    assert run("evaluate", "--train", d / "data.csv", "--roles", d / "roles.json", "--folds", 3) == 0
    capsys.readouterr()


def test_strict_tau_violation_exit_code(synth_data, tmp_path, capsys):
    d = synth_data
    code = run("preprocess", "--input", d / "data.csv", "--roles", d / "roles.json",
               "--output", tmp_path / "o.csv", "--tau", 9, "--strict-tau")
    assert code == 2
    err = capsys.readouterr().err
    assert "min(|I_c1|, |I_c2|)" in err


def test_tau_violation_degrades_without_strict(synth_data, tmp_path):
    d = synth_data
    assert run("preprocess", "--input", d / "data.csv", "--roles", d / "roles.json",
               "--output", tmp_path / "o.csv", "--tau", 9, "--report", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["tau_requested"] == 9 and rep["tau"] < 9 and rep["warnings"]


def test_usage_errors(capsys):
    assert run("preprocess", "--input", "x.csv") == 1
    assert run("no-such-command") == 1
    assert run("synth", "--output", "a", "--roles-out", "b", "--workers", 0) == 1
    capsys.readouterr()


def test_data_errors(tmp_path, capsys):
    assert run("identify", "--input", tmp_path / "missing.csv", "--roles", tmp_path / "r.json") == 2
    (tmp_path / "bad.csv").write_text("a,b\n1\n")
    (tmp_path / "r.json").write_text(json.dumps({"label": "b", "inadmissible": ["a"]}))
    assert run("identify", "--input", tmp_path / "bad.csv", "--roles", tmp_path / "r.json") == 2
    capsys.readouterr()


def test_config_precedence_and_unknown_keys(synth_data, tmp_path, capsys):
    d = synth_data
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau": 1, "n_iter": 7}))
    args = ["preprocess", "--input", d / "data.csv", "--roles", d / "roles.json",
            "--output", tmp_path / "o.csv", "--config", cfg, "--report", tmp_path / "r.json"]
    assert run(*args) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["settings"]["tau"] == 1 and rep["settings"]["n_iter"] == 7
    assert run(*args, "--tau", 2) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["settings"]["tau"] == 2
    cfg.write_text(json.dumps({"taux": 1}))
    assert run(*args) == 2
    capsys.readouterr()


def test_outputs_byte_identical_across_runs_and_workers(synth_data, tmp_path):
    d = synth_data
    outs = []
    for i, workers in enumerate([1, 1, 4]):
        o = tmp_path / f"o{i}.csv"
        p = tmp_path / f"p{i}.json"
        r = tmp_path / f"r{i}.json"
        assert run("preprocess", "--input", d / "data.csv", "--roles", d / "roles.json",
                   "--output", o, "--params-out", p, "--report", r, "--seed", 11,
                   "--workers", workers) == 0
        outs.append((o.read_bytes(), p.read_bytes(), r.read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "latentrepair", "synth", "--records", "200",
                           "--output", str(tmp_path / "a.csv"), "--roles-out", str(tmp_path / "r.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "latentrepair", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "0.1.0" in proc.stdout
