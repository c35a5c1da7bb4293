import json

import pytest

from telobranch import cli

MODEL2 = """
[model]
k = 1
delta = 1
Delta = 100
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(tmp_path, command, text, *extra):
    code = cli.main([command, "--config", _write(tmp_path, text), "--out", str(tmp_path / "out"), *extra])
    dirs = sorted((tmp_path / "out" / command).iterdir()) if (tmp_path / "out" / command).exists() else []
    return code, dirs


def test_simulate_zero_rate_single_alive_row(tmp_path):
    text = MODEL2 + "birth.kind = constant\nbirth.coeffs = [0]\n[run]\nhorizon = 2\ninit_x = [3, 4]\nthreads = 1\n"
    code, dirs = _run(tmp_path, "simulate", text)
    assert code == 0 and len(dirs) == 1
    rows = (dirs[0] / "alive.csv").read_text().splitlines()
    assert rows == ["label,x_1,x_2,age", "1,3.0,4.0,2.0"]
    manifest = json.loads((dirs[0] / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 0 and len(manifest["config_hash"]) == 64


def test_same_seed_byte_identical_csv(tmp_path):
    text = MODEL2 + "[run]\nhorizon = 4\ninit_x = [150, 150]\nthreads = 1\n"
    outputs = []
    for sub in ("a", "b"):
        base = tmp_path / sub
        base.mkdir()
        code, dirs = _run(base, "simulate", text, "--seed", "5")
        assert code == 0
        outputs.append([(dirs[0] / f).read_bytes() for f in ("events.csv", "alive.csv")])
    assert outputs[0] == outputs[1]
    assert dirs[0].name.endswith("-s5")


def test_verify_model2_passes(tmp_path, capsys):
    text = MODEL2 + "[run]\nthreads = 1\n[verify]\nn = 20000\nsamples = 4\ndrift_n = 5000\n"
    code, dirs = _run(tmp_path, "verify-assumptions", text)
    report = json.loads((dirs[0] / "report.json").read_text())
    assert code == 0 and report["passed"]
    assert "vanishing_lengthening_probability" in report["routes"]["certified_by"]
    assert (dirs[0] / "renewal.csv").read_text().splitlines()[0] == "x_1,x_2,estimate,stderr,target,pass"
    assert str(dirs[0]) in capsys.readouterr().out


def test_verify_impossible_target_exits_two(tmp_path):
    text = MODEL2 + "[run]\nthreads = 1\n[verify]\nepsilon0_target = 3.9\nn = 5000\nsamples = 3\ndrift_n = 2000\n"
    code, dirs = _run(tmp_path, "verify-assumptions", text)
    assert code == 2
    assert not json.loads((dirs[0] / "report.json").read_text())["renewal"]["passed"]


def test_config_errors_exit_one(tmp_path, capsys):
    code, _ = _run(tmp_path, "simulate", MODEL2.replace("delta = 1", "delta = -1") + "Delta_typo = 2\n")
    assert code == 1
    err = capsys.readouterr().err
    assert "config error: model.delta" in err and "config error: model.Delta_typo: unknown key" in err


def test_bad_flag_values_exit_one(tmp_path):
    assert _run(tmp_path, "simulate", MODEL2, "--seed", "-1")[0] == 1
    assert _run(tmp_path, "simulate", MODEL2, "--threads", "0")[0] == 1


def test_bellman_harris(tmp_path):
    text = MODEL2 + "birth.kind = constant\nbirth.coeffs = [1]\n[run]\nhorizon = 5\ndt = 0.001\nthreads = 1\n"
    code, dirs = _run(tmp_path, "bellman-harris", text)
    report = json.loads((dirs[0] / "report.json").read_text())
    assert code == 0 and report["malthusian_root"] == pytest.approx(1.0, abs=1e-10)
    assert (dirs[0] / "bh_mean.csv").read_text().startswith("t,mean\n")


def test_estimate_and_particle_commands(tmp_path):
    base = (MODEL2 + "[run]\nhorizon = 1\nreplicates = 200\ninit_x = [300, 300]\nthreads = 1\n"
            "t_grid = [0, 0.2, 0.4, 0.6, 0.8, 1.0]\nt_burn = 0.2\n")
    code, dirs = _run(tmp_path, "estimate", base)
    assert code == 0 and (dirs[0] / "estimates.csv").exists()
    code, dirs = _run(tmp_path, "aux-particle", base)
    assert code == 0
    assert (dirs[0] / "paths.csv").read_text().startswith("path_id,n,T_n,I_n,J_n,x_1,x_2,absorbed\n")
    code, dirs = _run(tmp_path, "cross-validate", base.replace("replicates = 200", "replicates = 5000"))
    assert code in (0, 2)
    assert "z" in json.loads((dirs[0] / "report.json").read_text())


def test_estimate_profile_command(tmp_path):
    text = ("[model]\nk = 1\ndelta = 1\nDelta = 5\nbirth.kind = constant\nbirth.coeffs = [1]\n"
            'q_params = {"kind": "exponential", "scale": 1.0, "rate": 1.0}\n'
            "[run]\nhorizon = 8\nt_burn = 4\nreplicates = 4\ninit_x = [3.5, 3.5]\nlambda_hat = 0.9966\nthreads = 1\n")
    code, dirs = _run(tmp_path, "estimate-profile", text)
    assert code == 0
    assert (dirs[0] / "ks.csv").read_text().startswith("x_bin,n,ks,skipped\n")
    assert (dirs[0] / "histogram.csv").read_text().startswith("x_1,x_2,age,weight\n")


def test_module_entry_point_version():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "telobranch", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip().startswith("telobranch ")
