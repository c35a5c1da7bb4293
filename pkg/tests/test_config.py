import numpy as np
import pytest

from telobranch.config import parse_config, parse_config_text
from telobranch.errors import ConfigurationError

MINIMAL = """
[model]
k = 1
delta = 1
Delta = 100
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.model.preset == "model2" and cfg.model.k == 1
    assert cfg.run["horizon"] == 10.0 and cfg.run["replicates"] == 1000 and cfg.run["seed"] == 0
    assert cfg.run["threads"] >= 1 and cfg.run["t_burn"] == 5.0
    assert cfg.run["t_grid"] == np.linspace(0.0, 10.0, 21).tolist()
    assert cfg.psi == {"d_psi": 1, "lambda0": 0.01, "L": 1, "safety_margin": 0.1, "jump_count": False}
    assert cfg.verify["samples"] == 10 and cfg.verify["n"] == 10**5
    assert np.allclose(cfg.init_x, [cfg.model.renewal.k_renew_upper] * 2)


def test_negative_delta_names_the_key():
    with pytest.raises(ConfigurationError) as info:
        parse_config_text(MINIMAL.replace("delta = 1", "delta = -1"))
    assert any(v.startswith("model.delta") for v in info.value.violations)


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError) as info:
        parse_config_text(MINIMAL + "Delta_typo = 3\n")
    assert "model.Delta_typo: unknown key" in info.value.violations


def test_all_violations_reported_together():
    text = MINIMAL.replace("delta = 1", "delta = -1") + "[run]\nhorizon = -2\nbogus = 1\n[extra]\na = 1\n"
    with pytest.raises(ConfigurationError) as info:
        parse_config_text(text)
    found = info.value.violations
    for prefix in ("model.delta", "run.horizon", "run.bogus", "extra"):
        assert any(v.startswith(prefix) for v in found), prefix


@pytest.mark.parametrize("line,key", [
    ("init_x = [1, 2, 3]", "run.init_x"),
    ("init_x = [-1, 2]", "run.init_x"),
    ("f = box", "run.f"),
    ("t_grid = [0, 2, 1]", "run.t_grid"),
    ("record = maybe", "run.record"),
    ("command = fly", "run.command"),
])
def test_run_section_validation(line, key):
    with pytest.raises(ConfigurationError) as info:
        parse_config_text(MINIMAL + "[run]\n" + line + "\n")
    assert any(v.startswith(key) for v in info.value.violations)


def test_missing_model_section():
    with pytest.raises(ConfigurationError) as info:
        parse_config_text("[run]\nhorizon = 1\n")
    assert "model: missing section" in info.value.violations


def test_d_psi_below_birth_degree():
    text = MINIMAL + "birth.kind = custom_poly\nbirth.coeffs = [0, 0, 1]\n[psi]\nd_psi = 1\n"
    with pytest.raises(ConfigurationError) as info:
        parse_config_text(text)
    assert any(v.startswith("psi.d_psi") for v in info.value.violations)


def test_digest_ignores_seed_only():
    a = parse_config_text(MINIMAL + "[run]\nseed = 1\nthreads = 1\n")
    b = parse_config_text(MINIMAL + "[run]\nseed = 2\nthreads = 1\n")
    c = parse_config_text(MINIMAL + "[run]\nseed = 1\nthreads = 1\nhorizon = 3\n")
    assert a.digest() == b.digest() != c.digest()


def test_parse_config_reads_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(MINIMAL)
    assert parse_config(path).source == str(path)
    with pytest.raises(OSError):
        parse_config(tmp_path / "missing.ini")


def test_inline_comments_stripped():
    cfg = parse_config_text(MINIMAL + "preset = model2   ; the default\nbirth.kind = constant ; rate 1\n")
    assert cfg.model.preset == "model2" and cfg.model.birth.kind == "constant"
