"""INI run configuration: sections [model], [run], [psi] and [verify].

Every key is validated before any computation and all violations are reported
together.  Values in JSON syntax are accepted for lists and mappings.
"""

import configparser
from dataclasses import dataclass, field
import hashlib
import json
import os

import numpy as np

from .errors import ConfigurationError
from .model import MODEL_KEYS, model_from_config

COMMANDS = ("simulate", "estimate", "aux-particle", "cross-validate", "bellman-harris", "verify-assumptions",
            "estimate-profile")

# key -> (parser, default); a default of None means "derived from other keys"
RUN_SCHEMA = {
    "command": (str, None),
    "horizon": (float, 10.0),
    "replicates": (int, 1000),
    "cap": (int, 10**6),
    "seed": (int, 0),
    "threads": (int, None),
    "t_grid": (json.loads, None),
    "t_burn": (float, None),
    "x_bins": (int, 32),
    "age_bins": (int, 64),
    "init_x": (json.loads, None),
    "init_age": (float, 0.0),
    "f": (str, "one"),
    "box_lo": (json.loads, None),
    "box_hi": (json.loads, None),
    "lambda_hat": (float, None),
    "ks_x_bins": (int, 4),
    "record": (str, "false"),
    "offspring_mean": (float, 2.0),
    "dt": (float, 1e-3),
}
PSI_SCHEMA = {
    "d_psi": (int, None),
    "lambda0": (float, 0.01),
    "L": (int, 1),
    "safety_margin": (float, 0.1),
    "jump_count": (str, "false"),
}
VERIFY_SCHEMA = {
    "D": (int, None),
    "renew_upper": (float, None),
    "epsilon0_target": (float, None),
    "samples": (int, 10),
    "n": (int, 10**5),
    "drift_n": (int, 20000),
}
SCHEMAS = {"run": RUN_SCHEMA, "psi": PSI_SCHEMA, "verify": VERIFY_SCHEMA}
BOOLEAN_KEYS = {("run", "record"), ("psi", "jump_count")}


@dataclass
class RunConfig:
    model: object
    model_section: dict
    run: dict
    psi: dict
    verify: dict
    text: str = ""
    source: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def init_x(self):
        return np.asarray(self.run["init_x"], dtype=float)

    def digest(self):
        """Hash of the normalized configuration (seed excluded)."""
        payload = {"model": self.model_section,
                   "run": {k: v for k, v in self.run.items() if k != "seed"},
                   "psi": self.psi, "verify": self.verify}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _parse_bool(value):
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _parse_section(name, raw, errors):
    schema = SCHEMAS[name]
    out = {}
    for key in sorted(set(raw) - set(schema)):
        errors.append(f"{name}.{key}: unknown key")
    for key, (convert, default) in schema.items():
        if key not in raw:
            out[key] = default
            continue
        try:
            out[key] = _parse_bool(raw[key]) if (name, key) in BOOLEAN_KEYS else convert(raw[key])
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            errors.append(f"{name}.{key}: cannot parse {raw[key]!r} ({exc})")
            out[key] = default
    for key in [k for k in out if (name, k) in BOOLEAN_KEYS and isinstance(out[k], str)]:
        out[key] = _parse_bool(out[key])
    return out


def _positive(section, values, keys, errors, strict=True):
    for key in keys:
        v = values.get(key)
        if v is None:
            continue
        if (strict and not v > 0) or (not strict and v < 0):
            errors.append(f"{section}.{key}: must be {'positive' if strict else 'nonnegative'}")


def parse_config_text(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError([f"syntax: {exc}"]) from None
    errors = []
    for section in parser.sections():
        if section not in ("model", "run", "psi", "verify"):
            errors.append(f"{section}: unknown section")
    if not parser.has_section("model"):
        errors.append("model: missing section")
    raw = {s: dict(parser.items(s)) if parser.has_section(s) else {} for s in ("model", "run", "psi", "verify")}
    run = _parse_section("run", raw["run"], errors)
    psi = _parse_section("psi", raw["psi"], errors)
    verify = _parse_section("verify", raw["verify"], errors)

    model = None
    try:
        model = model_from_config(raw["model"]) if parser.has_section("model") else None
    except ConfigurationError as exc:
        errors.extend(exc.violations)

    if run["command"] is not None and run["command"] not in COMMANDS:
        errors.append(f"run.command: must be one of {', '.join(COMMANDS)}")
    _positive("run", run, ("horizon", "replicates", "cap", "x_bins", "age_bins", "ks_x_bins", "offspring_mean", "dt", "threads"), errors)
    _positive("run", run, ("init_age", "seed"), errors, strict=False)
    _positive("psi", psi, ("lambda0", "L"), errors)
    _positive("psi", psi, ("safety_margin",), errors, strict=False)
    _positive("verify", verify, ("D", "renew_upper", "epsilon0_target", "samples", "n", "drift_n"), errors)
    if psi["d_psi"] is not None and psi["d_psi"] < 1:
        errors.append("psi.d_psi: must be a positive integer")

    if model is not None:
        dim = 2 * model.k
        if run["init_x"] is None:
            run["init_x"] = [float(model.renewal.k_renew_upper if model.renewal else 1.0)] * dim
        for key in ("init_x", "box_lo", "box_hi"):
            value = run[key]
            if value is None:
                continue
            try:
                arr = np.asarray(value, dtype=float)
            except (TypeError, ValueError):
                errors.append(f"run.{key}: must be a list of numbers")
                continue
            if arr.shape != (dim,):
                errors.append(f"run.{key}: must list {dim} values")
            elif key == "init_x" and np.any(arr < 0):
                errors.append("run.init_x: telomere lengths must be nonnegative")
        if psi["d_psi"] is not None and psi["d_psi"] < model.birth.d_b:
            errors.append(f"psi.d_psi: must be at least the birth-rate degree {model.birth.d_b}")
    if run["f"] not in ("one", "box"):
        errors.append("run.f: must be 'one' or 'box'")
    elif run["f"] == "box" and (run["box_lo"] is None or run["box_hi"] is None):
        errors.append("run.f: 'box' needs run.box_lo and run.box_hi")
    if run["t_grid"] is not None:
        try:
            grid = np.asarray(run["t_grid"], dtype=float)
            if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
                raise ValueError
        except (TypeError, ValueError):
            errors.append("run.t_grid: must be an increasing list of times")
    if run["t_burn"] is not None and run["horizon"] is not None and not run["t_burn"] < run["horizon"]:
        errors.append("run.t_burn: must be below run.horizon")

    if errors:
        raise ConfigurationError(errors)
    if run["threads"] is None:
        run["threads"] = os.cpu_count() or 1
    if run["t_grid"] is None:
        run["t_grid"] = np.linspace(0.0, run["horizon"], 21).tolist()
    if run["t_burn"] is None:
        run["t_burn"] = run["horizon"] / 2
    if psi["d_psi"] is None:
        psi["d_psi"] = max(1, model.birth.d_b)
    section = {k: v for k, v in raw["model"].items() if k in MODEL_KEYS}
    return RunConfig(model, section, run, psi, verify, text, source)


def parse_config(path):
    with open(path) as fh:
        text = fh.read()
    return parse_config_text(text, source=str(path))
