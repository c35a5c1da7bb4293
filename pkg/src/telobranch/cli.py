"""Command-line entry point: ``telobranch <command> --config run.ini``.

Exit status: 0 on success, 2 when a certificate or cross-check fails, 1 on error.
"""

import argparse
from datetime import datetime, timezone
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__, particle, population, profile, renewal, verify
from .config import COMMANDS, parse_config
from .errors import ConfigurationError, EstimationError, ModelValidationError, NumericError
from .model import Alive

log = logging.getLogger("telobranch")

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _init(cfg):
    return Alive(cfg.init_x, cfg.run["init_age"])


def _lyapunov(cfg):
    return verify.lyapunov_build(cfg.model, cfg.psi["lambda0"], cfg.psi["L"])


def _psi(cfg):
    lyap = _lyapunov(cfg)
    return particle.build_psi(cfg.model, lyap, cfg.psi["d_psi"], cfg.psi["safety_margin"], cfg.psi["jump_count"])


def _test_function(cfg):
    if cfg.run["f"] == "one":
        return lambda x, a: np.ones(len(a))
    lo, hi = np.asarray(cfg.run["box_lo"], dtype=float), np.asarray(cfg.run["box_hi"], dtype=float)
    return lambda x, a: np.all((x >= lo) & (x <= hi), axis=1).astype(float)


def run_simulate(cfg, out):
    run = cfg.run
    result = population.simulate_tree(cfg.model, _init(cfg), run["horizon"], run["seed"], cap=run["cap"])
    population.write_events_csv(out / "events.csv", result)
    population.write_alive_csv(out / "alive.csv", result, cfg.model.k)
    _write_json(out / "report.json", {
        "alive": len(result.alive), "divisions": result.divisions,
        "senescent_daughters": result.senescent_daughters, "capped": result.capped,
        "accounting_holds": result.accounting_holds(),
    })
    return EXIT_OK


def run_estimate(cfg, out):
    run = cfg.run
    est = population.estimate_growth_rate(cfg.model, _init(cfg), run["t_grid"], run["replicates"], run["seed"],
                                          burn_in=run["t_burn"], cap=run["cap"], threads=run["threads"])
    population.write_estimates_csv(out / "estimates.csv", est.table)
    m_t = population.estimate_M_t(cfg.model, _init(cfg), _test_function(cfg), run["horizon"], run["replicates"],
                                  run["seed"], cap=run["cap"], threads=run["threads"])
    _write_json(out / "report.json", {
        "growth_rate": est.rate, "ci": [est.ci_low, est.ci_high], "n_capped": est.n_capped,
        "M_t": {"t": run["horizon"], "f": run["f"], "mean": m_t.mean, "stderr": m_t.stderr,
                "n_valid": m_t.n_valid, "n_capped": m_t.n_capped},
    })
    return EXIT_OK


def run_aux_particle(cfg, out):
    run = cfg.run
    psi = _psi(cfg)
    batch = particle.simulate_particles(cfg.model, psi, cfg.init_x, run["init_age"], run["horizon"],
                                        run["replicates"], run["seed"], record=True)
    particle.write_paths_csv(out / "paths.csv", batch.record)
    absorbed = ~batch.alive
    _write_json(out / "report.json", {
        "lambda_psi": psi.lambda_psi, "d_psi": psi.d_psi, "eps1": psi.lyap.eps1,
        "survival_fraction": float(batch.alive.mean()), "mean_jumps": float(batch.n_jumps.mean()),
        "mean_absorption_time": float(batch.death_time[absorbed].mean()) if absorbed.any() else math.nan,
    })
    return EXIT_OK


def run_cross_validate(cfg, out):
    run = cfg.run
    psi = _psi(cfg)
    report = particle.cross_validate_semigroup(cfg.model, psi, cfg.init_x, run["init_age"], _test_function(cfg),
                                               run["horizon"], run["replicates"], run["seed"], threads=run["threads"])
    report["f"] = run["f"]
    _write_json(out / "report.json", report)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def run_bellman_harris(cfg, out):
    run = cfg.run
    life = renewal.LifetimeLaw(cfg.model.birth)
    gamma = run["offspring_mean"]
    t, m = renewal.bh_mean(life, gamma, run["dt"], run["horizon"])
    with open(out / "bh_mean.csv", "w") as fh:
        fh.write("t,mean\n")
        for ti, mi in zip(t, m):
            fh.write(f"{ti!r},{mi!r}\n")
    root = renewal.malthusian_root(life, gamma)
    grid = life.render(run["dt"], max(run["horizon"], life.horizon()))
    residuals = {str(n): renewal.identity_check(grid, n, t_max=run["horizon"]) for n in (1, 2, 3)}
    _write_json(out / "report.json", {
        "offspring_mean": gamma, "malthusian_root": root, "final_mean": float(m[-1]),
        "log_mean_slope": float(np.log(m[-1] / m[len(m) // 2]) / (t[-1] - t[len(t) // 2])),
        "identity_residuals": residuals,
    })
    return EXIT_OK


def run_verify(cfg, out):
    model, v, run = cfg.model, cfg.verify, cfg.run
    setup = model.renewal
    D = v["D"] if v["D"] is not None else (setup.D if setup else None)
    if D is None:
        raise ConfigurationError(["verify.D: required for models without a renewal setup"])
    cert = verify.verify_renewal(model, D=D, renew_upper=v["renew_upper"], x_samples=None, n=v["n"],
                                 seed=run["seed"], target=v["epsilon0_target"], n_points=v["samples"])
    with open(out / "renewal.csv", "w") as fh:
        fh.write(",".join(f"x_{i + 1}" for i in range(model.n_coords)) + ",estimate,stderr,target,pass\n")
        for row in cert.rows():
            xs = ",".join(repr(float(c)) for c in row["x"])
            fh.write(f"{xs},{row['estimate']!r},{row['stderr']!r},{row['target']!r},{int(row['pass'])}\n")
    eps0 = (v["epsilon0_target"] - 1.0) if v["epsilon0_target"] is not None else None
    routes = verify.check_corollaries(model, cfg.psi["lambda0"], cfg.psi["L"], eps0=eps0, D=D)
    lyap = _lyapunov(cfg)
    far = np.full(model.n_coords, lyap.flat_upper + model.Delta)
    points = np.vstack([cert.x_samples, far[None, :]])
    drift = verify.check_lyapunov_drift(model, lyap, points, v["drift_n"], run["seed"])
    passed = cert.passed and bool(routes["certified_by"]) and drift["passed"]
    _write_json(out / "report.json", {
        "renewal": {"passed": cert.passed, "target": cert.target, "D": cert.D, "renew_upper": cert.renew_upper,
                    "b_max": cert.b_max, "min_margin": float(cert.margins.min())},
        "routes": routes, "drift": drift, "passed": passed,
    })
    log.info("renewal %s, routes %s, drift %s", "PASS" if cert.passed else "FAIL",
             routes["certified_by"] or "none", "PASS" if drift["passed"] else "FAIL")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def run_estimate_profile(cfg, out):
    run, model = cfg.run, cfg.model
    lam = run["lambda_hat"]
    if lam is None:
        lam = population.estimate_growth_rate(model, _init(cfg), run["t_grid"], run["replicates"], run["seed"],
                                              burn_in=run["t_burn"], cap=run["cap"], threads=run["threads"]).rate
    hist = profile.estimate_stationary(model, _init(cfg), run["t_burn"], run["horizon"], run["replicates"],
                                       bins=(run["x_bins"], run["age_bins"]), cap=run["cap"], seed=run["seed"] + 1,
                                       lambda_hat=lam)
    hist.to_csv(out / "histogram.csv")
    ks = profile.check_product_form(hist, model, lam, x_edges=run["ks_x_bins"])
    ks.to_csv(out / "ks.csv")
    report = {"lambda_hat": lam, "n_samples": hist.n_samples, "effective_size": hist.effective_size,
              "stabilization_tv": hist.stabilization, "max_ks": ks.max_ks, "weighted_ks": ks.weighted_ks,
              "bins_checked": len(ks.bins), "bins_skipped": len(ks.skipped)}
    if hist.dim <= 4:
        report["factorization"] = profile.marginal_factorization_report(hist)
    _write_json(out / "report.json", report)
    return EXIT_OK


HANDLERS = {
    "simulate": run_simulate,
    "estimate": run_estimate,
    "aux-particle": run_aux_particle,
    "cross-validate": run_cross_validate,
    "bellman-harris": run_bellman_harris,
    "verify-assumptions": run_verify,
    "estimate-profile": run_estimate_profile,
}


def output_dir(base, command, cfg):
    return Path(base) / command / f"{cfg.digest()[:12]}-s{cfg.run['seed']}"


def run(command, cfg, out_base="out"):
    """Dispatch ``command``; returns (exit status, output directory)."""
    out = output_dir(out_base, command, cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", {
        "command": command, "config_hash": cfg.digest(), "seed": cfg.run["seed"], "version": __version__,
        "config_source": cfg.source, "config_text": cfg.text,
        "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    })
    return HANDLERS[command](cfg, out), out


def build_parser():
    parser = argparse.ArgumentParser(prog="telobranch", description="Telomere-structured branching population tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="INI file with [model], [run], [psi], [verify] sections")
    parser.add_argument("--out", default="out", help="base output directory (default: out)")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--threads", type=int, help="overrides run.threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError(["--seed: must be nonnegative"])
            cfg.run["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigurationError(["--threads: must be positive"])
            cfg.run["threads"] = args.threads
        status, out = run(args.command, cfg, args.out)
    except ConfigurationError as exc:
        for line in exc.violations:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ModelValidationError, EstimationError, NumericError, ValueError) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(os.fspath(out))
    return status


if __name__ == "__main__":
    sys.exit(main())
