"""Numerical verification of the Lyapunov, renewal and growth-order conditions of a model."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import renewal, streams
from .errors import ConfigurationError, ModelValidationError
from .model import divide, enumerate_shortening_sets

SIGMA = 3.0


# -------------------------------------------------------------- lambda bound


def _laplace_h_neg(model, x, lam):
    """E[exp(lam V)] for the lengthening amount drawn at post-shortening value x."""
    return model.lengthening.laplace_neg(x, lam)


def large_threshold(model, L, b_max=None):
    """Coordinates above this value count as large for the lengthening bound."""
    b_max = model.renewal.b_max if b_max is None else b_max
    return b_max * L - 2 * model.Delta - model.delta


def _coordinate_factor(model, r, lam, tau):
    """Per-coordinate factor 1 + q(r) (E[e^{lam V}] - 1) on the large region, 1 elsewhere."""
    r = np.asarray(r, dtype=float)
    q = np.asarray(model.lengthening.probability(r), dtype=float)
    factor = 1.0 + q * (_laplace_h_neg(model, r, lam) - 1.0)
    return np.where(r > tau, factor, 1.0)


def _log_mean_exp(z):
    """log(expm1(z) / z), the log moment generating function of a uniform on [0, 1]."""
    if z < 1e-8:
        return z / 2
    if z > 700:
        return z + math.log1p(-math.exp(-z)) - math.log(z)
    return math.log(math.expm1(z) / z)


def _log_mean_exp_minus_one(z):
    """log(expm1(z) / z - 1)."""
    if z > 700:
        return z - math.log(z) + math.log1p(-(1 + z) * math.exp(-z))
    if z < 1e-4:
        return math.log(z / 2 + z * z / 6)
    return math.log((math.expm1(z) - z) / z)


def _log1p_exp(v):
    return v + math.log1p(math.exp(-v)) if v > 0 else math.log1p(math.exp(v))


def _exp_clipped(v):
    return math.exp(v) if v < 709 else math.inf


@dataclass(frozen=True)
class LambdaValue:
    value: float
    method: str  # "closed-form" or "grid-sup"
    certified: bool


def capital_lambda(model, lam, L, b_max=None, grid=None):
    """Supremum over trait pairs of the lengthening-weighted exponential moment.

    Lengthening acts independently per coordinate, so the supremum factorizes
    into the 2k-th power of a one-coordinate supremum over the large region.
    Presets use monotonicity for a closed form; other models take a grid
    supremum over ``grid`` (lo, hi, n), reported as non-certified.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    tau = large_threshold(model, L, b_max)
    n = 2 * model.k
    if model.preset == "model1":
        z = lam * model.Delta / (max(tau, 0.0) + 1.0)
        return LambdaValue(_exp_clipped(n * _log_mean_exp(z)), "closed-form", True)
    if model.preset == "model2":
        z = lam * model.Delta
        q_sup = model.lengthening.probability.sup_above(tau)
        if q_sup <= 0:
            return LambdaValue(1.0, "closed-form", True)
        # log(C - 1) with C = E[exp(lam V)], V uniform on [0, Delta]
        log_excess = math.log(q_sup) + _log_mean_exp_minus_one(z)
        return LambdaValue(_exp_clipped(n * _log1p_exp(log_excess)), "closed-form", True)
    if grid is None:
        raise ValueError("custom models need a grid (lo, hi, n) for the lengthening bound")
    lo, hi, count = grid
    r = np.linspace(lo, hi, int(count))
    best = float(np.max(_coordinate_factor(model, r, lam, tau)))
    return LambdaValue(max(best, 1.0) ** n, "grid-sup", False)


# ---------------------------------------------------------------- lyapunov


@dataclass(frozen=True)
class LyapunovFunction:
    """V(x) = exp(lam0 * sum_i max(x_i - b_max * L + Delta + delta, 0))."""

    k: int
    lam0: float
    L: int
    b_max: float
    Delta: float
    delta: float
    eps1: float
    lam_value: float = field(default=None, compare=False)

    @property
    def flat_upper(self):
        return self.b_max * self.L - self.Delta - self.delta

    @property
    def v_min(self):
        return 1.0

    @property
    def c_v(self):
        return math.exp(2 * self.k * self.lam0 * max(self.delta, self.Delta))

    def log_value(self, x):
        x = np.asarray(x, dtype=float)
        return self.lam0 * np.sum(np.maximum(x - self.flat_upper, 0.0), axis=-1)

    def __call__(self, x):
        return np.exp(self.log_value(x))

    def ratio(self, y, x):
        """V(y) / V(x) without overflow."""
        return np.exp(self.log_value(y) - self.log_value(x))


def lyapunov_build(model, lam0, L, b_max=None):
    b_max = model.renewal.b_max if b_max is None else b_max
    if not b_max > model.Delta + model.delta:
        raise ModelValidationError("the Lyapunov construction needs b_max > Delta + delta")
    if not (isinstance(L, (int, np.integer)) and L >= 1):
        raise ValueError("L must be a positive integer")
    lam = capital_lambda(model, lam0, L, b_max)
    eps1 = (1.0 + model.shortening.laplace(lam0)) * lam.value - 1.0
    return LyapunovFunction(model.k, lam0, int(L), b_max, model.Delta, model.delta, eps1, lam.value)


def _daughter_ratios(model, lyap, x, n, rng, bits=None):
    xs = np.broadcast_to(np.asarray(x, dtype=float), (n, model.n_coords))
    batch = divide(model, xs, rng.random((n, model.n_division_draws)), bits=bits)
    ratio = np.where(batch.alive_a, lyap.ratio(batch.daughter_a, x), 0.0)
    return batch, ratio


def _mean_se(values):
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def check_lyapunov_drift(model, lyap, xs, n, seed, eps1=None, max_k_enumeration=10):
    """Monte Carlo check of the two drift inequalities at each trait in ``xs``.

    Exit inequality: twice the V-weighted mass of alive daughters that leave
    the return box [0, b_max * L]^{2k} is at most (1 + eps1) V(x).
    Per-set inequality: for every shortening set, the V-weighted mass of an
    alive daughter is at most (1 + eps1) V(x).
    Both sides are divided by V(x); a point passes when the estimate is at
    most the bound plus 3 standard errors.
    """
    eps1 = lyap.eps1 if eps1 is None else eps1
    bound = 1.0 + eps1
    box = lyap.b_max * lyap.L
    if model.k > max_k_enumeration:
        raise ValueError("per-set inequality enumerates 2^k shortening sets; k too large")
    sets = enumerate_shortening_sets(model.k)
    rows = []
    for idx, x in enumerate(np.atleast_2d(np.asarray(xs, dtype=float))):
        rng = streams.generator(seed, idx)
        batch, ratio = _daughter_ratios(model, lyap, x, n, rng)
        outside = np.any(batch.daughter_a > box, axis=1)
        exit_mean, exit_se = _mean_se(2.0 * ratio * outside)
        per_set = []
        for s in sets:
            _, r = _daughter_ratios(model, lyap, x, n, rng, bits=s.bit_array)
            per_set.append(_mean_se(r))
        worst = max(per_set, key=lambda p: p[0] - SIGMA * p[1])
        rows.append({
            "x": x.tolist(),
            "exit_mass": exit_mean,
            "exit_se": exit_se,
            "exit_pass": bool(exit_mean <= bound + SIGMA * exit_se),
            "per_set_worst": worst[0],
            "per_set_se": worst[1],
            "per_set_pass": all(m <= bound + SIGMA * se for m, se in per_set),
        })
    return {
        "eps1": eps1,
        "bound": bound,
        "points": rows,
        "passed": all(r["exit_pass"] and r["per_set_pass"] for r in rows),
    }


# ------------------------------------------------------------------ renewal


@dataclass(eq=False)
class RenewalCertificate:
    D: int
    renew_upper: float
    b_max: float
    target: float
    analytic_bound: float
    x_samples: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray

    @property
    def margins(self):
        return self.estimates - SIGMA * self.stderr - self.target

    @property
    def passed(self):
        return bool(np.all(self.margins >= 0))

    def rows(self):
        return [
            {"x": x.tolist(), "estimate": float(e), "stderr": float(s), "target": self.target,
             "pass": bool(e - SIGMA * s >= self.target)}
            for x, e, s in zip(self.x_samples, self.estimates, self.stderr)
        ]


def restricted_descendants(model, x, D, renew_upper, b_max, n, rng):
    """Per-root counts of generation-D descendants that stay in [0, b_max]^{2k}
    at every generation and end in [0, renew_upper]^{2k}."""
    cells = np.broadcast_to(np.asarray(x, dtype=float), (n, model.n_coords)).copy()
    roots = np.arange(n)
    for _ in range(D):
        batch = divide(model, cells, rng.random((len(cells), model.n_division_draws)))
        kids = np.concatenate([batch.daughter_a, batch.daughter_b])
        alive = np.concatenate([batch.alive_a, batch.alive_b])
        owner = np.concatenate([roots, roots])
        keep = alive & np.all(kids <= b_max, axis=1)
        cells, roots = kids[keep], owner[keep]
    inside = np.all(cells <= renew_upper, axis=1)
    return np.bincount(roots[inside], minlength=n).astype(float)


def renewal_samples(model, renew_upper, count, seed):
    """Sample traits in [0, renew_upper]^{2k}: the two corners, then uniform draws."""
    rng = streams.generator(seed, 0x5A)
    corners = [np.zeros(model.n_coords), np.full(model.n_coords, renew_upper)]
    extra = rng.uniform(0.0, renew_upper, size=(max(count - 2, 0), model.n_coords))
    return np.vstack(corners + [extra])[:count]


def verify_renewal(model, D=None, renew_upper=None, b_max=None, x_samples=None, n=10**5, seed=0, target=None, n_points=10):
    """Certificate that the restricted D-generation kernel returns at least ``target`` descendants."""
    setup = model.renewal
    D = setup.D if D is None else D
    renew_upper = setup.k_renew_upper if renew_upper is None else renew_upper
    b_max = setup.b_max if b_max is None else b_max
    if renew_upper > b_max:
        raise ValueError("the renewal box must lie inside [0, b_max]^{2k}")
    analytic = 1.0 + setup.eps0 if setup is not None else math.nan
    target = analytic if target is None else target
    xs = renewal_samples(model, renew_upper, n_points, seed) if x_samples is None else np.atleast_2d(x_samples)
    est, se = [], []
    for i, x in enumerate(xs):
        counts = restricted_descendants(model, x, D, renew_upper, b_max, n, streams.generator(seed, 1, i))
        m, s = _mean_se(counts)
        est.append(m)
        se.append(s)
    return RenewalCertificate(D, renew_upper, b_max, float(target), analytic, xs, np.array(est), np.array(se))


# --------------------------------------------------------------- routes


def _decays(values):
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(values) <= 1e-15) and values[-1] < 1e-6 * max(values[0], 1e-300))


def rate_envelope(birth):
    """Polynomial upper envelope and eventual positive lower bound of the birth rate."""
    ages = np.concatenate([[0.0], np.logspace(-3, 6, 400)])
    upper_ok = bool(np.all(birth(ages) <= birth.envelope(ages) * (1 + 1e-12)))
    tail = ages[ages >= birth.a0]
    lower_ok = bool(birth.b0 > 0 and np.all(birth(tail) >= birth.b0 * (1 - 1e-12)))
    return {"upper_envelope": upper_ok, "eventual_lower_bound": lower_ok, "b_tilde": birth.b_tilde, "d_b": birth.d_b,
            "a0": birth.a0, "b0": birth.b0}


def check_corollaries(model, lam0, L, eps0=None, D=None, rate_bounds=None, b_max=None):
    """Evaluate every route that certifies the Lyapunov and growth-order conditions.

    Routes: ``lyapunov_inequality`` (x-independent rate),
    ``bounded_rate_inequality`` (constant rate bounds ``rate_bounds`` = (b1, b2)),
    ``vanishing_lengthening`` (maximal lengthening amount tends to 0) and
    ``vanishing_lengthening_probability`` (lengthening probability tends to 0).
    """
    setup = model.renewal
    eps0 = setup.eps0 if eps0 is None else eps0
    D = setup.D if D is None else D
    if eps0 is None or D is None:
        raise ConfigurationError("eps0 and D are required when the model has no renewal setup")
    lam = capital_lambda(model, lam0, L, b_max)
    laplace_g = model.shortening.laplace(lam0)
    lhs = (1.0 + laplace_g) * lam.value
    growth = (1.0 + eps0) ** (1.0 / D)
    routes = {}

    eps1 = lhs - 1.0
    order = None
    if eps1 > 0 and growth > 1 and not model.birth.is_zero:
        alpha = renewal.solve_alpha(model.birth, eps0, D)
        beta = renewal.solve_beta(model.birth, eps1)
        order = renewal.check_order(alpha, beta, model.birth)
    routes["lyapunov_inequality"] = {
        "lhs": lhs, "rhs": growth, "lambda": lam.value, "certified_lambda": lam.certified,
        "order": order, "passed": bool(lhs < growth and lam.certified and order is not None
                                       and order["order"] and order["windowed_mass_positive"]),
    }

    if rate_bounds is None and model.birth.degree == 0 and not model.birth.is_zero:
        rate_bounds = (model.birth.coeffs[0], model.birth.coeffs[0])
    if rate_bounds is not None:
        b1, b2 = rate_bounds
        rhs = (b1 / b2) * (growth - 1.0) + 1.0
        routes["bounded_rate_inequality"] = {
            "lhs": lhs, "rhs": rhs, "b1": b1, "b2": b2,
            "alpha": b1 * (growth - 1.0), "beta": b2 * eps1,
            "passed": bool(lhs < rhs and lam.certified),
        }
    else:
        routes["bounded_rate_inequality"] = {"applicable": False, "passed": False}

    envelope = rate_envelope(model.birth)
    envelope_ok = envelope["upper_envelope"] and envelope["eventual_lower_bound"]
    grid = np.logspace(0, 12, 49)
    widths = np.asarray(model.lengthening.width(grid), dtype=float)
    lam_decay = _lambda_decay(model, b_max)
    routes["vanishing_lengthening"] = {
        "width_decays": _decays(widths), "lambda_tends_to_one": lam_decay, "envelope": envelope,
        "passed": bool(_decays(widths) and lam_decay and envelope_ok),
    }
    probs = np.asarray(model.lengthening.probability(grid), dtype=float)
    routes["vanishing_lengthening_probability"] = {
        "probability_decays": _decays(probs), "lambda_tends_to_one": lam_decay, "envelope": envelope,
        "passed": bool(_decays(probs) and lam_decay and envelope_ok),
    }
    return {
        "lam0": lam0, "L": L, "eps0": eps0, "D": D, "eps1": eps1,
        "routes": routes,
        "certified_by": [name for name, r in routes.items() if r["passed"]],
    }


def _lambda_decay(model, b_max=None, lams=(0.1, 1.0, 10.0), eps=1e-3):
    """Whether Lambda(lam, L) falls below 1 + eps for some L <= 2^40 at each sampled lam."""
    if model.preset not in ("model1", "model2"):
        return False
    for lam in lams:
        if not any(capital_lambda(model, lam, 2**j, b_max).value <= 1 + eps for j in range(41)):
            return False
    return True
