"""The psi-weighted auxiliary particle: an absorbed jump process whose semigroup is
e^{-lambda_psi t} M_t(f psi) / psi.

Between jumps the particle ages.  It jumps at rate
lambda_psi + b(a) - d/da log psi(x, a); a jump either kills it or moves daughter-A
style to (x + u, 0), where the shortening set I and lengthening set J are drawn
with probabilities proportional to the V-weighted kernel masses d^{I,J}(x).

The birth rate is taken to depend on age only, as in every model this package builds.
"""

from dataclasses import dataclass
import itertools
import json
import math

import numpy as np
from scipy import integrate

from . import streams
from .errors import NumericError
from .model import Alive, divide
from .population import estimate_M_t

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(16)
REJECTION_GUARD = 10**5
THINNING_WINDOW = 1.0


# ---------------------------------------------------------------- weight


@dataclass(frozen=True)
class PsiWeight:
    """psi(x, a) = (1 + a^d_psi) V(x) with its normalization rate lambda_psi."""

    d_psi: int
    lyap: object
    lambda_psi: float

    def age_factor(self, a):
        return 1.0 + np.asarray(a, dtype=float) ** self.d_psi

    def log_psi(self, x, a):
        return np.log(self.age_factor(a)) + self.lyap.log_value(x)

    def __call__(self, x, a):
        return np.exp(self.log_psi(x, a))

    def dlog_da(self, a):
        """d/da log psi = d_psi a^(d_psi - 1) / (1 + a^d_psi)."""
        a = np.asarray(a, dtype=float)
        d = self.d_psi
        top = np.ones_like(a) if d == 1 else d * a ** (d - 1)
        return top / (1.0 + a**d)


def _age_sup(func):
    grid = np.concatenate([[0.0], np.logspace(-6, 6, 4001)])
    return float(np.max(func(grid)))


def psi_constants(d_psi, d_b):
    """(C_psi, C'_psi): sups over ages of d/da log psi and (1 + a^d_b)/(1 + a^d_psi)."""
    c_psi = _age_sup(lambda a: (np.ones_like(a) if d_psi == 1 else d_psi * a ** (d_psi - 1)) / (1 + a**d_psi))
    c_prime = _age_sup(lambda a: (1 + a**d_b) / (1 + a**d_psi))
    return c_psi, c_prime


def jump_count_constant(lam, birth, eps1, return_scale=1.0):
    """2 b_tilde (1 + eps1) int_0^inf (1 + (a0 * return_scale + s)^d_b) e^{-lam s} ds."""
    shift = birth.a0 * return_scale
    value, _ = integrate.quad(lambda s: (1 + (shift + s) ** birth.d_b) * math.exp(-lam * s), 0.0, np.inf)
    return 2 * birth.b_tilde * (1 + eps1) * value


def compute_lambda_psi(model, lyap, d_psi, safety_margin=0.1, jump_count=False, return_scale=1.0):
    """Normalization rate from the proof constants, enlarged by ``safety_margin``.

    With ``jump_count`` the rate is further multiplied by 1.5 until the
    jump-count constant drops below 1.
    """
    birth = model.birth
    if d_psi < birth.d_b or d_psi < 1:
        raise ValueError("d_psi must be a positive integer no smaller than the birth-rate degree")
    c_psi, c_prime = psi_constants(d_psi, birth.d_b)
    bound = max(c_psi + 2 * birth.b_tilde * c_prime * (1 + lyap.eps1), c_psi + 2 * birth.b_tilde * c_prime / lyap.v_min)
    lam = bound * (1.0 + safety_margin)
    if jump_count:
        while jump_count_constant(lam, birth, lyap.eps1, return_scale) >= 1:
            lam *= 1.5
    return lam


def build_psi(model, lyap, d_psi=None, safety_margin=0.1, jump_count=False):
    d_psi = max(1, model.birth.d_b) if d_psi is None else d_psi
    return PsiWeight(d_psi, lyap, compute_lambda_psi(model, lyap, d_psi, safety_margin, jump_count))


def lambda_psi_grid_check(model, psi, xs, ages):
    """Largest left sides over the grid of the two rate inequalities that lambda_psi must dominate.

    kernel: d/da log psi + b K(V)(x) / psi(x, a) - b
    floor:  d/da log psi + 2 b / psi(x, a) - b
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ages = np.asarray(ages, dtype=float)
    b = model.birth(ages)
    age_factor = psi.age_factor(ages)
    kernel_ratio = 2.0 * kernel_mass_ratio(model, psi.lyap, xs)
    base = psi.dlog_da(ages) - b
    kernel = base + b * kernel_ratio / age_factor
    floor = base + 2.0 * b / np.exp(psi.log_psi(xs, ages))
    worst = max(float(kernel.max()), float(floor.max()))
    return {"kernel_lhs": float(kernel.max()), "floor_lhs": float(floor.max()), "lambda_psi": psi.lambda_psi,
            "passed": bool(worst < psi.lambda_psi)}


def jump_rate(model, psi, a):
    rate = psi.lambda_psi + model.birth(a) - psi.dlog_da(a)
    if np.any(rate <= 0):
        raise NumericError("nonpositive jump rate: lambda_psi is too small")
    return rate


def no_jump_survival(model, psi, a, s):
    """Probability of no jump during [0, s] from age a."""
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    log = -psi.lambda_psi * s - (model.birth.integral(a + s) - model.birth.integral(a))
    return np.exp(log) * psi.age_factor(a + s) / psi.age_factor(a)


# ------------------------------------------------------ kernel masses d^{I,J}


def _flat_part(lo, hi, theta):
    return np.clip(np.minimum(hi, theta) - lo, 0.0, None)


def _v_integral(lo, hi, theta, lam0, shift):
    """int_lo^hi exp(lam0 max(y - theta, 0) - shift) dy for 0 <= lo (0 when hi <= lo)."""
    hi = np.maximum(hi, lo)
    flat = _flat_part(lo, hi, theta) * np.exp(-shift)
    start = np.maximum(lo, theta)
    with np.errstate(over="ignore"):
        top = np.exp(lam0 * (hi - theta) - shift)
        bottom = np.exp(lam0 * (start - theta) - shift)
    steep = np.where(hi > theta, (top - bottom) / lam0, 0.0)
    return flat + steep


def _weight_functions(model, lyap, lo, hi):
    """Per-coordinate integrands for 'not lengthened' and 'lengthened' at post-shortening s."""
    theta, lam0 = lyap.flat_upper, lyap.lam0
    law = model.lengthening

    def not_lengthened(s, shift):
        q = np.asarray(law.probability(s), dtype=float)
        inside = (s >= 0) & (s >= lo) & (s <= hi)
        with np.errstate(over="ignore"):
            v = np.exp(lam0 * np.maximum(s - theta, 0.0) - shift)
        return np.where(inside, (1.0 - q) * v, 0.0)

    def lengthened(s, shift):
        q = np.asarray(law.probability(s), dtype=float)
        w = np.asarray(law.width(s), dtype=float)
        a = np.maximum(np.maximum(s, 0.0), lo)
        b = np.minimum(s + w, hi)
        return q / w * np.where(b > a, _v_integral(a, b, theta, lam0, shift), 0.0)

    return not_lengthened, lengthened


def _breakpoints(model, lyap, lo, hi):
    law = model.lengthening
    targets = [0.0, lyap.flat_upper]
    pts = [0.0, lyap.flat_upper]
    for bound in (lo, hi):
        if math.isfinite(bound):
            targets.append(bound)
            pts.append(bound)
    for target in targets:
        pts.extend(law.reach_points(target))
    pts.extend(law.probability.kinks())
    return np.unique(np.asarray(pts, dtype=float))


def coordinate_weights(model, lyap, x, box=None):
    """Per-coordinate factors c[i, shortened, lengthened] normalized by V's factor at x_i.

    ``x`` has shape (n, 2k); the result has shape (n, 2k, 2, 2).  With ``box``
    = (lo, hi) arrays, the landing coordinate is restricted to [lo_i, hi_i].
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, dim = x.shape
    delta = model.delta
    out = np.empty((n, dim, 2, 2))
    shift_all = lyap.lam0 * np.maximum(x - lyap.flat_upper, 0.0)
    for i in range(dim):
        lo = -np.inf if box is None else float(box[0][i])
        hi = np.inf if box is None else float(box[1][i])
        f0, f1 = _weight_functions(model, lyap, lo, hi)
        xi, shift = x[:, i], shift_all[:, i]
        out[:, i, 0, 0] = f0(xi, shift)
        out[:, i, 0, 1] = f1(xi, shift)
        # shortened: average over s uniform on [x_i - delta, x_i], split at kinks
        start, stop = xi - delta, xi
        kinks = _breakpoints(model, lyap, lo, hi)
        edges = np.sort(np.column_stack([start, np.clip(kinks[None, :], start[:, None], stop[:, None]), stop]), axis=1)
        left, right = edges[:, :-1], edges[:, 1:]
        half = 0.5 * (right - left)
        mid = 0.5 * (right + left)
        nodes = mid[..., None] + half[..., None] * GAUSS_NODES
        weights = half[..., None] * GAUSS_WEIGHTS
        sh = shift[:, None, None]
        out[:, i, 1, 0] = np.sum(weights * f0(nodes, sh), axis=(1, 2)) / delta
        out[:, i, 1, 1] = np.sum(weights * f1(nodes, sh), axis=(1, 2)) / delta
    return out


def chromosome_weights(c, k):
    """Weights of the 8 per-chromosome choices (bit, lengthened low end, lengthened high end).

    Bit 0 shortens the low end (coordinate j) and bit 1 the high end (j + k).
    Returns shape (n, k, 2, 2, 2).
    """
    low, high = c[:, :k], c[:, k:]
    w = np.empty(c.shape[:1] + (k, 2, 2, 2))
    for bit in (0, 1):
        w[:, :, bit] = low[:, :, 1 - bit, :, None] * high[:, :, bit, None, :]
    return w


def kernel_mass_ratio(model, lyap, x, box=None):
    """sum over (I, J) of d^{I,J}(x) / V(x), shape (n,)."""
    c = coordinate_weights(model, lyap, x, box)
    w = chromosome_weights(c, model.k)
    return np.prod(w.sum(axis=(2, 3, 4)), axis=1) / 2**model.k


def d_values(model, lyap, x, box=None, method="quadrature", n=10**5, rng=None):
    """d^{I,J}(x) / V(x) for every (I, J), as {(I, J): value}, or (value, stderr) pairs for method="mc".

    I and J are tuples of 1-based coordinates.
    """
    x = np.asarray(x, dtype=float)
    k = model.k
    dim = 2 * k
    out = {}
    if method == "quadrature":
        c = coordinate_weights(model, lyap, x[None, :], box)[0]
        for bits in itertools.product((0, 1), repeat=k):
            short = np.concatenate([1 - np.array(bits), np.array(bits)]).astype(int)
            I = tuple(i + 1 for i in range(dim) if short[i])
            for lengthened in itertools.product((0, 1), repeat=dim):
                J = tuple(i + 1 for i in range(dim) if lengthened[i])
                out[(I, J)] = float(np.prod([c[i, short[i], lengthened[i]] for i in range(dim)])) / 2**k
        return out
    if method != "mc":
        raise ValueError("method must be 'quadrature' or 'mc'")
    rng = np.random.default_rng() if rng is None else rng
    for bits in itertools.product((False, True), repeat=k):
        xs = np.broadcast_to(x, (n, dim))
        batch = divide(model, xs, rng.random((n, model.n_division_draws)), bits=np.array(bits))
        weight = np.where(batch.alive_a, lyap.ratio(batch.daughter_a, x), 0.0)
        if box is not None:
            weight = weight * np.all((batch.daughter_a >= box[0]) & (batch.daughter_a <= box[1]), axis=1)
        I = tuple(int(i) + 1 for i in np.flatnonzero(batch.shortened_a[0]))
        codes = batch.lengthen_set_a.astype(np.int64) @ (1 << np.arange(dim))
        for lengthened in itertools.product((0, 1), repeat=dim):
            code = int(np.dot(lengthened, 1 << np.arange(dim)))
            J = tuple(i + 1 for i in range(dim) if lengthened[i])
            vals = weight * (codes == code) / 2**k
            out[(I, J)] = (float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)))
    return out


def jump_type_probs(model, psi, x, a, method="quadrature", n=10**5, rng=None):
    """Probabilities of each jump type (I, J) and of the cemetery at trait (x, a).

    With method="mc", values carry no standard error; the masses are point estimates.
    """
    d = d_values(model, psi.lyap, x, method=method, n=n, rng=rng)
    if method == "mc":
        d = {key: value[0] for key, value in d.items()}
    b = float(model.birth(a))
    rate = float(jump_rate(model, psi, a))
    scale = 2.0 * b / float(psi.age_factor(a)) / rate
    probs = {key: scale * value for key, value in d.items()}
    total = sum(probs.values())
    if total > 1 + 1e-9 or any(p < 0 for p in probs.values()):
        raise NumericError(f"jump probabilities sum to {total:.6g}: lambda_psi violates its bound")
    probs["cemetery"] = 1.0 - total
    return probs


# ------------------------------------------------------------ simulation


@dataclass(eq=False)
class ParticleRecord:
    """Flat log of every jump of a batch of particles."""

    path: np.ndarray
    n: np.ndarray
    time: np.ndarray
    shortened: np.ndarray  # (m, 2k) bool, all False for the cemetery
    lengthened: np.ndarray
    x: np.ndarray
    killed: np.ndarray


@dataclass(eq=False)
class ParticleBatch:
    x: np.ndarray  # state at the horizon (last state if absorbed)
    age: np.ndarray
    alive: np.ndarray
    n_jumps: np.ndarray
    death_time: np.ndarray  # inf when alive at the horizon
    horizon: float
    record: ParticleRecord = None


def _sample_coordinates(model, lyap, x, short, length, rng):
    """Draw landing traits coordinate by coordinate by rejection under V's envelope."""
    n, dim = x.shape
    law = model.lengthening
    lam0, theta = lyap.lam0, lyap.flat_upper
    log_env = lam0 * max(model.delta, model.Delta)
    y = x.copy()
    for i in range(dim):
        todo = np.flatnonzero(short[:, i] | length[:, i])
        rounds = 0
        while len(todo):
            rounds += 1
            if rounds > REJECTION_GUARD:
                raise NumericError(f"jump-value rejection exceeded {REJECTION_GUARD} rounds at coordinate {i + 1}")
            xi = x[todo, i]
            s = xi - np.where(short[todo, i], model.delta * rng.random(len(todo)), 0.0)
            q = np.asarray(law.probability(s), dtype=float)
            grow = length[todo, i]
            v = np.where(grow, rng.random(len(todo)) * law.width(s), 0.0)
            yi = s + v
            log_ratio = lam0 * (np.maximum(yi - theta, 0.0) - np.maximum(xi - theta, 0.0))
            accept = np.where(grow, q, 1.0 - q) * np.exp(log_ratio - log_env) * (yi >= 0)
            ok = rng.random(len(todo)) < accept
            y[todo[ok], i] = yi[ok]
            todo = todo[~ok]
    return y


def _sample_types(model, lyap, x, rng):
    """Draw (shortened, lengthened) masks proportional to d^{I,J}(x), one chromosome at a time."""
    k = model.k
    c = coordinate_weights(model, lyap, x)
    w = chromosome_weights(c, k).reshape(len(x), k, 8)
    total = w.sum(axis=2, keepdims=True)
    cdf = np.cumsum(w / total, axis=2)
    u = rng.random((len(x), k, 1))
    choice = np.minimum((u > cdf).sum(axis=2), 7)
    bit = choice >> 2
    grow_low = (choice >> 1) & 1
    grow_high = choice & 1
    short = np.concatenate([bit == 0, bit == 1], axis=1)
    length = np.concatenate([grow_low == 1, grow_high == 1], axis=1)
    return short, length, np.prod(total[..., 0], axis=1) / 2**k


def simulate_particles(model, psi, x0, a0, horizon, n, seed, record=False):
    """Simulate ``n`` independent particles from (x0, a0) up to ``horizon``."""
    rng = streams.generator(seed, 0xA11)
    dim = 2 * model.k
    birth = model.birth
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n, dim)).copy()
    age = np.full(n, float(a0))
    clock = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    running = np.ones(n, dtype=bool)
    n_jumps = np.zeros(n, dtype=int)
    death = np.full(n, np.inf)
    logs = []
    while running.any():
        idx = np.flatnonzero(running)
        window = np.minimum(THINNING_WINDOW, horizon - clock[idx])
        bound = psi.lambda_psi + birth.envelope(age[idx] + window)
        step = rng.exponential(1.0 / bound)
        finished = step >= window
        advance = np.where(finished, window, step)
        clock[idx] += advance
        age[idx] += advance
        done = finished & (clock[idx] >= horizon - 1e-15)
        running[idx[done]] = False
        candidate = idx[~finished]
        if not len(candidate):
            continue
        cand_bound = bound[~finished]
        rate = psi.lambda_psi + birth(age[candidate]) - psi.dlog_da(age[candidate])
        jumps = candidate[rng.random(len(candidate)) * cand_bound < rate]
        if not len(jumps):
            continue
        short, length, mass = _sample_types(model, psi.lyap, x[jumps], rng)
        a = age[jumps]
        keep_prob = 2.0 * birth(a) * mass / psi.age_factor(a) / (psi.lambda_psi + birth(a) - psi.dlog_da(a))
        if np.any(keep_prob > 1 + 1e-9):
            raise NumericError("jump probabilities exceed 1: lambda_psi violates its bound")
        survive = rng.random(len(jumps)) < keep_prob
        n_jumps[jumps] += 1
        killed = jumps[~survive]
        alive[killed] = False
        running[killed] = False
        death[killed] = clock[killed]
        moved = jumps[survive]
        if len(moved):
            x[moved] = _sample_coordinates(model, psi.lyap, x[moved], short[survive], length[survive], rng)
            age[moved] = 0.0
        if record:
            empty = np.zeros((len(killed), dim), dtype=bool)
            logs.append((moved, n_jumps[moved].copy(), clock[moved].copy(), short[survive], length[survive], x[moved].copy(), False))
            logs.append((killed, n_jumps[killed].copy(), clock[killed].copy(), empty, empty, x[killed].copy(), True))
    rec = None
    if record:
        rec = _merge_logs(logs, n, x0, a0, dim)
    return ParticleBatch(x, age, alive, n_jumps, death, float(horizon), rec)


def _merge_logs(logs, n, x0, a0, dim):
    path = [np.arange(n)]
    count = [np.zeros(n, dtype=int)]
    time = [np.zeros(n)]
    short = [np.zeros((n, dim), dtype=bool)]
    length = [np.zeros((n, dim), dtype=bool)]
    xs = [np.broadcast_to(np.asarray(x0, dtype=float), (n, dim))]
    killed = [np.zeros(n, dtype=bool)]
    for ids, cnt, tm, sh, ln, xv, dead in logs:
        path.append(ids)
        count.append(cnt)
        time.append(tm)
        short.append(sh)
        length.append(ln)
        xs.append(xv)
        killed.append(np.full(len(ids), dead))
    path = np.concatenate(path)
    count = np.concatenate(count)
    order = np.lexsort((count, path))
    return ParticleRecord(
        path[order], count[order], np.concatenate(time)[order], np.concatenate(short)[order],
        np.concatenate(length)[order], np.concatenate(xs)[order], np.concatenate(killed)[order],
    )


@dataclass(eq=False)
class ParticlePath:
    times: np.ndarray
    states: np.ndarray
    ages: np.ndarray
    labels: list  # (I, J) index tuples, or "cemetery"
    absorbed: bool
    absorption_time: float
    horizon: float

    @property
    def t_all(self):
        """Time by which every coordinate has been shortened or lengthened at some jump."""
        dim = self.states.shape[1]
        first = np.full(dim, np.inf)
        for t, label in zip(self.times[1:], self.labels[1:]):
            if label == "cemetery":
                break
            I, J = label
            for i in set(I) | set(J):
                first[i - 1] = min(first[i - 1], t)
        return float(first.max())


def _indices(mask):
    return tuple(int(i) + 1 for i in np.flatnonzero(mask))


def paths_from_record(record, a0, horizon, absorbed_flags=None):
    paths = []
    starts = np.flatnonzero(np.r_[True, np.diff(record.path) != 0])
    ends = np.r_[starts[1:], len(record.path)]
    for s, e in zip(starts, ends):
        labels = [None]
        for j in range(s + 1, e):
            if record.killed[j]:
                labels.append("cemetery")
            else:
                labels.append((_indices(record.shortened[j]), _indices(record.lengthened[j])))
        absorbed = bool(record.killed[e - 1])
        live = ~record.killed[s:e]
        ages = np.zeros(int(live.sum()))
        ages[0] = a0
        paths.append(ParticlePath(
            record.time[s:e][live], record.x[s:e][live], ages, labels, absorbed,
            float(record.time[e - 1]) if absorbed else math.inf, horizon,
        ))
    return paths


def simulate_particle(model, psi, x0, a0, horizon, seed):
    batch = simulate_particles(model, psi, x0, a0, horizon, 1, seed, record=True)
    return paths_from_record(batch.record, a0, horizon)[0]


def write_paths_csv(path, record):
    dim = record.x.shape[1]
    header = "path_id,n,T_n,I_n,J_n," + ",".join(f"x_{i + 1}" for i in range(dim)) + ",absorbed"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for j in range(len(record.path)):
            if record.killed[j]:
                I = J = "cemetery"
            else:
                I = " ".join(str(i + 1) for i in np.flatnonzero(record.shortened[j]))
                J = " ".join(str(i + 1) for i in np.flatnonzero(record.lengthened[j]))
            xs = ",".join(repr(float(v)) for v in record.x[j])
            fh.write(f"{record.path[j]},{record.n[j]},{float(record.time[j])!r},{I},{J},{xs},{int(record.killed[j])}\n")


# -------------------------------------------------------- cross-validation


def cross_validate_semigroup(model, psi, x0, a0, f, t, n, seed, threads=1, f_bound=1.0):
    """Compare the particle's E[f(Z_t); alive] with e^{-lambda_psi t} M_t(f psi)(x0, a0) / psi(x0, a0).

    ``f`` takes (x array (m, 2k), ages (m,)) and returns (m,) values bounded by
    ``f_bound``.  The particle standard error is floored at f_bound / n, the
    resolution of an n-sample mean, so an all-absorbed sample is not read as exact.
    """
    batch = simulate_particles(model, psi, x0, a0, t, n, seed)
    values = np.where(batch.alive, f(batch.x, batch.age), 0.0)
    lhs = float(values.mean())
    lhs_se = max(float(values.std(ddof=1) / math.sqrt(n)), f_bound / n)
    x0 = np.asarray(x0, dtype=float)
    log_psi0 = float(psi.log_psi(x0, a0))

    def weighted(x, a):
        return f(x, a) * np.exp(psi.log_psi(x, a) - log_psi0)

    est = estimate_M_t(model, Alive(x0, a0), weighted, t, n, seed + 1, threads=threads)
    scale = math.exp(-psi.lambda_psi * t)
    rhs, rhs_se = scale * est.mean, scale * est.stderr
    combined = math.hypot(lhs_se, rhs_se)
    z = abs(lhs - rhs) / combined if combined > 0 else (0.0 if lhs == rhs else math.inf)
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs": rhs, "rhs_se": rhs_se, "z": z, "passed": bool(z < 3.0),
            "t": t, "n": n, "lambda_psi": psi.lambda_psi}


def one_jump_law_check(model, psi, x0, a0, t, box, jump_type, window, n, seed):
    """Probability of exactly one jump by t, of type ``jump_type`` = (I, J), landing in ``box``
    at a time in ``window`` = (c0, c1): particle frequency against quadrature."""
    x0 = np.asarray(x0, dtype=float)
    lo, hi = (np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float))
    c0, c1 = max(window[0], 0.0), min(window[1], t)
    birth = model.birth
    d = d_values(model, psi.lyap, x0, box=(lo, hi))[tuple(map(tuple, jump_type))]

    def integrand(s):
        g = 2 * birth(a0 + s) / float(psi.age_factor(a0)) * math.exp(
            -(birth.integral(a0 + s) - birth.integral(a0)) - psi.lambda_psi * s)
        r = t - s
        h0 = math.exp(-birth.integral(r) - psi.lambda_psi * r) * (1 + r**psi.d_psi)
        return g * h0

    time_part = integrate.quad(integrand, c0, c1, epsabs=1e-14, epsrel=1e-12)[0] if c1 > c0 else 0.0
    exact = time_part * d

    batch = simulate_particles(model, psi, x0, a0, t, n, seed, record=True)
    rec = batch.record
    first = rec.n == 1
    want = (tuple(sorted(jump_type[0])), tuple(sorted(jump_type[1])))
    hits = np.zeros(n, dtype=bool)
    for j in np.flatnonzero(first):
        p = rec.path[j]
        if batch.n_jumps[p] != 1 or rec.killed[j]:
            continue
        if (_indices(rec.shortened[j]), _indices(rec.lengthened[j])) == want and c0 <= rec.time[j] <= c1 and np.all((rec.x[j] >= lo) & (rec.x[j] <= hi)):
            hits[p] = True
    freq = float(hits.mean())
    se = math.sqrt(max(freq * (1 - freq), 1.0 / n) / n)
    z = abs(freq - exact) / se
    return {"estimate": freq, "stderr": se, "exact": exact, "z": z, "passed": bool(z < 3.0)}


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True, default=float)
