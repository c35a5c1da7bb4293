"""Bellman-Harris renewal toolkit: lifetimes, Laplace transforms, Malthusian roots,
renewal-equation means, convolution identities and the coupled jump-time harness.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, special

from .errors import NumericError
from .model import BirthRate, UniformShortening

ROOT_TOLERANCE = 1e-10
MASS_DEFICIT_TARGET = 1e-6
MAX_CONVOLUTION_POWER = 10


def _trapezoid_cumulative(values, dt):
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum(0.5 * dt * (values[1:] + values[:-1]), out=out[1:])
    return out


def _trapezoid_convolve(f, g, dt):
    """(f * g)(t_n) on the grid by the trapezoid rule."""
    n = len(f)
    full = np.convolve(f, g)[:n]
    return dt * (full - 0.5 * (f[0] * g + g[0] * f))


@dataclass(frozen=True, eq=False)
class DensityOnGrid:
    """A lifetime density sampled on ``t = 0, dt, ..., t_max`` with its tail."""

    dt: float
    values: np.ndarray
    tail: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")
        if self.tail[0] != 1.0 or np.any(np.diff(self.tail) > 1e-15):
            raise ValueError("tail must start at 1 and be nonincreasing")

    @property
    def t(self):
        return self.dt * np.arange(len(self.values))

    @property
    def t_max(self):
        return self.dt * (len(self.values) - 1)

    @property
    def mass_deficit(self):
        return 1.0 - float(np.trapezoid(self.values, dx=self.dt))

    def consistency_error(self):
        """Largest gap between the stored tail and 1 - cumulative mass."""
        return float(np.max(np.abs(self.tail - (1.0 - _trapezoid_cumulative(self.values, self.dt)))))

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.t, self.values]), delimiter=",", header="t,value", comments="", fmt="%.17g")


@dataclass(frozen=True)
class LifetimeLaw:
    """Lifetime of a cell born at ``start_age`` under an age-dependent rate.

    ``rate`` is a :class:`BirthRate` (closed forms are used for constant and
    linear rates) or any callable ``a -> rate``.
    """

    rate: object
    start_age: float = 0.0

    @classmethod
    def exponential(cls, c):
        return cls(BirthRate.constant(c))

    @classmethod
    def age_linear(cls, slope=1.0, intercept=0.0):
        return cls(BirthRate.age_linear(slope, intercept))

    @property
    def _linear_coeffs(self):
        """(c0, c1) of the rate seen from start_age, when it is affine."""
        if isinstance(self.rate, BirthRate) and self.rate.degree <= 1:
            c = self.rate.coeffs + (0.0,)
            return c[0] + c[1] * self.start_age, c[1]
        return None

    def hazard_integral(self, s):
        s = np.asarray(s, dtype=float)
        if isinstance(self.rate, BirthRate):
            return self.rate.integral(self.start_age + s) - self.rate.integral(self.start_age)
        out = np.array([integrate.quad(lambda u: self.rate(self.start_age + u), 0.0, si, limit=200)[0] for si in s.ravel()])
        return out.reshape(s.shape)

    def survival(self, s):
        return np.exp(-self.hazard_integral(s))

    def density(self, s):
        s = np.asarray(s, dtype=float)
        rate = self.rate(self.start_age + s) if isinstance(self.rate, BirthRate) else np.vectorize(self.rate)(self.start_age + s)
        return rate * self.survival(s)

    def horizon(self, deficit=MASS_DEFICIT_TARGET):
        """Smallest power-of-two time with survival below ``deficit``."""
        t = 1.0
        while self.survival(t) > deficit:
            t *= 2
            if t > 1e8:
                raise NumericError("lifetime survival does not vanish: integrated hazard is not divergent")
        return t

    def render(self, dt, t_max=None):
        if t_max is None:
            t_max = self.horizon()
        n = int(round(t_max / dt))
        t = dt * np.arange(n + 1)
        tail = self.survival(t)
        grid = DensityOnGrid(dt, self.density(t), tail)
        if tail[-1] > MASS_DEFICIT_TARGET:
            raise NumericError(f"t_max={t_max} leaves lifetime mass {tail[-1]:.3g} beyond the grid")
        return grid


def laplace(obj, p):
    """Laplace transform E[exp(-p T)] of a lifetime law, a shortening law or a grid density."""
    if isinstance(obj, UniformShortening):
        return obj.laplace(p)
    if isinstance(obj, LifetimeLaw):
        lin = obj._linear_coeffs
        if lin is not None:
            c0, c1 = lin
            if c1 == 0:
                if c0 + p <= 0:
                    raise NumericError("Laplace transform diverges")
                return c0 / (c0 + p)
            z = (c0 + p) / math.sqrt(2 * c1)
            return 1.0 - p * math.sqrt(math.pi / (2 * c1)) * float(special.erfcx(z))
        if p < 0:
            raise NumericError("Laplace transform at negative argument needs a closed form")
        value, _ = integrate.quad(lambda s: math.exp(-p * s) * float(obj.density(s)), 0.0, np.inf, limit=400, epsabs=1e-13)
        return value
    if isinstance(obj, DensityOnGrid):
        weights = np.exp(-p * obj.t)
        truncation = obj.tail[-1] * weights[-1]
        if p < 0 and truncation > MASS_DEFICIT_TARGET:
            raise NumericError("Laplace transform diverges on the grid tail")
        return float(np.trapezoid(weights * obj.values, dx=obj.dt))
    raise TypeError(f"no Laplace transform for {type(obj).__name__}")


def malthusian_root(lifetime, gamma, tol=ROOT_TOLERANCE):
    """The alpha > 0 with laplace(lifetime, alpha) = 1/gamma, by bracketing and bisection."""
    if not gamma > 1:
        raise NumericError("mean offspring must exceed 1 for a positive Malthusian root")
    target = 1.0 / gamma

    def residual(p):
        return laplace(lifetime, p) - target

    lo, hi = 0.0, 1.0
    while residual(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise NumericError("no sign change found while bracketing the Malthusian root")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        r = residual(mid)
        if r > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, hi):
            break
    alpha = 0.5 * (lo + hi)
    if abs(residual(alpha)) > tol:
        raise NumericError(f"Malthusian root residual {residual(alpha):.3g} above tolerance")
    return alpha


def _as_grid(lifetime, dt, t_max):
    return lifetime if isinstance(lifetime, DensityOnGrid) else lifetime.render(dt, t_max)


def bh_mean(lifetime, gamma, dt, t_max):
    """Mean population of a Bellman-Harris process on ``0, dt, ..., t_max``.

    Solves m = tail + gamma * (f * m) by implicit trapezoid time-stepping.
    Returns (t, m).
    """
    n = int(round(t_max / dt))
    span = max(t_max, lifetime.horizon()) if isinstance(lifetime, LifetimeLaw) else t_max
    grid = _as_grid(lifetime, dt, span)
    if grid.t_max < t_max - 1e-12 and grid.tail[-1] > MASS_DEFICIT_TARGET:
        raise NumericError("renewal grid shorter than the requested horizon")
    f = np.zeros(n + 1)
    tail = np.zeros(n + 1)
    m_avail = min(n + 1, len(grid.values))
    f[:m_avail] = grid.values[:m_avail]
    tail[:m_avail] = grid.tail[:m_avail]
    m = np.empty(n + 1)
    m[0] = tail[0]
    denom = 1.0 - 0.5 * gamma * dt * f[0]
    for i in range(1, n + 1):
        inner = np.dot(f[1:i], m[i - 1 : 0 : -1]) + 0.5 * f[i] * m[0]
        m[i] = (tail[i] + gamma * dt * inner) / denom
    return dt * np.arange(n + 1), m


def bh_mean_series(lifetime, gamma, dt, t_max, tol=1e-12, max_terms=400):
    """The same mean as a truncated series of convolution powers applied to the tail."""
    n = int(round(t_max / dt))
    grid = _as_grid(lifetime, dt, max(t_max, lifetime.horizon()) if isinstance(lifetime, LifetimeLaw) else t_max)
    f = grid.values[: n + 1]
    term = grid.tail[: n + 1].copy()
    total = term.copy()
    for _ in range(max_terms):
        term = gamma * _trapezoid_convolve(f, term, dt)
        total += term
        if np.max(np.abs(term)) < tol:
            return dt * np.arange(n + 1), total
    raise NumericError(f"renewal series not converged after {max_terms} terms")


def convolution_power(f, n):
    """The n-fold convolution of a grid density with itself (n >= 1)."""
    if not 1 <= n <= MAX_CONVOLUTION_POWER:
        raise ValueError(f"convolution power must lie in [1, {MAX_CONVOLUTION_POWER}]")
    out = f.values
    for _ in range(n - 1):
        out = _trapezoid_convolve(out, f.values, f.dt)
    out = np.maximum(out, 0.0)
    tail = np.minimum.accumulate(np.clip(1.0 - _trapezoid_cumulative(out, f.dt), 0.0, 1.0))
    tail[0] = 1.0
    return DensityOnGrid(f.dt, out, tail)


def identity_check(f, n, t_max=None):
    """Residual of sum_{r<n} f^{*r} * tail against the tail of f^{*n}, max over [0, t_max].

    For n = 1 both sides are the stored tail.
    """
    if not 1 <= n <= MAX_CONVOLUTION_POWER:
        raise ValueError(f"convolution power must lie in [1, {MAX_CONVOLUTION_POWER}]")
    stop = len(f.values) if t_max is None else int(round(t_max / f.dt)) + 1
    lhs = f.tail.copy()
    power = None
    for _ in range(1, n):
        power = f.values if power is None else _trapezoid_convolve(power, f.values, f.dt)
        lhs = lhs + _trapezoid_convolve(power, f.tail, f.dt)
    if n == 1:
        rhs = f.tail
    else:
        top = _trapezoid_convolve(power, f.values, f.dt)
        rhs = 1.0 - _trapezoid_cumulative(top, f.dt)
    return float(np.max(np.abs(lhs[:stop] - rhs[:stop])))


# ------------------------------------------------------------- coupling


def _hazard_inverse(rate, age, e):
    """Time s with integral of rate over [age, age + s] equal to e."""
    if isinstance(rate, BirthRate):
        return rate.waiting_time(age, np.exp(-np.asarray(e)))
    e = np.atleast_1d(np.asarray(e, dtype=float))
    age = np.broadcast_to(np.asarray(age, dtype=float), e.shape)
    out = np.empty_like(e)
    for i, (a, target) in enumerate(zip(age, e)):
        def cum(s):
            return integrate.quad(rate, a, a + s, limit=200)[0] - target

        hi = 1.0
        while cum(hi) < 0:
            hi *= 2
            if hi > 1e8:
                raise NumericError("integrated division hazard does not diverge")
        lo = 0.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if cum(mid) < 0:
                lo = mid
            else:
                hi = mid
        out[i] = 0.5 * (lo + hi)
    return out


@dataclass(frozen=True, eq=False)
class CoupledTimes:
    times_slow: np.ndarray  # (n_paths, n_jumps + 1), rate b1
    times_fast: np.ndarray  # (n_paths, n_jumps + 1), rate b2
    traits: object

    @property
    def violations(self):
        return int(np.sum(self.times_slow < self.times_fast))


def coupled_jump_times(b1, b2, n_jumps, rng, n_paths=1, kernel=None, x0=None, check_ages=None):
    """Jump times of two renewal sequences driven by the same uniforms.

    Both sequences restart the age at 0 after each jump and invert their
    integrated hazard at the same exponential level -log(1 - V_n), so
    b1 <= b2 forces every jump of the first no earlier than the second.
    ``kernel(x, rng)`` updates a shared trait path when supplied.
    """
    ages = np.linspace(0.0, 50.0, 501) if check_ages is None else np.asarray(check_ages)
    r1 = b1(ages) if isinstance(b1, BirthRate) else np.array([b1(a) for a in ages])
    r2 = b2(ages) if isinstance(b2, BirthRate) else np.array([b2(a) for a in ages])
    if np.any(r1 > r2 + 1e-12):
        raise ValueError("coupling needs b1 <= b2 on the checked ages")
    v = rng.random((n_paths, n_jumps))
    e = -np.log1p(-v)
    inc1 = _hazard_inverse(b1, 0.0, e.ravel()).reshape(e.shape)
    inc2 = _hazard_inverse(b2, 0.0, e.ravel()).reshape(e.shape)
    zeros = np.zeros((n_paths, 1))
    times1 = np.concatenate([zeros, np.cumsum(inc1, axis=1)], axis=1)
    times2 = np.concatenate([zeros, np.cumsum(inc2, axis=1)], axis=1)
    traits = None
    if kernel is not None:
        traits = []
        for _ in range(n_paths):
            path = [np.asarray(x0, dtype=float)]
            for _ in range(n_jumps):
                path.append(kernel(path[-1], rng))
            traits.append(path)
    return CoupledTimes(times1, times2, traits)


# ------------------------------------------------------ growth-order roots


def solve_alpha(birth_lower, eps0, D):
    """Root of laplace(F_0)(alpha) = (1 + eps0)^(-1/D) for the lower birth rate."""
    return malthusian_root(LifetimeLaw(birth_lower), (1.0 + eps0) ** (1.0 / D))


def solve_beta(birth_upper, eps1):
    """Root of laplace(J_0)(beta) = 1 / (1 + eps1) for the upper birth rate."""
    return malthusian_root(LifetimeLaw(birth_upper), 1.0 + eps1)


def renewal_window(alpha, birth_lower):
    """A time t at which inf over ages of int_0^t e^{-alpha s} F_a(s) ds is provably positive."""
    a0, b0 = birth_lower.a0, birth_lower.b0
    if not b0 > 0:
        return math.inf
    return a0 - math.log(b0 / (alpha + b0)) / alpha + 1.0


def check_order(alpha, beta, birth_lower, max_age=50.0, n_ages=101):
    """Report whether beta < alpha and whether the windowed lower-rate mass stays positive."""
    t = renewal_window(alpha, birth_lower)
    masses = []
    if math.isfinite(t):
        s = np.linspace(0.0, t, 4001)
        for a in np.linspace(0.0, max_age, n_ages):
            law = LifetimeLaw(birth_lower, start_age=float(a))
            masses.append(float(np.trapezoid(np.exp(-alpha * s) * law.density(s), s)))
    inf_mass = min(masses) if masses else 0.0
    return {
        "alpha": alpha,
        "beta": beta,
        "order": bool(0 < beta < alpha),
        "window": t,
        "inf_windowed_mass": inf_mass,
        "windowed_mass_positive": bool(inf_mass > 0),
        "max_age_checked": max_age,
    }
