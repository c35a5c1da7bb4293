"""Model definition and sampling primitives for telomere-structured division.

A cell carries ``2k`` telomere lengths; coordinates ``i`` and ``i + k`` are
the two ends of chromosome ``i``.  At division one daughter is shortened on a
set ``I`` holding exactly one end of every chromosome and the other daughter on
the complementary ends.  Each daughter's post-shortening telomeres are then
lengthened on a random subset, and a daughter with any negative telomere is
senescent.

Coordinates are 0-based in arrays and 1-based in user-facing index sets.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigurationError, ModelValidationError, NumericError

MAX_ENUMERATION_K = 20
THINNING_GUARD = 10**6


# ---------------------------------------------------------------- cell states


@dataclass(frozen=True, eq=False)
class Alive:
    x: np.ndarray
    age: float = 0.0

    is_alive = True


class Senescent:
    """The absorbing cemetery state."""

    is_alive = False
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Senescent()"


SENESCENT = Senescent()


def check_telomeres(x, k):
    """Return ``x`` as a float array after checking it is a valid trait."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * k,):
        raise ValueError(f"telomere vector must have length {2 * k}, got shape {x.shape}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("telomere lengths must be finite and nonnegative")
    return x


# ------------------------------------------------------------ shortening sets


@dataclass(frozen=True)
class ShorteningIndexSet:
    """One end of every chromosome, encoded as ``k`` bits.

    Bit ``j`` (0-based chromosome) selects coordinate ``j + 1`` when clear and
    ``j + 1 + k`` when set.
    """

    k: int
    bits: int

    @classmethod
    def from_bits(cls, bit_values):
        bits = 0
        for j, b in enumerate(bit_values):
            if b:
                bits |= 1 << j
        return cls(len(bit_values), bits)

    @property
    def bit_array(self):
        return np.array([(self.bits >> j) & 1 for j in range(self.k)], dtype=bool)

    @property
    def indices(self):
        return tuple(sorted(j + 1 + self.k * ((self.bits >> j) & 1) for j in range(self.k)))

    @property
    def complement(self):
        return ShorteningIndexSet(self.k, self.bits ^ ((1 << self.k) - 1))

    @property
    def mask(self):
        """Boolean mask over the 2k coordinates."""
        m = np.zeros(2 * self.k, dtype=bool)
        m[[i - 1 for i in self.indices]] = True
        return m


def enumerate_shortening_sets(k):
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_ENUMERATION_K:
        raise ValueError(f"k must be an integer in [1, {MAX_ENUMERATION_K}], got {k!r}")
    return sorted((ShorteningIndexSet(int(k), bits) for bits in range(2**k)), key=lambda s: s.indices)


def sample_shortening_set(k, rng):
    """Uniform draw from the 2^k shortening sets via k fair bits."""
    return ShorteningIndexSet.from_bits(rng.integers(0, 2, size=k).astype(bool))


# ------------------------------------------------------------ shortening law


@dataclass(frozen=True)
class UniformShortening:
    """Shortening amounts uniform on [0, delta]."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ModelValidationError("shortening bound delta must be positive")

    @property
    def g_min(self):
        return 1.0 / self.delta

    @property
    def g_max(self):
        return 1.0 / self.delta

    def density(self, u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= 0) & (u <= self.delta), 1.0 / self.delta, 0.0)

    def from_uniform(self, u):
        return self.delta * np.asarray(u)

    def laplace(self, p):
        """E[exp(-p U)]."""
        z = p * self.delta
        if z == 0:
            return 1.0
        return -math.expm1(-z) / z

    def unit_mass_error(self):
        mass, _ = integrate.quad(lambda u: float(self.density(u)), 0.0, self.delta, epsabs=1e-12, epsrel=1e-12)
        return abs(mass - 1.0)


# ------------------------------------------------- lengthening probabilities


@dataclass(frozen=True)
class ConstantProbability:
    value: float

    def __post_init__(self):
        if not 0 < self.value <= 1:
            raise ModelValidationError("lengthening probability must lie in (0, 1]")

    def __call__(self, y):
        return np.full(np.shape(y), self.value) if np.ndim(y) else self.value

    def sup_above(self, y):
        return self.value

    def inf_on(self, lo, hi):
        return self.value

    def kinks(self):
        return ()

    def params(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class ExponentialProbability:
    """q(y) = min(1, scale * exp(-rate * y))."""

    scale: float
    rate: float

    def __post_init__(self):
        if not (self.scale > 0 and self.rate > 0):
            raise ModelValidationError("exponential lengthening probability needs scale > 0 and rate > 0")

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(over="ignore"):
            out = np.minimum(1.0, self.scale * np.exp(-self.rate * y))
        return out if out.ndim else float(out)

    def sup_above(self, y):
        return float(self(y))

    def inf_on(self, lo, hi):
        return float(self(hi))

    def kinks(self):
        return (math.log(self.scale) / self.rate,)

    def params(self):
        return {"kind": "exponential", "scale": self.scale, "rate": self.rate}


@dataclass(frozen=True)
class TabulatedProbability:
    """Piecewise-linear table, flat to the left, exponential decay to the right."""

    points: tuple
    values: tuple
    tail_rate: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.ndim != 1 or pts.size < 2 or pts.shape != vals.shape:
            raise ModelValidationError("tabulated probability needs matching point/value lists of length >= 2")
        if np.any(np.diff(pts) <= 0):
            raise ModelValidationError("tabulated probability points must be strictly increasing")
        if np.any(vals <= 0) or np.any(vals > 1):
            raise ModelValidationError("tabulated probability values must lie in (0, 1]")
        if not self.tail_rate > 0:
            raise ModelValidationError("tabulated probability tail_rate must be positive")
        object.__setattr__(self, "points", tuple(float(p) for p in pts))
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        pts, vals = np.asarray(self.points), np.asarray(self.values)
        inner = np.interp(y, pts, vals)
        tail = vals[-1] * np.exp(-self.tail_rate * np.maximum(y - pts[-1], 0.0))
        out = np.where(y > pts[-1], tail, inner)
        return out if out.ndim else float(out)

    def sup_above(self, y):
        pts, vals = np.asarray(self.points), np.asarray(self.values)
        return float(max(self(y), *(vals[pts > y]), 0.0))

    def inf_on(self, lo, hi):
        pts, vals = np.asarray(self.points), np.asarray(self.values)
        inside = vals[(pts > lo) & (pts < hi)]
        return float(min(self(lo), self(hi), *inside))

    def kinks(self):
        return self.points

    def params(self):
        return {"kind": "table", "points": list(self.points), "values": list(self.values), "tail_rate": self.tail_rate}


def probability_from_params(params):
    params = dict(params)
    kind = params.pop("kind", None)
    fields = {"constant": ("value",), "exponential": ("scale", "rate"), "table": ("points", "values", "tail_rate")}
    if kind not in fields:
        raise ConfigurationError(f"q_params: unknown kind {kind!r} (expected constant, exponential or table)")
    unknown = sorted(set(params) - set(fields[kind]))
    if unknown:
        raise ConfigurationError(f"q_params: unknown fields {unknown}")
    try:
        if kind == "constant":
            return ConstantProbability(float(params["value"]))
        if kind == "exponential":
            return ExponentialProbability(float(params["scale"]), float(params["rate"]))
        return TabulatedProbability(tuple(params["points"]), tuple(params["values"]), float(params.get("tail_rate", 1.0)))
    except KeyError as exc:
        raise ConfigurationError(f"q_params: missing field {exc.args[0]!r}") from None


# ----------------------------------------------------------- lengthening law

LENGTHENING_AMOUNTS = ("uniform", "inverse_linear")


@dataclass(frozen=True)
class LengtheningLaw:
    """Per-coordinate lengthening.

    Each post-shortening telomere ``s`` is lengthened independently with
    probability ``probability(s)``, by an amount uniform on ``[0, width(s)]``.
    ``amount="uniform"`` uses width ``Delta``; ``amount="inverse_linear"``
    uses ``Delta / (s + 1)`` for ``s >= 0`` and ``Delta`` below zero.
    """

    Delta: float
    amount: str
    probability: object

    def __post_init__(self):
        if not self.Delta > 0:
            raise ModelValidationError("lengthening bound Delta must be positive")
        if self.amount not in LENGTHENING_AMOUNTS:
            raise ModelValidationError(f"lengthening amount must be one of {LENGTHENING_AMOUNTS}")

    def width(self, s):
        s = np.asarray(s, dtype=float)
        if self.amount == "uniform":
            return np.full(s.shape, self.Delta) if s.ndim else self.Delta
        out = np.where(s < 0, self.Delta, self.Delta / (np.maximum(s, 0.0) + 1.0))
        return out if out.ndim else float(out)

    def density(self, s, u):
        w = self.width(s)
        u = np.asarray(u, dtype=float)
        return np.where((u >= 0) & (u <= w), 1.0 / w, 0.0)

    def from_uniform(self, s, u):
        return np.asarray(u) * self.width(s)

    def laplace_neg(self, s, lam):
        """E[exp(lam V)] for V ~ h(s, .)."""
        z = lam * np.asarray(self.width(s), dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(z == 0, 1.0, np.expm1(z) / np.where(z == 0, 1.0, z))
        return out if out.ndim else float(out)

    def reach_points(self, target):
        """Values of s with s + width(s) == target (where the top of the support crosses target)."""
        if self.amount == "uniform":
            return (target - self.Delta,)
        roots = []
        if target - self.Delta < 0:
            roots.append(target - self.Delta)
        # s + Delta/(s+1) = target  <=>  s^2 + (1 - target) s + (Delta - target) = 0
        disc = (1 - target) ** 2 - 4 * (self.Delta - target)
        if disc >= 0:
            for r in ((target - 1 - math.sqrt(disc)) / 2, (target - 1 + math.sqrt(disc)) / 2):
                if r >= 0:
                    roots.append(r)
        return tuple(roots)

    def p_mass(self, J, M, s1, s2):
        """Probability of lengthening sets (J, M) given post-shortening pair (s1, s2)."""
        q1, q2 = self.probability(np.asarray(s1, float)), self.probability(np.asarray(s2, float))
        J, M = np.asarray(J, bool), np.asarray(M, bool)
        return float(np.prod(np.where(J, q1, 1 - q1)) * np.prod(np.where(M, q2, 1 - q2)))

    def unit_mass_error(self, s):
        w = float(self.width(s))
        mass, _ = integrate.quad(lambda u: float(self.density(s, u)), 0.0, w, epsabs=1e-12, epsrel=1e-12)
        return abs(mass - 1.0)


# ---------------------------------------------------------------- birth rate

BIRTH_KINDS = ("constant", "age_linear", "custom_poly")


@dataclass(frozen=True)
class BirthRate:
    """Age-dependent division rate b(a) = sum_i coeffs[i] * a**i, coefficients >= 0."""

    kind: str
    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if self.kind not in BIRTH_KINDS:
            raise ModelValidationError(f"birth kind must be one of {BIRTH_KINDS}")
        if not coeffs or any(c < 0 or not math.isfinite(c) for c in coeffs):
            raise ModelValidationError("birth coefficients must be a nonempty list of finite nonnegative numbers")
        if self.kind == "constant" and len(coeffs) != 1:
            raise ModelValidationError("constant birth rate takes exactly one coefficient")
        if self.kind == "age_linear" and len(coeffs) != 2:
            raise ModelValidationError("age_linear birth rate takes coefficients [intercept, slope]")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def constant(cls, c):
        return cls("constant", (c,))

    @classmethod
    def age_linear(cls, slope=1.0, intercept=0.0):
        return cls("age_linear", (intercept, slope))

    @property
    def degree(self):
        nz = [i for i, c in enumerate(self.coeffs) if c > 0]
        return nz[-1] if nz else 0

    @property
    def is_zero(self):
        return all(c == 0 for c in self.coeffs)

    # envelope constants: b <= b_tilde (1 + a^d_b), b >= b0 for a >= a0
    @property
    def b_tilde(self):
        return sum(self.coeffs)

    @property
    def d_b(self):
        return self.degree

    a0 = 1.0

    @property
    def b0(self):
        return float(self(self.a0))

    def __call__(self, a):
        return np.polynomial.polynomial.polyval(a, self.coeffs)

    def integral(self, a):
        """Integral of the rate from 0 to a."""
        return np.polynomial.polynomial.polyval(a, np.polynomial.polynomial.polyint(self.coeffs))

    def envelope(self, a):
        return self.b_tilde * (1.0 + np.asarray(a, dtype=float) ** self.d_b)

    def waiting_time(self, age, u):
        """Invert the survival function: time s with exp(-int_age^{age+s} b) = u."""
        age = np.asarray(age, dtype=float)
        e = -np.log(np.asarray(u, dtype=float))
        age, e = np.broadcast_arrays(age, e)
        if self.is_zero:
            return np.full(e.shape, np.inf)
        if self.degree == 0:
            return e / self.coeffs[0]
        if self.degree == 1:
            c0, c1 = self.coeffs[0], self.coeffs[1]
            base = c0 + c1 * age
            return 2.0 * e / (base + np.sqrt(base * base + 2.0 * c1 * e))
        return self._invert_numerically(age, e)

    def _invert_numerically(self, age, e):
        start = self.integral(age)
        lo = np.zeros_like(e)
        hi = np.ones_like(e)
        for _ in range(200):
            short = self.integral(age + hi) - start < e
            if not short.any():
                break
            hi = np.where(short, 2 * hi, hi)
        else:
            raise NumericError("integrated division hazard does not diverge")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            below = self.integral(age + mid) - start < e
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def thinning_time(self, age, rng, window=1.0):
        """Waiting time by thinning against the polynomial envelope."""
        if self.is_zero:
            return math.inf
        t = 0.0
        rejections = 0
        while True:
            bound = float(self.envelope(age + t + window))
            step = rng.exponential(1.0 / bound)
            if step > window:
                t += window
            else:
                t += step
                if rng.random() * bound <= float(self(age + t)):
                    return t
            rejections += 1
            if rejections > THINNING_GUARD:
                raise ConfigurationError("division hazard is not divergent within the thinning guard")


# -------------------------------------------------------------- model spec


@dataclass(frozen=True)
class RenewalSetup:
    """Renewal-box constants of a preset: [0, k_renew_upper]^{2k} inside [0, b_max]^{2k}."""

    D: int
    eps0: float
    k_renew_upper: float
    b_max: float
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ModelSpec:
    k: int
    shortening: UniformShortening
    lengthening: LengtheningLaw
    birth: BirthRate
    preset: str = "custom"
    gamma: float = None
    renewal: RenewalSetup = field(default=None, compare=False)

    @property
    def n_coords(self):
        return 2 * self.k

    @property
    def delta(self):
        return self.shortening.delta

    @property
    def Delta(self):
        return self.lengthening.Delta

    @property
    def n_division_draws(self):
        return 11 * self.k


def _ratio_log(delta, Delta):
    return math.log((Delta - delta) / Delta)


def build_model1(k, delta, Delta, gamma, birth=None):
    """All telomeres lengthened at every division, by at most Delta/(x+1)."""
    _check_common(k, delta, Delta)
    exponent = 2 * k * k + 4 * k
    log_r = _ratio_log(delta, Delta)
    if not exponent * log_r > math.log(0.25):
        raise ModelValidationError(
            f"model1 needs ((Delta-delta)/Delta)^(2k^2+4k) > 1/4; got {math.exp(exponent * log_r):.6g} "
            f"for k={k}, delta={delta}, Delta={Delta}"
        )
    if not 0 < gamma < 1:
        raise ModelValidationError("model1 needs gamma in (0, 1)")
    if not 2 * k * math.log1p(-gamma) + exponent * log_r > math.log(0.25):
        raise ModelValidationError(
            "model1 needs (1-gamma)^(2k) ((Delta-delta)/Delta)^(2k^2+4k) > 1/4; gamma is too large"
        )
    model = ModelSpec(
        k=k,
        shortening=UniformShortening(delta),
        lengthening=LengtheningLaw(Delta, "inverse_linear", ConstantProbability(1.0)),
        birth=birth or BirthRate.age_linear(),
        preset="model1",
        gamma=gamma,
    )
    return _with_renewal(model, model1_renewal_setup(k, delta, Delta, gamma))


def model2_probability_bound(k, delta, Delta):
    """Lower bound required for q on [-delta, 0), and the constant it is built from."""
    r2k = math.exp(2 * k * _ratio_log(delta, Delta))
    c = (r2k + 0.5) / (2 * r2k)
    return c ** (1.0 / (8 * k)), c


def build_model2(k, delta, Delta, q, birth=None):
    """Independent per-telomere lengthening with probability q(s), amount uniform on [0, Delta]."""
    _check_common(k, delta, Delta)
    log_r = _ratio_log(delta, Delta)
    if not 2 * k * log_r > math.log(0.5):
        raise ModelValidationError(
            f"model2 needs ((Delta-delta)/Delta)^(2k) > 1/2; got {math.exp(2 * k * log_r):.6g} "
            f"for k={k}, delta={delta}, Delta={Delta}"
        )
    bound, _ = model2_probability_bound(k, delta, Delta)
    q_inf = q.inf_on(-delta, 0.0)
    if not q_inf >= bound:
        raise ModelValidationError(
            f"model2 needs inf of q on [-delta, 0) >= {bound:.10g}; got {q_inf:.10g}"
        )
    _check_vanishing(q)
    model = ModelSpec(
        k=k,
        shortening=UniformShortening(delta),
        lengthening=LengtheningLaw(Delta, "uniform", q),
        birth=birth or BirthRate.age_linear(),
        preset="model2",
    )
    return _with_renewal(model, model2_renewal_setup(k, delta, Delta, q))


def build_custom(k, delta, Delta, amount, q, birth, renewal=None):
    """A model without preset guarantees."""
    _check_common(k, delta, Delta)
    model = ModelSpec(
        k=k,
        shortening=UniformShortening(delta),
        lengthening=LengtheningLaw(Delta, amount, q),
        birth=birth,
        preset="custom",
    )
    return _with_renewal(model, renewal)


def _with_renewal(model, renewal):
    object.__setattr__(model, "renewal", renewal)
    return model


def _check_common(k, delta, Delta):
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ModelValidationError("k must be a positive integer")
    if not (delta > 0 and Delta > 0):
        raise ModelValidationError("delta and Delta must be positive")
    if not Delta > delta:
        raise ModelValidationError("Delta must exceed delta")


def _check_vanishing(q):
    grid = np.logspace(0, 12, 49)
    values = np.asarray(q(grid), dtype=float)
    if not values[-1] < 1e-9:
        raise ModelValidationError("q must vanish at +infinity (q(1e12) is not below 1e-9)")
    fine = np.linspace(-10.0, 10.0, 20001)
    jumps = np.abs(np.diff(np.asarray(q(fine), dtype=float)))
    if jumps.max() > 0.05:
        raise ModelValidationError("q appears discontinuous on [-10, 10]")


def model1_renewal_setup(k, delta, Delta, gamma):
    """Renewal box [0, L]^{2k}, D = k + 2, found by numeric search over the box conditions."""
    half = gamma * delta / 2

    def f(x):
        x = np.asarray(x, dtype=float)
        return x - gamma * delta + Delta / (x + 1) + Delta / np.maximum(x - delta + 1, 1.0)

    def excess(x):
        return Delta / (x + 1) + Delta / max(x - delta + 1, 1.0) - half

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2
    L0 = optimize.brentq(excess, 0.0, hi, xtol=1e-12) if excess(0.0) > 0 else 0.0

    def slope(x):
        return 1 - Delta / (x + 1) ** 2 - (Delta / (x - delta + 1) ** 2 if x > delta else 0.0)

    hi = max(2 * delta, 1.0)
    while slope(hi) <= 0:
        hi *= 2
    L1 = optimize.brentq(slope, delta, hi, xtol=1e-12) if slope(delta + 1e-12) <= 0 else delta

    head = float(np.max(f(np.linspace(0.0, L1, 20001))))
    hi = max(L1, 1.0)
    while f(hi) < head:
        hi *= 2
    L2 = optimize.brentq(lambda x: float(f(x)) - head, L1, hi, xtol=1e-12) if f(L1) < head else L1

    L_second = k * Delta / half - 1 + half
    L = max(Delta, L0, L1, L2, L_second) * (1 + 1e-9) + 1e-9
    grid = np.linspace(0.0, L, 200001)
    if float(np.max(f(grid))) > L - half + 1e-9:
        raise NumericError("renewal box search failed: f exceeds L - gamma*delta/2 on [0, L]")
    D = k + 2
    eps0 = 4 * (1 - gamma) ** (2 * k) * math.exp((2 * k * k + 4 * k) * _ratio_log(delta, Delta)) - 1
    return RenewalSetup(D=D, eps0=eps0, k_renew_upper=L, b_max=L + D * Delta, extra={"L": L, "L0": L0, "L1": L1, "L2": L2})


def model2_renewal_setup(k, delta, Delta, q):
    """Renewal box [0, B_max]^{2k} with D = 1, where q is small above B_max - Delta."""
    bound, c = model2_probability_bound(k, delta, Delta)
    limit = 1 - bound
    lo, hi = -delta, max(Delta, 1.0)
    while q.sup_above(hi) > limit:
        hi *= 2
        if hi > 1e15:
            raise NumericError("q does not fall below the renewal threshold")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q.sup_above(mid) > limit:
            lo = mid
        else:
            hi = mid
    b_max = max(2 * Delta, hi + Delta) * (1 + 1e-9) + 1e-9
    eps0 = math.exp(2 * k * _ratio_log(delta, Delta)) - 0.5
    return RenewalSetup(D=1, eps0=eps0, k_renew_upper=b_max, b_max=b_max, extra={"c": c, "q_bound": bound})


# ------------------------------------------------------------------ division


@dataclass
class DivisionBatch:
    """Arrays describing n divisions (rows)."""

    shortened_a: np.ndarray  # (n, 2k) bool, coordinates shortened in daughter A
    bits: np.ndarray  # (n, k) bool
    shorten_a: np.ndarray
    shorten_b: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    lengthen_set_a: np.ndarray  # J
    lengthen_set_b: np.ndarray  # M
    lengthen_a: np.ndarray
    lengthen_b: np.ndarray
    daughter_a: np.ndarray
    daughter_b: np.ndarray
    alive_a: np.ndarray
    alive_b: np.ndarray


def divide(model, x, u, bits=None):
    """Apply the division kernel to rows of ``x`` using uniforms ``u``.

    ``u`` has shape (n, 11k): k draws for the shortening set, 2k shortening
    amounts (one per coordinate, used by whichever daughter is shortened
    there), 2k + 2k lengthening indicators and 2k + 2k lengthening amounts.
    ``bits`` forces the shortening set when given.
    """
    k = model.k
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(u)
    n2 = 2 * k
    if bits is None:
        bits = u[:, :k] >= 0.5
    else:
        bits = np.broadcast_to(np.asarray(bits, dtype=bool), (x.shape[0], k))
    shortened_a = np.concatenate([~bits, bits], axis=1)
    amounts = model.shortening.from_uniform(u[:, k : k + n2])
    shorten_a = np.where(shortened_a, amounts, 0.0)
    shorten_b = np.where(shortened_a, 0.0, amounts)
    s1 = x - shorten_a
    s2 = x - shorten_b
    o = k + n2
    lengthening = model.lengthening
    J = u[:, o : o + n2] < lengthening.probability(s1)
    M = u[:, o + n2 : o + 2 * n2] < lengthening.probability(s2)
    o += 2 * n2
    V = np.where(J, lengthening.from_uniform(s1, u[:, o : o + n2]), 0.0)
    V2 = np.where(M, lengthening.from_uniform(s2, u[:, o + n2 : o + 2 * n2]), 0.0)
    ya = s1 + V
    yb = s2 + V2
    return DivisionBatch(
        shortened_a, bits, shorten_a, shorten_b, s1, s2, J, M, V, V2, ya, yb,
        ya.min(axis=1) >= 0, yb.min(axis=1) >= 0,
    )


@dataclass(eq=False)
class DivisionOutcome:
    daughter_a: object
    daughter_b: object
    shortening_set: ShorteningIndexSet
    lengthening_sets: tuple  # (J, M) as 1-based index tuples
    shortening: tuple  # (U, U')
    lengthening: tuple  # (V, V')


def _indices(mask):
    return tuple(int(i) + 1 for i in np.flatnonzero(mask))


def sample_division(x, rng, model):
    x = check_telomeres(x, model.k)
    batch = divide(model, x, rng.random((1, model.n_division_draws)))
    a = Alive(batch.daughter_a[0], 0.0) if batch.alive_a[0] else SENESCENT
    b = Alive(batch.daughter_b[0], 0.0) if batch.alive_b[0] else SENESCENT
    return DivisionOutcome(
        daughter_a=a,
        daughter_b=b,
        shortening_set=ShorteningIndexSet.from_bits(batch.bits[0]),
        lengthening_sets=(_indices(batch.lengthen_set_a[0]), _indices(batch.lengthen_set_b[0])),
        shortening=(batch.shorten_a[0], batch.shorten_b[0]),
        lengthening=(batch.lengthen_a[0], batch.lengthen_b[0]),
    )


def kernel_sample_daughter(x, rng, model):
    """One draw of daughter A's state."""
    return sample_division(x, rng, model).daughter_a


def kernel_sample_batch(model, x, n, rng, bits=None):
    """n independent daughter-A draws from x: (traits (n, 2k), alive (n,))."""
    x = check_telomeres(x, model.k)
    batch = divide(model, np.broadcast_to(x, (n, model.n_coords)), rng.random((n, model.n_division_draws)), bits=bits)
    return batch.daughter_a, batch.alive_a


def sample_division_time(x, a, rng, model, method="auto"):
    """Waiting time until division for a cell of age ``a``.

    ``method="auto"`` inverts the integrated hazard; ``"thinning"`` uses the
    polynomial envelope instead.
    """
    if method == "thinning":
        return model.birth.thinning_time(float(a), rng)
    if method != "auto":
        raise ValueError("method must be 'auto' or 'thinning'")
    return float(model.birth.waiting_time(float(a), rng.random()))


# ----------------------------------------------------------- serialization


def model_to_config(model):
    """Section [model] as a mapping of strings."""
    out = {
        "k": str(model.k),
        "delta": repr(float(model.delta)),
        "Delta": repr(float(model.Delta)),
        "preset": model.preset,
        "birth.kind": model.birth.kind,
        "birth.coeffs": json.dumps(list(model.birth.coeffs)),
    }
    if model.preset == "model1":
        out["gamma"] = repr(float(model.gamma))
    else:
        out["q_params"] = json.dumps(model.lengthening.probability.params())
    if model.preset == "custom":
        out["lengthening"] = model.lengthening.amount
        if model.renewal is not None:
            out["renewal"] = json.dumps(
                {"D": model.renewal.D, "eps0": model.renewal.eps0,
                 "k_renew_upper": model.renewal.k_renew_upper, "b_max": model.renewal.b_max}
            )
    return out


MODEL_KEYS = {"k", "delta", "Delta", "preset", "gamma", "q_params", "birth.kind", "birth.coeffs", "lengthening", "renewal"}


def model_from_config(section):
    """Inverse of :func:`model_to_config`; collects every violation before failing."""
    errors = []
    section = dict(section)
    for key in sorted(set(section) - MODEL_KEYS):
        errors.append(f"model.{key}: unknown key")

    def get(key, convert, required=True, default=None):
        if key not in section:
            if required:
                errors.append(f"model.{key}: missing")
            return default
        try:
            return convert(section[key])
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            errors.append(f"model.{key}: cannot parse {section[key]!r} ({exc})")
            return default

    k = get("k", int)
    delta = get("delta", float)
    Delta = get("Delta", float)
    preset = get("preset", str, required=False, default="model2")
    if k is not None and k < 1:
        errors.append("model.k: must be a positive integer")
    if delta is not None and not delta > 0:
        errors.append("model.delta: must be positive")
    if Delta is not None and not Delta > 0:
        errors.append("model.Delta: must be positive")
    if delta is not None and Delta is not None and delta > 0 and not Delta > delta:
        errors.append("model.Delta: must exceed delta")
    if preset not in ("model1", "model2", "custom"):
        errors.append("model.preset: must be model1, model2 or custom")
    birth_kind = get("birth.kind", str, required=False, default="age_linear")
    coeffs = get("birth.coeffs", json.loads, required=False, default=None)
    birth = None
    try:
        if coeffs is None:
            coeffs = {"constant": [1.0], "age_linear": [0.0, 1.0]}.get(birth_kind)
            if coeffs is None:
                raise ModelValidationError("custom_poly birth rate needs birth.coeffs")
        birth = BirthRate(birth_kind, tuple(coeffs))
    except (ModelValidationError, TypeError) as exc:
        errors.append(f"model.birth: {exc}")

    q = None
    if preset in ("model2", "custom"):
        raw = get("q_params", json.loads, required=False, default={"kind": "exponential", "scale": 1.0, "rate": 0.05})
        try:
            q = probability_from_params(raw) if raw is not None else None
        except (ConfigurationError, ModelValidationError) as exc:
            errors.append(f"model.{exc}")
    gamma = get("gamma", float, required=(preset == "model1"))
    amount = get("lengthening", str, required=False, default="uniform")
    if amount not in LENGTHENING_AMOUNTS:
        errors.append(f"model.lengthening: must be one of {LENGTHENING_AMOUNTS}")
    renewal = get("renewal", json.loads, required=False)
    if errors:
        raise ConfigurationError(errors)
    try:
        if preset == "model1":
            return build_model1(k, delta, Delta, gamma, birth=birth)
        if preset == "model2":
            return build_model2(k, delta, Delta, q, birth=birth)
        setup = RenewalSetup(**renewal) if renewal else None
        return build_custom(k, delta, Delta, amount, q, birth, renewal=setup)
    except (ModelValidationError, NumericError, TypeError) as exc:
        raise ConfigurationError([f"model: {exc}"]) from None
