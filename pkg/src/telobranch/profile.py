"""Long-run trait profile of the population and checks of its age structure."""

from dataclasses import dataclass
import math

import numpy as np

from .errors import EstimationError
from .population import simulate_population

DEFAULT_X_BINS = 32
DEFAULT_AGE_BINS = 64
MIN_BIN_SAMPLES = 500


@dataclass(eq=False)
class ProfileHistogram:
    """Normalized histogram of pooled (x, age) samples, stored sparsely.

    ``cells`` holds one row of bin indices (x_1..x_2k, age) per occupied bin and
    ``weights`` the matching normalized mass.  The raw samples are kept so
    distribution checks need not bin ages.
    """

    x_edges: list
    age_edges: np.ndarray
    cells: np.ndarray
    weights: np.ndarray
    n_samples: int
    effective_size: float
    t_snapshot: float
    lambda_hat: float
    x: np.ndarray
    ages: np.ndarray

    @property
    def dim(self):
        return len(self.x_edges)

    def x_marginal(self, coordinate):
        """Mass per bin of one (1-based) coordinate."""
        edges = self.x_edges[coordinate - 1]
        return np.bincount(self.cells[:, coordinate - 1], weights=self.weights, minlength=len(edges) - 1)

    def age_marginal(self):
        return np.bincount(self.cells[:, -1], weights=self.weights, minlength=len(self.age_edges) - 1)

    def rows(self):
        """(bin centers..., weight) rows for CSV output."""
        centers = [0.5 * (e[1:] + e[:-1]) for e in list(self.x_edges) + [self.age_edges]]
        for cell, w in zip(self.cells, self.weights):
            yield [float(centers[j][c]) for j, c in enumerate(cell)] + [float(w)]

    def to_csv(self, path):
        names = [f"x_{i + 1}" for i in range(self.dim)] + ["age", "weight"]
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for row in self.rows():
                fh.write(",".join(repr(v) for v in row) + "\n")


def _edges(values, bins):
    if np.ndim(bins) == 0:
        lo, hi = float(np.min(values)), float(np.max(values))
        if hi <= lo:
            hi = lo + 1.0
        return np.linspace(lo, np.nextafter(hi, np.inf), int(bins) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    return edges


def _bin_index(values, edges):
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, len(edges) - 2)


def histogram_from_samples(x, ages, x_bins=DEFAULT_X_BINS, age_bins=DEFAULT_AGE_BINS, t_snapshot=math.nan,
                           lambda_hat=math.nan, effective_size=None):
    """Build a :class:`ProfileHistogram` from pooled samples.

    ``x_bins`` is a bin count, one edge array shared by all coordinates, or a list
    of per-coordinate edge arrays.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ages = np.asarray(ages, dtype=float)
    if len(x) == 0 or len(x) != len(ages):
        raise EstimationError("no samples to histogram")
    dim = x.shape[1]
    if isinstance(x_bins, (list, tuple)) and len(x_bins) == dim and np.ndim(x_bins[0]) == 1:
        x_edges = [_edges(x[:, i], b) for i, b in enumerate(x_bins)]
    else:
        x_edges = [_edges(x[:, i], x_bins) for i in range(dim)]
    age_edges = _edges(ages, age_bins)
    idx = np.column_stack([_bin_index(x[:, i], x_edges[i]) for i in range(dim)] + [_bin_index(ages, age_edges)])
    cells, counts = np.unique(idx, axis=0, return_counts=True)
    weights = counts / counts.sum()
    n = len(ages)
    return ProfileHistogram(x_edges, age_edges, cells, weights, n, float(n if effective_size is None else effective_size),
                            float(t_snapshot), float(lambda_hat), x, ages)


def _snapshot(table, t):
    mask = table.alive_mask(t) & ~table.capped[table.rep]
    return table.x[mask], table.ages(t)[mask], table.rep[mask]


def _effective_size(rep):
    """Kish effective size treating each replicate's cells as one correlated cluster."""
    sizes = np.bincount(rep)
    sizes = sizes[sizes > 0]
    return float(sizes.sum() ** 2 / np.sum(sizes.astype(float) ** 2)) if len(sizes) else 0.0


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def estimate_stationary(model, init, t_burn, t_snapshot, n_replicates, bins=None, cap=10**6, seed=0,
                        lambda_hat=math.nan):
    """Pool every alive cell at ``t_snapshot`` over replicates into a histogram.

    ``bins`` = (x_bins, age_bins).  The returned histogram carries a
    ``stabilization`` attribute: per-coordinate total-variation distances between
    the x-marginals at ``t_burn`` and at ``t_snapshot`` on common edges.
    """
    if not t_snapshot > t_burn:
        raise ValueError("t_snapshot must exceed t_burn")
    x_bins, age_bins = (DEFAULT_X_BINS, DEFAULT_AGE_BINS) if bins is None else bins
    table = simulate_population(model, init, t_snapshot, n_replicates, seed, cap=cap)
    x, ages, rep = _snapshot(table, t_snapshot)
    if len(ages) == 0:
        raise EstimationError("population extinct (or capped) in every replicate at the snapshot time")
    hist = histogram_from_samples(x, ages, x_bins, age_bins, t_snapshot, lambda_hat, _effective_size(rep))
    x_early, _, _ = _snapshot(table, t_burn)
    hist.stabilization = []
    for i in range(hist.dim):
        edges = hist.x_edges[i]
        late = hist.x_marginal(i + 1)
        if len(x_early):
            early = np.bincount(_bin_index(x_early[:, i], edges), minlength=len(edges) - 1) / len(x_early)
            hist.stabilization.append(tv_distance(early, late))
        else:
            hist.stabilization.append(math.nan)
    hist.n_capped = int(table.capped.sum())
    return hist


def age_target_cdf(model, lambda_hat, x_center=None, n_grid=200001):
    """CDF of the age density proportional to exp(-lambda_hat a - int_0^a b).

    Returns a vectorized callable.  The birth rate does not depend on x, so
    ``x_center`` is accepted for interface symmetry and ignored.
    """
    birth = model.birth
    if birth.degree == 0:
        rate = lambda_hat + birth.coeffs[0]
        if rate <= 0:
            raise ValueError("age density is not integrable: lambda_hat + b <= 0")
        return lambda a: -np.expm1(-rate * np.maximum(np.asarray(a, dtype=float), 0.0))
    # find where the log density drops below -40 and normalize numerically
    top = 1.0
    while lambda_hat * top + float(birth.integral(top)) < 40.0:
        top *= 2.0
        if top > 1e8:
            raise ValueError("age density is not integrable")
    grid = np.linspace(0.0, top, n_grid)
    dens = np.exp(-lambda_hat * grid - birth.integral(grid))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cum /= cum[-1]
    return lambda a: np.interp(np.asarray(a, dtype=float), grid, cum, left=0.0, right=1.0)


def ks_distance(samples, cdf):
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    f = cdf(s)
    return float(max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n)))


@dataclass(frozen=True)
class ProductFormReport:
    bins: list  # (x-bin index tuple, n, ks)
    skipped: list  # (x-bin index tuple, n)
    max_ks: float
    weighted_ks: float

    def rows(self):
        for cell, n, ks in self.bins:
            yield {"x_bin": " ".join(map(str, cell)), "n": n, "ks": ks, "skipped": 0}
        for cell, n in self.skipped:
            yield {"x_bin": " ".join(map(str, cell)), "n": n, "ks": math.nan, "skipped": 1}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x_bin,n,ks,skipped\n")
            for row in self.rows():
                fh.write(f"{row['x_bin']},{row['n']},{row['ks']!r},{row['skipped']}\n")


def check_product_form(hist, model, lambda_hat, x_edges=None, min_samples=MIN_BIN_SAMPLES):
    """KS distance between each x-bin's empirical age law and the product-form target.

    ``x_edges`` overrides the histogram's x-binning (a bin count or per-coordinate
    edges) so the check can run on coarser cells than the stored histogram.
    """
    x, ages = hist.x, hist.ages
    if x_edges is None:
        edges = hist.x_edges
    elif np.ndim(x_edges) == 0:
        edges = [_edges(x[:, i], x_edges) for i in range(hist.dim)]
    else:
        edges = [_edges(x[:, i], e) for i, e in enumerate(x_edges)]
    idx = np.column_stack([_bin_index(x[:, i], edges[i]) for i in range(hist.dim)])
    cells, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cdf = age_target_cdf(model, lambda_hat)
    done, skipped = [], []
    for j, cell in enumerate(cells):
        sel = ages[inverse == j]
        key = tuple(int(c) for c in cell)
        if len(sel) < min_samples:
            skipped.append((key, len(sel)))
        else:
            done.append((key, len(sel), ks_distance(sel, cdf)))
    if not done:
        raise EstimationError(f"no x-bin holds {min_samples} samples")
    ks = np.array([d[2] for d in done])
    ns = np.array([d[1] for d in done], dtype=float)
    return ProductFormReport(done, skipped, float(ks.max()), float(np.sum(ks * ns) / ns.sum()))


def marginal_factorization_report(hist, max_dim=4):
    """Total-variation distance between the joint x-law and the product of its coordinate marginals.

    Exploratory only: there is no pass/fail threshold.
    """
    if hist.dim > max_dim:
        raise ValueError(f"joint histogram limited to {max_dim} coordinates, got {hist.dim}")
    shape = tuple(len(e) - 1 for e in hist.x_edges)
    joint = np.zeros(shape)
    np.add.at(joint, tuple(hist.cells[:, i] for i in range(hist.dim)), hist.weights)
    product = np.ones(shape)
    for i in range(hist.dim):
        marginal = joint.sum(axis=tuple(j for j in range(hist.dim) if j != i))
        product = product * marginal.reshape([-1 if j == i else 1 for j in range(hist.dim)])
    return {"tv_distance": tv_distance(joint, product), "dim": hist.dim, "bins": list(shape)}
