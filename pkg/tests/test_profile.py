import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from telobranch import profile as pr
from telobranch.errors import EstimationError
from telobranch.model import Alive, BirthRate, ExponentialProbability, build_model2

GROWTH = 0.9966  # fitted growth rate of the fast-mixing instance below


def _dkw(n, alpha=1e-3):
    """Dvoretzky-Kiefer-Wolfowitz radius: P(KS > radius) <= alpha."""
    return math.sqrt(math.log(2 / alpha) / (2 * n))


@pytest.fixture(scope="module")
def fast_model():
    """Short telomeres with frequent lengthening: the trait law settles within a few generations."""
    return build_model2(1, 1.0, 5.0, ExponentialProbability(1.0, 1.0), birth=BirthRate.constant(1.0))


@pytest.fixture(scope="module")
def profile(fast_model):
    return pr.estimate_stationary(fast_model, Alive(np.array([3.5, 3.5]), 0.0), 5.0, 10.0, 8, seed=11, lambda_hat=GROWTH)


# ------------------------------------------------------------ histogram


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 400), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
def test_histogram_normalized(n, x_bins, age_bins, seed):
    rng = np.random.default_rng(seed)
    hist = pr.histogram_from_samples(rng.exponential(size=(n, 2)), rng.exponential(size=n), x_bins, age_bins)
    assert hist.weights.sum() == pytest.approx(1.0)
    assert hist.x_marginal(1).sum() == pytest.approx(1.0) and hist.age_marginal().sum() == pytest.approx(1.0)
    assert len(hist.x_marginal(2)) == x_bins and len(hist.age_marginal()) == age_bins
    assert hist.n_samples == n


def test_histogram_rejects_bad_edges():
    with pytest.raises(ValueError):
        pr.histogram_from_samples(np.ones((3, 2)), np.ones(3), [np.array([0.0, 0.0, 1.0])] * 2, 4)
    with pytest.raises(EstimationError):
        pr.histogram_from_samples(np.zeros((0, 2)), np.zeros(0))


def test_zero_rate_profile_is_single_cell():
    model = build_model2(1, 1.0, 5.0, ExponentialProbability(1.0, 1.0), birth=BirthRate.constant(0.0))
    hist = pr.estimate_stationary(model, Alive(np.array([2.0, 3.0]), 0.0), 1.0, 2.0, 3, seed=1)
    assert len(hist.cells) == 1 and hist.weights[0] == 1.0
    assert np.all(hist.ages == 2.0) and hist.n_samples == 3


def test_profile_csv(tmp_path, profile):
    profile.to_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "x_1,x_2,age,weight" and len(rows) == 1 + len(profile.cells)
    assert sum(float(r.split(",")[-1]) for r in rows[1:]) == pytest.approx(1.0)


def test_snapshot_window_validated(fast_model):
    with pytest.raises(ValueError):
        pr.estimate_stationary(fast_model, Alive(np.array([3.5, 3.5]), 0.0), 5.0, 5.0, 2)


# ------------------------------------------------------------ age target


def test_constant_rate_target_is_exponential(fast_model):
    cdf = pr.age_target_cdf(fast_model, 0.5)
    a = np.array([0.0, 0.3, 2.0])
    assert np.allclose(cdf(a), 1 - np.exp(-1.5 * a), atol=1e-15)


@pytest.mark.parametrize("lam", [0.3, 0.612, 1.5])
def test_linear_rate_target_matches_error_function(lam):
    model = build_model2(1, 1.0, 5.0, ExponentialProbability(1.0, 1.0), birth=BirthRate.age_linear())
    cdf = pr.age_target_cdf(model, lam)
    a = np.linspace(0.0, 6.0, 41)
    s2 = math.sqrt(2.0)
    partial = special.erf((a + lam) / s2) - special.erf(lam / s2)
    oracle = partial / (1.0 - special.erf(lam / s2))
    assert np.max(np.abs(cdf(a) - oracle)) < 1e-6


def test_ks_exact_samples_within_dkw(fast_model):
    rng = np.random.default_rng(3)
    n = 20000
    ks = pr.ks_distance(rng.exponential(1 / (1 + GROWTH), size=n), pr.age_target_cdf(fast_model, GROWTH))
    assert ks < _dkw(n)


def test_product_form_synthetic_and_sorted_null(fast_model):
    rng = np.random.default_rng(4)
    n = 40000
    x = rng.uniform(0.0, 10.0, size=(n, 2))
    ages = rng.exponential(1 / (1 + GROWTH), size=n)
    hist = pr.histogram_from_samples(x, ages, 8, 16)
    good = pr.check_product_form(hist, fast_model, GROWTH, x_edges=4)
    assert good.max_ks < _dkw(min(b[1] for b in good.bins))
    # ages tied to the first coordinate by rank: each x-bin sees one slice of the age law
    order = np.argsort(x[:, 0])
    tied = np.empty(n)
    tied[order] = np.sort(ages)
    bad = pr.check_product_form(pr.histogram_from_samples(x, tied, 8, 16), fast_model, GROWTH, x_edges=4)
    assert bad.max_ks > 0.5


def test_product_form_needs_populated_bins(fast_model):
    hist = pr.histogram_from_samples(np.random.default_rng(5).uniform(size=(100, 2)), np.ones(100))
    with pytest.raises(EstimationError):
        pr.check_product_form(hist, fast_model, GROWTH)


def test_product_form_report_rows(tmp_path, profile, fast_model):
    report = pr.check_product_form(profile, fast_model, GROWTH, x_edges=4)
    report.to_csv(tmp_path / "ks.csv")
    rows = (tmp_path / "ks.csv").read_text().splitlines()
    assert rows[0] == "x_bin,n,ks,skipped" and len(rows) == 1 + len(report.bins) + len(report.skipped)
    assert all(n >= pr.MIN_BIN_SAMPLES for _, n, _ in report.bins)


# ------------------------------------------------------------ simulated profile


def test_simulated_profile_has_product_form(profile, fast_model):
    assert profile.n_samples >= 10**5
    report = pr.check_product_form(profile, fast_model, GROWTH, x_edges=4)
    assert report.max_ks < 0.05


def test_weighted_ks_stable_under_refinement(profile, fast_model):
    coarse = pr.check_product_form(profile, fast_model, GROWTH, x_edges=4).weighted_ks
    fine = pr.check_product_form(profile, fast_model, GROWTH, x_edges=8).weighted_ks
    assert abs(coarse - fine) < 0.01


def test_stabilization_reported(profile):
    assert len(profile.stabilization) == 2
    assert all(0.0 <= tv <= 1.0 for tv in profile.stabilization)
    assert profile.n_capped == 0 and 1.0 <= profile.effective_size <= profile.n_samples


# ------------------------------------------------------------ factorization


def test_factorization_independent_vs_anticorrelated():
    rng = np.random.default_rng(6)
    u = rng.uniform(size=(50000, 2))
    ages = np.zeros(50000)
    indep = pr.marginal_factorization_report(pr.histogram_from_samples(u, ages, 8, 1))
    anti = pr.marginal_factorization_report(pr.histogram_from_samples(np.column_stack([u[:, 0], 1 - u[:, 0]]), ages, 8, 1))
    assert indep["tv_distance"] < 0.03
    assert anti["tv_distance"] > 0.8


def test_factorization_dimension_guard():
    hist = pr.histogram_from_samples(np.random.default_rng(7).uniform(size=(100, 6)), np.zeros(100), 2, 1)
    with pytest.raises(ValueError):
        pr.marginal_factorization_report(hist)
