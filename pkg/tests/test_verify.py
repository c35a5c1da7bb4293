import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from telobranch import streams, verify
from telobranch.errors import ModelValidationError
from telobranch.model import BirthRate, ExponentialProbability, build_custom, build_model1, build_model2


def _uniform_mgf(lam, width):
    return integrate.quad(lambda v: math.exp(lam * v), 0.0, width)[0] / width


# ------------------------------------------------------------ lengthening bound


@pytest.mark.parametrize("fixture", ["model1", "model2"])
def test_lambda_near_one_for_tiny_lambda(fixture, request):
    model = request.getfixturevalue(fixture)
    value = verify.capital_lambda(model, 1e-8, 1)
    assert 1.0 <= value.value < 1 + 1e-4 and value.certified


def test_lambda_model1_matches_dense_grid_supremum(model1):
    lam, L = 0.5, 1
    tau = verify.large_threshold(model1, L)
    r = tau + np.concatenate([np.logspace(-10, 3, 400)])
    factors = [1.0 + _uniform_mgf(lam, model1.Delta / (x + 1.0)) - 1.0 for x in r]
    oracle = max(factors) ** (2 * model1.k)
    assert verify.capital_lambda(model1, lam, L).value == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_lambda_model2_matches_quadrature(model2, L):
    lam = 0.01
    tau = verify.large_threshold(model2, L)
    q = min(1.0, math.exp(-0.05 * tau))
    oracle = (1.0 + q * (_uniform_mgf(lam, model2.Delta) - 1.0)) ** 2
    assert verify.capital_lambda(model2, lam, L).value == pytest.approx(oracle, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-4, 5.0), st.integers(1, 30))
def test_lambda_at_least_one_and_nonincreasing_in_L(lam, L):
    model = build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05))
    a = verify.capital_lambda(model, lam, L).value
    b = verify.capital_lambda(model, lam, L + 1).value
    assert a >= 1.0 and b <= a


def test_lambda_custom_model_is_grid_and_not_certified():
    custom = build_custom(1, 1.0, 100.0, "uniform", ExponentialProbability(1.0, 0.05), BirthRate.age_linear())
    with pytest.raises(ValueError):
        verify.capital_lambda(custom, 0.01, 1, b_max=200.0)
    value = verify.capital_lambda(custom, 0.01, 1, b_max=200.0, grid=(0.0, 1e4, 2001))
    assert value.method == "grid-sup" and not value.certified and value.value >= 1.0


def test_lambda_rejects_nonpositive(model2):
    with pytest.raises(ValueError):
        verify.capital_lambda(model2, 0.0, 1)


# ------------------------------------------------------------ lyapunov function


def test_lyapunov_flat_region_and_constants(model2):
    lyap = verify.lyapunov_build(model2, 0.01, 1)
    rng = np.random.default_rng(0)
    flat = rng.uniform(0.0, lyap.flat_upper, size=(500, 2))
    assert np.all(lyap(flat) == 1.0)
    assert lyap.c_v == pytest.approx(math.exp(2 * 0.01 * 100.0))
    expected = (1.0 + model2.shortening.laplace(0.01)) * lyap.lam_value - 1.0
    assert lyap.eps1 == pytest.approx(expected, rel=1e-14)


def test_lyapunov_one_division_ratio_bounded_by_cv(model2):
    lyap = verify.lyapunov_build(model2, 0.01, 1)
    rng = np.random.default_rng(1)
    x = rng.uniform(0.0, 1000.0, size=2)
    batch, ratio = verify._daughter_ratios(model2, lyap, x, 20000, rng)
    assert np.all(ratio <= lyap.c_v * (1 + 1e-12))
    assert np.all(ratio >= 1.0 / lyap.c_v * (1 - 1e-12) * batch.alive_a - 1e-300)


def test_lyapunov_build_guards(model2):
    with pytest.raises(ValueError):
        verify.lyapunov_build(model2, 0.01, 1.5)
    with pytest.raises(ModelValidationError):
        verify.lyapunov_build(model2, 0.01, 1, b_max=50.0)


@pytest.mark.parametrize("fixture", ["model1", "model2"])
def test_drift_passes_and_fails_when_tightened(fixture, request):
    model = request.getfixturevalue(fixture)
    lyap = verify.lyapunov_build(model, 0.01, 1)
    xs = [[0.0, 0.0], [lyap.flat_upper, lyap.flat_upper], [lyap.b_max + 50.0, 10.0], [lyap.b_max + 500.0] * 2]
    assert verify.check_lyapunov_drift(model, lyap, xs, 20000, seed=1)["passed"]
    assert not verify.check_lyapunov_drift(model, lyap, xs, 20000, seed=1, eps1=lyap.eps1 / 10)["passed"]


def test_drift_exit_mass_zero_deep_inside_box(model2):
    lyap = verify.lyapunov_build(model2, 0.01, 1)
    report = verify.check_lyapunov_drift(model2, lyap, [[0.0, 0.0], [50.0, 50.0]], 5000, seed=2)
    assert all(p["exit_mass"] == 0.0 for p in report["points"])


# ------------------------------------------------------------ renewal certificate


@pytest.mark.parametrize("fixture", ["model1", "model2"])
def test_renewal_certificate_passes(fixture, request):
    model = request.getfixturevalue(fixture)
    cert = verify.verify_renewal(model, n=20000, n_points=4, seed=3)
    assert cert.passed
    assert np.all(cert.estimates <= 2**cert.D)
    assert len(cert.rows()) == 4 and all(r["pass"] for r in cert.rows())


def test_renewal_certificate_fails_above_branching_limit(model2):
    cert = verify.verify_renewal(model2, n=5000, n_points=3, seed=4, target=2.0 ** model2.renewal.D + 0.1)
    assert not cert.passed


def test_restricted_descendants_empty_when_box_excludes_root(model2):
    counts = verify.restricted_descendants(model2, [5.0, 5.0], 1, 2.0, 200.0, 100, np.random.default_rng(5))
    assert counts.sum() == 0


def test_restricted_descendants_upper_bound(model1):
    counts = verify.restricted_descendants(model1, [10.0, 10.0], 3, 399.0, 429.0, 2000, streams.generator(6))
    assert counts.max() <= 8 and counts.min() >= 0


def test_renewal_box_must_fit(model2):
    with pytest.raises(ValueError):
        verify.verify_renewal(model2, renew_upper=300.0, b_max=200.0, n=10)


# ------------------------------------------------------------ routes


def test_model1_certified_by_vanishing_lengthening(model1):
    report = verify.check_corollaries(model1, 0.01, 1)
    assert "vanishing_lengthening" in report["certified_by"]
    assert not report["routes"]["vanishing_lengthening_probability"]["passed"]


def test_model2_certified_by_vanishing_probability(model2):
    report = verify.check_corollaries(model2, 0.01, 1)
    assert "vanishing_lengthening_probability" in report["certified_by"]
    assert not report["routes"]["vanishing_lengthening"]["passed"]


def test_lyapunov_inequality_route_fails_for_presets(model1, model2):
    for model in (model1, model2):
        route = verify.check_corollaries(model, 0.01, 1)["routes"]["lyapunov_inequality"]
        assert route["lhs"] >= route["rhs"] and not route["passed"]


def test_bounded_rate_route_reports_violation():
    model = build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.constant(1.0))
    route = verify.check_corollaries(model, 1.0, 1)["routes"]["bounded_rate_inequality"]
    assert route["b1"] == route["b2"] == 1.0
    assert route["lhs"] >= route["rhs"] and not route["passed"]


def test_bounded_rate_route_needs_bounds(model2):
    route = verify.check_corollaries(model2, 0.01, 1)["routes"]["bounded_rate_inequality"]
    assert route == {"applicable": False, "passed": False}


def test_rate_envelope():
    env = verify.rate_envelope(BirthRate.age_linear())
    assert env["upper_envelope"] and env["eventual_lower_bound"]
    assert not verify.rate_envelope(BirthRate.constant(0.0))["eventual_lower_bound"]
