import math

import numpy as np
import pytest

from telobranch import population, renewal
from telobranch.errors import EstimationError
from telobranch.model import Alive, BirthRate, ExponentialProbability, build_model2


def one(x, a):
    return np.ones(len(a))


@pytest.fixture(scope="module")
def zero_rate():
    return build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.constant(0.0))


@pytest.fixture(scope="module")
def short_model():
    """Telomeres of a few units with frequent lengthening: cells regularly reach 0 and senesce."""
    return build_model2(1, 1.0, 5.0, ExponentialProbability(1.0, 1.0), birth=BirthRate.constant(1.0))


def test_zero_rate_tree_has_no_events(zero_rate):
    res = population.simulate_tree(zero_rate, Alive(np.array([3.0, 4.0]), 0.5), 2.0, seed=1)
    assert res.events == [] and res.divisions == 0
    assert len(res.alive) == 1
    label, x, age = res.alive[0]
    assert label == "1" and np.array_equal(x, [3.0, 4.0]) and age == pytest.approx(2.5)


def test_zero_rate_semigroup_is_exactly_one(zero_rate):
    est = population.estimate_M_t(zero_rate, Alive(np.array([3.0, 4.0]), 0.0), one, 5.0, 200, seed=2)
    assert est.mean == 1.0 and est.stderr == 0.0


def test_yule_mean_at_five(yule, far_init):
    est = population.estimate_M_t(yule, far_init, one, 5.0, 10**4, seed=3)
    assert abs(est.mean - math.exp(5.0)) < 0.05 * math.exp(5.0)


def test_yule_mean_at_three_within_three_sigma(yule, far_init):
    est = population.estimate_M_t(yule, far_init, one, 3.0, 10**4, seed=4)
    assert abs(est.mean - math.exp(3.0)) < 3 * est.stderr


def test_linear_rate_mean_matches_renewal_solver(model2):
    far = build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.age_linear())
    est = population.estimate_M_t(far, Alive(np.array([1e9, 1e9]), 0.0), one, 4.0, 10**4, seed=5)
    t, m = renewal.bh_mean(renewal.LifetimeLaw.age_linear(), 2.0, 1e-3, 4.0)
    assert abs(est.mean - m[-1]) < 3 * est.stderr


def test_tree_accounting_and_labels(short_model):
    res = population.simulate_tree(short_model, Alive(np.array([0.5, 0.5]), 0.0), 6.0, seed=6)
    assert res.total_created == 1 + 2 * res.divisions
    assert res.accounting_holds()
    times = [e.time for e in res.events]
    assert times == sorted(times)
    for label, _, _ in res.alive:
        parts = label.split(".")
        assert parts[0] == "1" and all(p in ("1", "2") for p in parts[1:])
    assert len(res.alive) + res.senescent_daughters + res.divisions == res.total_created


def test_short_telomeres_senesce(short_model):
    # one division at 0 loses daughter A with probability 0.005 per the quadrature oracle; with
    # several hundred divisions near 0 at least one loss is overwhelmingly likely
    res = population.simulate_tree(short_model, Alive(np.array([0.0, 0.0]), 0.0), 8.0, seed=7)
    assert res.senescent_daughters > 0
    kinds = {e.kind for e in res.events}
    assert "division" in kinds and any(k.startswith("senescence") for k in kinds)


def test_tree_deterministic(short_model):
    a = population.simulate_tree(short_model, Alive(np.array([1.0, 1.0]), 0.0), 5.0, seed=8)
    b = population.simulate_tree(short_model, Alive(np.array([1.0, 1.0]), 0.0), 5.0, seed=8)
    assert [(e.time, e.parent, e.kind) for e in a.events] == [(e.time, e.parent, e.kind) for e in b.events]


def test_batch_independent_of_chunking(short_model):
    init = Alive(np.array([1.0, 1.0]), 0.0)
    a = population.replicate_sums(short_model, init, 4.0, 300, seed=9, chunk=300)
    b = population.replicate_sums(short_model, init, 4.0, 300, seed=9, chunk=37)
    assert np.array_equal(a[0], b[0])


def test_cap_flags_replicates(yule, far_init):
    table = population.simulate_population(yule, far_init, 8.0, 20, seed=10, cap=1)
    assert table.capped.all()
    with pytest.raises(EstimationError):
        population.estimate_M_t(yule, far_init, one, 8.0, 20, seed=10, cap=1)


def test_population_ordered_in_rate(far_init):
    slow = build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.constant(1.0))
    fast = build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.constant(1.5))
    a = population.estimate_M_t(slow, far_init, one, 3.0, 4000, seed=11)
    b = population.estimate_M_t(fast, far_init, one, 3.0, 4000, seed=11)
    assert a.mean < b.mean + 3 * math.hypot(a.stderr, b.stderr)


def test_growth_rate_constant_rate(yule, far_init):
    est = population.estimate_growth_rate(yule, far_init, np.linspace(0, 7, 15), 2000, seed=12)
    assert abs(est.rate - 1.0) < 0.05
    assert est.ci_low <= est.rate <= est.ci_high


def test_growth_rate_linear_rate_near_malthusian_root():
    far = build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.age_linear())
    est = population.estimate_growth_rate(far, Alive(np.array([1e9, 1e9]), 0.0), np.linspace(0, 10, 21), 2000, seed=13)
    alpha = 0.6120031809624806  # quadrature + brentq oracle, see test_renewal
    assert abs(est.rate - alpha) < 0.05 * alpha


def test_growth_rate_dominates_renewal_root():
    model = build_model2(1, 0.1, 10.0, ExponentialProbability(1.0, 0.05))
    alpha = renewal.solve_alpha(model.birth, model.renewal.eps0, model.renewal.D)
    est = population.estimate_growth_rate(model, Alive(np.array([5.0, 5.0]), 0.0), np.linspace(0, 10, 21), 1000, seed=14)
    assert est.ci_high >= alpha


def test_growth_rate_rejects_short_grid(yule, far_init):
    with pytest.raises(ValueError):
        population.estimate_growth_rate(yule, far_init, [0.0, 1.0, 2.0], 10, seed=1)


def test_csv_writers(tmp_path, short_model):
    res = population.simulate_tree(short_model, Alive(np.array([1.0, 1.0]), 0.0), 3.0, seed=15)
    population.write_events_csv(tmp_path / "events.csv", res)
    population.write_alive_csv(tmp_path / "alive.csv", res, 1)
    assert (tmp_path / "events.csv").read_text().splitlines()[0] == "time,parent,kind,I,J,M"
    rows = (tmp_path / "alive.csv").read_text().splitlines()
    assert rows[0] == "label,x_1,x_2,age" and len(rows) == len(res.alive) + 1
    _, table = population.mean_counts(short_model, Alive(np.array([1.0, 1.0]), 0.0), [0.0, 1.0, 2.0], 50, seed=1)
    population.write_estimates_csv(tmp_path / "est.csv", table)
    assert (tmp_path / "est.csv").read_text().splitlines()[0] == "t,mean,stderr,n_valid"
