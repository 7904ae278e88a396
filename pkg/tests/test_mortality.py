import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pensionalm.errors import AgeOutOfRange, DegenerateData, InsufficientAges
from pensionalm.mortality import (
    CohortTable,
    MortalityBasis,
    PopulationState,
    basis_value,
    evolve_population,
    fit_all_years,
    fit_year,
    log_likelihood,
    log_likelihood_gradient,
    project_cohort,
    survival_probability,
)
from pensionalm.synthetic import synthetic_cohorts

BASIS = MortalityBasis()
V_STAR = np.array([4.0, 2.5, 0.5])


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def one_year(v, exposure, rng=None, year=2000, gender="f"):
    return synthetic_cohorts({(year, gender): v}, BASIS, exposure=exposure, rng=rng)


@pytest.mark.parametrize(
    "age, expect",
    [(65, (0, 1, 0)), (18, (1, 0, 0)), (85, (0, 0.5, 0.5)), (105, (0, 0, 1))],
)
def test_basis_values(age, expect):
    np.testing.assert_allclose(basis_value(BASIS, age), expect, atol=1e-15)


def test_hat_shape_between_knots():
    # (x - 18) / 47 rising and (105 - x) / 40 falling
    assert basis_value(BASIS, 40)[1] == pytest.approx(22 / 47)
    assert basis_value(BASIS, 95)[1] == pytest.approx(10 / 40)


def test_basis_out_of_range():
    with pytest.raises(AgeOutOfRange):
        basis_value(BASIS, 17.5)
    with pytest.raises(AgeOutOfRange):
        survival_probability(V_STAR, 106, BASIS)


@settings(max_examples=50, deadline=None)
@given(st.floats(18, 105))
def test_partition_of_unity(age):
    phi = basis_value(BASIS, age)
    assert phi.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((phi >= 0) & (phi <= 1))


def test_survival_examples():
    assert survival_probability([0, 0, 0], 40, BASIS) == 0.5
    assert survival_probability([7.0, 2.0, -3.0], 65, BASIS) == pytest.approx(0.88080, abs=1e-5)
    assert survival_probability([0, 2, 4], 85, BASIS) == pytest.approx(0.95257, abs=1e-5)


def test_survival_batches():
    v = np.array([[0, 2, 4], [0, 0, 0]], dtype=float)
    p = survival_probability(v, [65, 85], BASIS)
    assert p.shape == (2, 2)
    np.testing.assert_allclose(p[1], 0.5)


def test_fit_recovers_planted_factors_exactly():
    v = fit_year(one_year(V_STAR, 1e7), BASIS)
    np.testing.assert_allclose(v, V_STAR, atol=1e-8)


def test_fit_recovers_planted_factors_with_binomial_noise():
    v = fit_year(one_year(V_STAR, 1e7, np.random.default_rng(3)), BASIS)
    assert np.max(np.abs(v - V_STAR)) < 1e-2


def test_single_knot_closed_form():
    basis = MortalityBasis((65.0,), min_age=18, max_age=105)
    table = CohortTable([2000], [65], ["m"], [100.0], [20.0])
    assert fit_year(table, basis)[0] == pytest.approx(math.log(0.8 / 0.2), abs=1e-9)
    assert math.log(0.8 / 0.2) == pytest.approx(1.38629, abs=1e-5)


def test_no_deaths_is_degenerate():
    t = one_year(V_STAR, 1e4)
    t.deaths[:] = 0
    with pytest.raises(DegenerateData):
        fit_year(t, BASIS)


def test_all_die_is_degenerate():
    t = one_year(V_STAR, 1e4)
    t.deaths[:] = t.exposure
    with pytest.raises(DegenerateData):
        fit_year(t, BASIS)


def test_too_few_ages():
    t = CohortTable([2000, 2000], [60, 70], ["m", "m"], [100.0, 100.0], [1.0, 2.0])
    with pytest.raises(InsufficientAges):
        fit_year(t, BASIS)


def test_fit_all_years_matches_single_fits():
    table = synthetic_cohorts({(2000, "m"): V_STAR, (2001, "m"): V_STAR + 0.1}, BASIS, exposure=1e5)
    fitted = fit_all_years(table, BASIS)
    assert fitted.years == [2000, 2001]
    for year in (2000, 2001):
        np.testing.assert_array_equal(fitted.values[(year, "m")], fit_year(table.select(year, "m"), BASIS))


def test_fit_all_years_empty():
    with pytest.raises(InsufficientAges):
        fit_all_years(CohortTable([], [], [], [], []), BASIS)


def test_fit_all_years_ages_outside_basis():
    ages = np.arange(5, 30)
    table = CohortTable(np.full(ages.size, 1990), ages, ["f"] * ages.size, np.full(ages.size, 1e4), np.full(ages.size, 10.0))
    with pytest.raises(AgeOutOfRange, match="1990"):
        fit_all_years(table, BASIS)


def test_fit_all_years_lists_every_failure():
    good = one_year(V_STAR, 1e4, year=2000)
    bad = one_year(V_STAR, 1e4, year=2001)
    bad.deaths[:] = 0
    both = CohortTable(*(np.concatenate([getattr(good, k), getattr(bad, k)]) for k in ("year", "age", "gender", "exposure", "deaths")))
    with pytest.raises(DegenerateData) as info:
        fit_all_years(both, BASIS)
    assert "2001" in str(info.value) and "2000" not in str(info.value)


def test_deaths_above_exposure_rejected():
    from pensionalm.errors import DataValidationError

    with pytest.raises(DataValidationError, match="row 1"):
        CohortTable([2000, 2000], [60, 61], ["m", "m"], [10.0, 10.0], [1.0, 11.0])


def test_fit_error_shrinks_with_exposure():
    rng = np.random.default_rng(11)
    errs = [np.max(np.abs(fit_year(one_year(V_STAR, e, rng), BASIS) - V_STAR)) for e in (1e3, 1e5, 1e7)]
    assert errs[0] > errs[1] > errs[2]


def _data(seed=0):
    t = one_year(V_STAR, 1e4, np.random.default_rng(seed))
    return t.age, t.exposure, t.deaths


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 6), min_size=3, max_size=3))
def test_gradient_matches_finite_differences(v):
    ages, E, D = _data()
    v = np.array(v)
    g = log_likelihood_gradient(v, ages, E, D, BASIS)
    h = 1e-5
    fd = np.array([
        (log_likelihood(v + h * e, ages, E, D, BASIS) - log_likelihood(v - h * e, ages, E, D, BASIS)) / (2 * h)
        for e in np.eye(3)
    ])
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(g)))


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-3, 6), min_size=3, max_size=3),
    st.lists(st.floats(-3, 6), min_size=3, max_size=3),
    st.floats(0, 1),
)
def test_likelihood_above_chord(u, w, lam):
    ages, E, D = _data(1)
    u, w = np.array(u), np.array(w)
    L = lambda v: log_likelihood(v, ages, E, D, BASIS)  # noqa: E731
    mid = L(lam * u + (1 - lam) * w)
    chord = lam * L(u) + (1 - lam) * L(w)
    assert mid >= chord - 1e-9 * max(1.0, abs(chord))


def test_fit_is_maximum():
    ages, E, D = _data(2)
    t = CohortTable(np.zeros(ages.size), ages, ["f"] * ages.size, E, D)
    v = fit_year(t, BASIS)
    best = log_likelihood(v, ages, E, D, BASIS)
    for d in np.random.default_rng(0).normal(size=(20, 3)) * 1e-3:
        assert log_likelihood(v + d, ages, E, D, BASIS) <= best


# -- population --------------------------------------------------------------------


def test_evolve_certain_survival():
    pop = PopulationState([65.0], ["m"], [123])
    out = evolve_population(pop, {"m": np.array([50.0, 50.0, 50.0])}, BASIS, np.random.default_rng(0))
    assert out.count.tolist() == [123]
    assert out.age.tolist() == [66.0]


def test_evolve_empty_cohort():
    pop = PopulationState([65.0], ["f"], [0])
    out = evolve_population(pop, {"f": V_STAR}, BASIS, np.random.default_rng(0))
    assert out.count.tolist() == [0]


def test_evolve_removes_at_max_age():
    pop = PopulationState([104.0, 70.0], ["f", "f"], [5, 5])
    out = evolve_population(pop, {"f": V_STAR}, BASIS, np.random.default_rng(0))
    assert out.age.tolist() == [71.0]


def test_binomial_mean():
    basis = MortalityBasis((65.0,), min_age=18, max_age=105)
    v = np.full((100_000, 1, 1), math.log(0.95 / 0.05))
    counts = project_cohort(1000, [65], v, basis, np.random.default_rng(5))[:, 1]
    sd = math.sqrt(1000 * 0.95 * 0.05)
    assert abs(counts.mean() - 950) < 3 * sd / math.sqrt(counts.size)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5000), st.floats(40, 100), st.integers(0, 2**32 - 1))
def test_population_never_grows(count, age, seed):
    pop = PopulationState([age], ["m"], [count])
    out = evolve_population(pop, {"m": V_STAR}, BASIS, np.random.default_rng(seed))
    assert out.count.sum() <= count


def test_larger_factors_give_more_survivors():
    rng = np.random.default_rng(9)
    low = np.broadcast_to(V_STAR - 0.3, (20_000, 20, 3))
    high = np.broadcast_to(V_STAR, (20_000, 20, 3))
    ages = [80 + t for t in range(20)]
    m_low = project_cohort(500, ages, low, BASIS, rng).mean(axis=0)
    m_high = project_cohort(500, ages, high, BASIS, rng).mean(axis=0)
    assert np.all(m_high[1:] > m_low[1:])


def test_project_cohort_absorbs_at_max_age():
    v = np.broadcast_to(V_STAR + 10, (3, 10, 3))
    out = project_cohort(7, [100 + t for t in range(10)], v, BASIS, np.random.default_rng(0))
    assert out[:, :5].min() == 7
    assert np.all(out[:, 5:] == 0)
