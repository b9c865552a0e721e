import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from oracles import c_index_pairs, km_table, logrank_2x2, midranks, pearson

from crcrisk.survival import (
    CollinearityError,
    CovariateRow,
    Observation,
    SeparationError,
    SurvivalError,
    c_index,
    concordance_arrays,
    efron_loglik,
    fit_cox,
    fit_cox_arrays,
    format_hr,
    format_hr_ci,
    format_p,
    km_estimate,
    logrank_test,
    observations,
    significance_stars,
    spearman_test,
)
from crcrisk.synth import brute_force_partial_likelihood


def test_observation_validation():
    with pytest.raises(ValueError):
        Observation(-1.0, True)
    with pytest.raises(ValueError):
        Observation(float("inf"), False)
    assert CovariateRow((1.0, None)).missing == (False, True)


# Kaplan-Meier


def test_km_all_events():
    km = km_estimate(observations([1, 2, 3], [1, 1, 1]))
    assert_allclose(km.survival, [2 / 3, 1 / 3, 0.0])


def test_km_with_censoring():
    km = km_estimate(observations([1, 2, 3], [1, 0, 1]))
    assert km.survival_at(1) == pytest.approx(2 / 3)
    assert km.survival_at(3) == 0.0
    assert km.median == 3


def test_km_empty():
    with pytest.raises(SurvivalError, match="empty cohort"):
        km_estimate([])


def test_km_median_not_reached():
    assert km_estimate(observations([1, 2, 3, 4], [1, 0, 0, 0])).median is None


def test_km_matches_tabulation():
    rng = np.random.default_rng(1)
    time = rng.integers(1, 15, 50).astype(float)
    event = rng.random(50) < 0.7
    km = km_estimate(observations(time, event))
    table = km_table(list(time), list(event))
    assert_allclose(km.times, [r[0] for r in table])
    assert list(km.at_risk) == [r[1] for r in table]
    assert list(km.events) == [r[2] for r in table]
    assert_allclose(km.survival, [r[3] for r in table], rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=1, max_size=40))
def test_km_recurrence_and_monotone(data):
    time, event = zip(*data)
    km = km_estimate(observations(time, event))
    prev = 1.0
    for s, n, d in zip(km.survival, km.at_risk, km.events):
        assert s == pytest.approx(prev * (1 - d / n), abs=1e-15)
        assert s <= prev
        prev = s


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=40))
def test_km_no_censoring_is_empirical(times):
    km = km_estimate(observations(times, [1] * len(times)))
    for t in set(times):
        assert km.survival_at(t) == pytest.approx(sum(u > t for u in times) / len(times), abs=1e-12)


# log-rank


def test_logrank_identical_groups():
    obs = observations([1, 3, 4, 8], [1, 0, 1, 1])
    r = logrank_test([("a", obs), ("b", list(obs))])
    assert r.chi2 == pytest.approx(0.0, abs=1e-12)
    assert r.p == pytest.approx(1.0)


def test_logrank_three_identical():
    obs = observations([2, 5, 6], [1, 1, 0])
    r = logrank_test([("a", obs), ("b", obs), ("c", obs)])
    assert r.chi2 == pytest.approx(0.0, abs=1e-12)
    assert r.df == 2


def test_logrank_separated_matches_2x2():
    a = observations([1, 2], [1, 1])
    b = observations([10, 20], [1, 1])
    r = logrank_test([("a", a), ("b", b)])
    assert abs(r.chi2 - logrank_2x2([1, 2, 10, 20], [1] * 4, [1, 1, 0, 0])) < 1e-10


def test_logrank_errors():
    obs = observations([1, 2], [1, 1])
    with pytest.raises(SurvivalError):
        logrank_test([("a", obs)])
    with pytest.raises(SurvivalError, match="no events"):
        logrank_test([("a", observations([1], [0])), ("b", observations([2], [0]))])


# concordance


def test_c_index_perfect_and_reversed():
    obs = observations([1, 2, 3, 4], [1, 1, 1, 1])
    assert c_index([4, 3, 2, 1], obs) == 1.0
    assert c_index([1, 2, 3, 4], obs) == 0.0


def test_c_index_no_pairs():
    with pytest.raises(SurvivalError, match="no comparable pairs"):
        c_index([1, 2], observations([1, 2], [0, 0]))


def test_c_index_matches_pairs_with_ties():
    rng = np.random.default_rng(7)
    time = rng.integers(1, 8, 30).astype(float)
    event = rng.random(30) < 0.6
    risk = rng.integers(0, 4, 30).astype(float)
    assert concordance_arrays(risk, time, event) == float(c_index_pairs(risk, time, event))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_c_index_complement_and_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 25
    time = rng.integers(1, 10, n).astype(float)
    event = rng.random(n) < 0.7
    event[0] = True
    time[0] = 0.5
    risk = rng.permutation(n).astype(float)
    c = concordance_arrays(risk, time, event)
    assert c + concordance_arrays(-risk, time, event) == pytest.approx(1.0, abs=1e-12)
    assert concordance_arrays(np.exp(risk / 5.0) + 3, time, event) == c


# spearman


def test_spearman_monotone():
    x = np.arange(1.0, 11.0)
    assert spearman_test(x, x ** 2)[0] == pytest.approx(1.0)
    assert spearman_test(x, -x)[0] == pytest.approx(-1.0)


def test_spearman_ties_oracle():
    rng = np.random.default_rng(3)
    x = list(rng.integers(0, 5, 20).astype(float))
    y = list(rng.integers(0, 4, 20).astype(float))
    rho, p = spearman_test(x, y)
    assert abs(rho - pearson(midranks(x), midranks(y))) < 1e-12
    assert 0 < p <= 1


def test_spearman_constant():
    with pytest.raises(SurvivalError, match="zero rank variance"):
        spearman_test([1, 1, 1], [1, 2, 3])


# Cox


def test_cox_collinear_constant_column():
    X = np.zeros((10, 2))
    X[:, 1] = 3.0
    with pytest.raises(CollinearityError, match="collinear covariates"):
        fit_cox_arrays(np.arange(1.0, 11), np.ones(10, bool), X)


def test_cox_duplicate_columns_named():
    rng = np.random.default_rng(0)
    x = rng.normal(size=40)
    with pytest.raises(CollinearityError) as info:
        fit_cox_arrays(rng.exponential(size=40), np.ones(40, bool), np.column_stack([x, x]), ["a", "b"])
    assert info.value.columns == ("b",)


def test_cox_separation():
    time = np.arange(1.0, 11)
    x = (time <= 5).astype(float)
    with pytest.raises(SeparationError):
        fit_cox_arrays(time, np.ones(10, bool), x)


def test_cox_no_events():
    with pytest.raises(SurvivalError):
        fit_cox_arrays([1, 2, 3], [0, 0, 0], [0.0, 1.0, 0.0])


def test_cox_identical_arms():
    rng = np.random.default_rng(5)
    t = rng.exponential(10, 30)
    e = rng.random(30) < 0.8
    fit = fit_cox_arrays(np.r_[t, t], np.r_[e, e], np.r_[np.zeros(30), np.ones(30)])
    assert abs(fit.hr[0] - 1.0) < 1e-8


def test_cox_n12_golden_section():
    rng = np.random.default_rng(12)
    time = rng.permutation(12).astype(float) + 1.0
    event = np.array([1, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1, 1], bool)
    x = (rng.random(12) < 0.5).astype(float)
    fit = fit_cox_arrays(time, event, x)
    ref = brute_force_partial_likelihood(list(zip(time, event, x)))
    assert not ref.at_boundary
    assert abs(fit.beta[0] - ref.beta) < 1e-6


def test_cox_complete_case_and_rows_api():
    rows = [
        (Observation(1, True), CovariateRow((1.0,))),
        (Observation(2, True), CovariateRow((None,))),
        (Observation(3, True), CovariateRow((0.0,))),
        (Observation(4, False), CovariateRow((1.0,))),
        (Observation(5, True), CovariateRow((0.0,))),
    ]
    fit = fit_cox(rows)
    assert fit.n_used == 4
    assert fit.converged


def test_cox_fit_invariants():
    rng = np.random.default_rng(9)
    n = 200
    X = rng.normal(size=(n, 2))
    t = rng.exponential(1.0 / np.exp(X @ [0.5, -0.3]))
    e = rng.random(n) < 0.8
    fit = fit_cox_arrays(t, e, X)
    assert_allclose(fit.hr, np.exp(fit.beta))
    assert np.all(fit.ci_low < fit.hr) and np.all(fit.hr < fit.ci_high)
    assert 0 <= fit.c_index <= 1
    # affine rescaling of a column
    X2 = X.copy()
    X2[:, 0] = 3.0 * X[:, 0] + 7.0
    fit2 = fit_cox_arrays(t, e, X2)
    assert fit2.beta[0] == pytest.approx(fit.beta[0] / 3.0, abs=1e-6)
    assert fit2.se[0] == pytest.approx(fit.se[0] / 3.0, rel=1e-6)
    assert fit2.c_index == fit.c_index


def test_efron_gradient_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = 15
        t = rng.integers(1, 6, n).astype(float)
        e = rng.random(n) < 0.7
        e[0] = True
        eta = rng.normal(size=n)
        _, g = efron_loglik(t, e, eta)
        h = 1e-5
        fd = np.array([
            (efron_loglik(t, e, eta + h * np.eye(n)[i])[0] - efron_loglik(t, e, eta - h * np.eye(n)[i])[0]) / (2 * h)
            for i in range(n)
        ])
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


# formatting


def test_format_hr_examples():
    assert format_hr_ci(2.41, 1.77, 3.28) == "2.41(1.77,3.28)"
    assert format_hr_ci(1.0, 1.0, 1.0) == "1.00(1.00,1.00)"
    assert significance_stars(0.038) == "*"


def test_format_hr_from_fit():
    rng = np.random.default_rng(2)
    fit = fit_cox_arrays(rng.exponential(size=50), np.ones(50, bool), rng.normal(size=50))
    text = format_hr(fit, 0, with_p=True)
    assert text.startswith(f"{fit.hr[0]:.2f}(")
    assert text.endswith(format_p(fit.p[0]))


@pytest.mark.parametrize(
    "p,stars",
    [(0.2, ""), (0.1, "."), (0.0501, "."), (0.05, "*"), (0.0101, "*"), (0.01, "**"), (0.0011, "**"), (0.001, "***"), (1e-6, "***")],
)
def test_star_thresholds(p, stars):
    assert significance_stars(p) == stars


def test_format_p():
    assert format_p(0.00001) == "<0.0001***"
    assert format_p(0.012) == "0.012*"
    assert format_p(0.5) == "0.500"
