import numpy as np
import pytest
from scipy import stats

from crcrisk.rng import Stream
from crcrisk.survival import concordance_arrays, fit_cox_arrays
from crcrisk.synth import (
    BagSpec,
    ClinicalSpec,
    CohortSpec,
    brute_force_partial_likelihood,
    generate_bags,
    generate_clinical,
    generate_cohort,
    generate_cohort_arrays,
    generate_fixture,
    strong_signal_w,
)


def test_rng_reproducible_and_distinct_streams():
    a = Stream(42, 1).uniform(1000)
    assert np.array_equal(a, Stream(42, 1).uniform(1000))
    assert not np.array_equal(a, Stream(42, 2).uniform(1000))
    assert ((a >= 0) & (a < 1)).all()


def test_rng_distributions():
    n = 20000
    assert stats.kstest(Stream(1).uniform(n), "uniform").statistic < 0.015
    assert stats.kstest(Stream(2).normal(n), "norm").statistic < 0.015
    assert stats.kstest(Stream(3).exponential(n, 2.0), "expon", args=(0, 0.5)).statistic < 0.015


def test_rng_permutation_and_choice():
    p = Stream(5).permutation(50)
    assert sorted(p) == list(range(50))
    c = Stream(6).choice(30000, [0.2, 0.3, 0.5])
    assert np.allclose(np.bincount(c) / 30000, [0.2, 0.3, 0.5], atol=0.015)


def test_cohort_null_beta():
    time, event, X = generate_cohort_arrays(CohortSpec(2000, [0.0], seed=1))
    assert abs(fit_cox_arrays(time, event, X).beta[0]) < 0.08


def test_cohort_tiny_censoring():
    _, event, _ = generate_cohort_arrays(CohortSpec(2000, [0.5], baseline_rate=0.01, censor_rate=1e-6, seed=2))
    assert event.mean() >= 0.99


def test_cohort_deterministic():
    spec = CohortSpec(50, [0.7, -0.2], covariate_spec=[{"kind": "binary"}, {"kind": "normal"}], seed=9)
    assert generate_cohort(spec) == generate_cohort(spec)


def test_cohort_spec_validation():
    with pytest.raises(ValueError):
        CohortSpec(1, [0.0])
    with pytest.raises(ValueError):
        CohortSpec(10, [0.0], censor_rate=0.0)


def test_baseline_event_times_exponential():
    time, event, X = generate_cohort_arrays(CohortSpec(5000, [0.0], baseline_rate=0.02, censor_rate=1e-12, seed=4))
    assert event.all()
    assert stats.kstest(time, "expon", args=(0, 1 / 0.02)).statistic < 0.05


def test_bags_true_scorer_strong_signal():
    data = generate_bags(BagSpec(300, w_true=strong_signal_w(1), seed=1))
    time = np.array([o.time for o in data.obs])
    event = np.array([o.event for o in data.obs])
    assert concordance_arrays(data.true_risk, time, event) >= 0.9


def test_bags_null_signal():
    data = generate_bags(BagSpec(1000, w_true=np.zeros(256), seed=2))
    time = np.array([o.time for o in data.obs])
    event = np.array([o.event for o in data.obs])
    rnd = Stream(7).uniform(1000)
    assert 0.45 <= concordance_arrays(rnd, time, event) <= 0.55


def test_bags_deterministic_and_tile_range():
    spec = BagSpec(20, (5, 5), strong_signal_w(0), seed=3)
    a, b = generate_bags(spec), generate_bags(spec)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a.bags, b.bags))
    assert all(bag.n_tiles == 5 for bag in a.bags)
    with pytest.raises(ValueError):
        BagSpec(5, (0, 3))


def test_oracle_symmetric_arms():
    rows = [(t, 1, x) for t in (1.0, 2.0, 3.0, 4.0) for x in (0.0, 1.0)]
    assert abs(brute_force_partial_likelihood(rows).beta) < 1e-6


def test_oracle_separable_boundary():
    rows = [(float(t), 1, 1.0 if t <= 3 else 0.0) for t in range(1, 7)]
    assert brute_force_partial_likelihood(rows).at_boundary


def test_oracle_row_limit():
    with pytest.raises(ValueError):
        brute_force_partial_likelihood([(1.0, 1, 0.0)] * 51)


def test_clinical_generator():
    subs = generate_clinical(ClinicalSpec(200, seed=3))
    assert len(subs) == 200
    assert {s.stage for s in subs} == {"II", "III"}
    assert all(s.risk_class is not None for s in subs)
    assert generate_clinical(ClinicalSpec(200, seed=3)) == subs


def test_fixture_shapes():
    fx = generate_fixture(30, {"TUM": 8.0, "STR": 0.0}, seed=1, tiles_range=(5, 5))
    assert len(fx.subjects) == 30 and len(fx.bags) == 60
    assert all(b.n_tiles == 5 for b in fx.bags)
