import math

import numpy as np
import pytest

from sos_lab.rng import RngStream, generator, stream_key
from sos_lab.stats import (Estimate, StatisticsError, agree, cauchy_doubling, hill_tail_index,
                           integrated_autocorrelation, jackknife, linear_fit, mean_estimate, require,
                           rule_of_three, variance_estimate)


def test_jackknife_mean_matches_standard_error():
    x = np.random.default_rng(0).normal(size=5000)
    e = jackknife(x)
    assert e.value == pytest.approx(x.mean())
    assert e.sigma == pytest.approx(x.std() / math.sqrt(len(x)), rel=0.3)
    lo, hi = e.ci
    assert lo < e.value < hi
    assert set(e.to_dict()) == {"value", "sigma", "n", "ci"}


def test_variance_estimate():
    x = np.random.default_rng(1).normal(scale=2.0, size=20000)
    e = variance_estimate(x)
    assert abs(e.value - 4.0) < 4 * e.sigma
    assert mean_estimate(x).n == 20000


def test_require():
    require(5, 5)
    with pytest.raises(StatisticsError) as exc:
        require(3, 5, "widgets")
    assert exc.value.required == 5 and "widgets" in str(exc.value)


def test_autocorrelation_of_ar1():
    gen = np.random.default_rng(2)
    rho = 0.8
    x = np.empty(100_000)
    x[0] = 0
    eps = gen.normal(size=len(x))
    for i in range(1, len(x)):
        x[i] = rho * x[i - 1] + eps[i]
    tau = integrated_autocorrelation(x)
    assert tau == pytest.approx(0.5 * (1 + rho) / (1 - rho), rel=0.15)
    assert integrated_autocorrelation(np.ones(10)) == 0.5


def test_rule_of_three():
    assert rule_of_three(0, 300) == (0.0, 0.01)
    p, up = rule_of_three(10, 100)
    assert p == 0.1 and up > p
    with pytest.raises(StatisticsError):
        rule_of_three(0, 0)


def test_linear_fit_exact_line():
    fit = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert fit["slope"] == pytest.approx(2) and fit["intercept"] == pytest.approx(1) and fit["r2"] == 1.0


def test_agree_and_doubling():
    assert agree(Estimate(1.0, 0.1, 10), Estimate(1.2, 0.1, 10))
    assert not agree(Estimate(1.0, 0.01, 10), Estimate(1.2, 0.01, 10))
    gen = np.random.default_rng(3)
    assert cauchy_doubling(gen.normal(size=4000))["stable"]
    assert not cauchy_doubling(np.concatenate([np.zeros(2000), np.ones(2000)]) + 0.01 * gen.normal(size=4000))["stable"]


def test_hill_estimator_pareto():
    x = np.random.default_rng(4).pareto(3.0, 100_000) + 1.0
    assert hill_tail_index(x, k=2000) == pytest.approx(3.0, rel=0.1)


def test_streams_are_keyed_and_reproducible():
    a = RngStream(5).child("sweep", 3).generator().random(4)
    b = generator(5, "sweep", 3).random(4)
    c = generator(5, "sweep", 4).random(4)
    d = generator(6, "sweep", 3).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    k = stream_key(2 ** 70 + 5, "x")
    assert k.dtype == np.uint64 and int(k[0]) == 5
