import math

import numpy as np
import pytest
import sympy
from scipy import integrate, stats

from sos_lab import oracle
from sos_lab.field import PhiField, TauField
from sos_lab.lattice import cube
from sos_lab.rng import RngStream
from sos_lab.sampler import (ConfigError, SamplerConfig, gaussian_phi_draws, heatbath_phi_site,
                             piecewise_exponential_draw, resample_phi_given_tau, run_chain,
                             sample_tau_array, sample_tau_given_gradient)
from sos_lab.stats import jackknife


def draws_with_neighbors(y, n, seed):
    gen = np.random.default_rng(seed)
    return piecewise_exponential_draw(np.tile(np.asarray(y, float), (n, 1)), gen.random(n), gen.random(n))


def test_heatbath_single_neighbor_median():
    x = draws_with_neighbors([1.7], 100_000, 1)
    se = 1.0 / (2 * 0.5 * math.sqrt(len(x)))  # Laplace density at the median is 1/2
    assert abs(np.median(x) - 1.7) < 3 * se


def test_heatbath_two_equal_neighbors_variance():
    x = draws_with_neighbors([0.3, 0.3], 100_000, 2)
    # Laplace(scale 1/2): variance 1/2, fourth central moment 24 b^4 = 1.5
    se = math.sqrt((1.5 - 0.25) / len(x))
    assert abs(x.var() - 0.5) < 3 * se


def test_heatbath_four_neighbors_ks_against_symbolic_cdf():
    x = draws_with_neighbors([0, 1, 2, 3], 100_000, 3)
    cdf = oracle.heatbath_cdf([0, 1, 2, 3]).vectorized()
    assert stats.kstest(x, cdf).pvalue > 0.01


def test_heatbath_site_on_field(rng):
    box = cube(2, 2)
    vals = np.zeros(box.n_vertices)
    vals[~box.boundary_mask()] = rng.normal(size=9)
    phi = PhiField(box, vals)
    v = heatbath_phi_site(phi, (0, 0), RngStream(5).child("site"))
    assert np.isfinite(v)
    with pytest.raises(ValueError):
        heatbath_phi_site(phi, (2, 0), RngStream(5))


def test_heatbath_cdf_normalizes(rng):
    for _ in range(5):
        y = np.sort(rng.normal(size=rng.integers(2, 6)) * 2)
        c = oracle.heatbath_cdf(y)
        assert abs(c.cdf_at_infinity() - 1.0) < 1e-12


@pytest.mark.parametrize("z", [0.1, 1.0, 10.0])
def test_tau_sampler_ks(z):
    x = sample_tau_array(np.full(100_000, z), RngStream(11).child("ks", z).generator())
    assert stats.kstest(x, oracle.tau_cdf_table(z)).pvalue > 0.01


def test_tau_sampler_z4_inverse_mean():
    x = sample_tau_array(np.full(100_000, 4.0), np.random.default_rng(4))
    _, expect = oracle.tau_density_quadrature(4.0)
    ref = expect(lambda t: math.exp(-t))
    y = np.exp(-x)
    assert abs(y.mean() - ref) < 3 * y.std() / math.sqrt(len(y))


def test_tau_sampler_median_z1_matches_quadrature():
    # the quadrature median of the z=1 law is about -0.218, not 0
    cdf, _ = oracle.tau_density_quadrature(1.0)
    from scipy.optimize import brentq
    med = brentq(lambda t: cdf(t) - 0.5, -3, 3, xtol=1e-12)
    assert -0.25 < med < -0.19
    x = np.sort(sample_tau_array(np.full(100_000, 1.0), np.random.default_rng(8)))
    n = len(x)
    lo, hi = x[int(n / 2 - 1.5 * math.sqrt(n))], x[int(n / 2 + 1.5 * math.sqrt(n))]
    assert lo <= med <= hi


def test_tau_sampler_zero_branch():
    x = sample_tau_array(np.zeros(100_000), np.random.default_rng(9))
    w = np.exp(-x)  # Gamma(1/2, 1): mean 1/2, variance 1/2
    assert abs(w.mean() - 0.5) < 3 * math.sqrt(0.5 / len(w))
    assert np.isfinite(sample_tau_array(np.array([1e-300, 1e-301]), np.random.default_rng(0))).all()


def test_sample_tau_given_gradient_scalar():
    v = sample_tau_given_gradient(1.0, 0.0, RngStream(1).child("x"))
    assert isinstance(v, float) and np.isfinite(v)
    with pytest.raises(ValueError):
        sample_tau_given_gradient(1.0, -0.5, RngStream(1))


@pytest.mark.parametrize("z", [0.1, 1.0, 10.0])
def test_literal_substitution_fails_identity(z):
    """Only u = z^{1/4}(e^{s/2} - e^{-s/2}) turns the preceding integrand into exp(-u^2 - 2 sqrt z) du."""
    s = np.linspace(-4, 4, 81)
    prev = 0.5 * z ** 0.25 * (np.exp(s / 2) + np.exp(-s / 2)) * np.exp(-math.sqrt(z) * (np.exp(s) + np.exp(-s)))

    def pulled_back(u, du):
        return np.exp(-u ** 2 - 2 * math.sqrt(z)) * du

    fixed = pulled_back(z ** 0.25 * (np.exp(s / 2) - np.exp(-s / 2)), 0.5 * z ** 0.25 * (np.exp(s / 2) + np.exp(-s / 2)))
    literal = pulled_back(z ** 0.25 * np.exp(s / 2) - np.exp(-s / 2), 0.5 * (z ** 0.25 * np.exp(s / 2) + np.exp(-s / 2)))
    assert np.allclose(fixed, prev, rtol=1e-12, atol=0)
    if z != 1.0:
        assert not np.allclose(literal, prev, rtol=1e-3, atol=0)
    # and the adopted chain reproduces the identity
    total = integrate.quad(lambda t: math.exp(-z * math.exp(t) - math.exp(-t) - t / 2), -30, 30, limit=200)[0]
    assert total / math.sqrt(math.pi) == pytest.approx(math.exp(-2 * math.sqrt(z)), rel=1e-10)


def test_phi_given_tau_single_vertex_variance():
    box = cube(1, 2)
    x = gaussian_phi_draws(TauField.constant(box), np.random.default_rng(1), 100_000)[:, 4]
    assert abs(x.var() - 0.25) < 3 * 0.25 * math.sqrt(2 / len(x))


def test_phi_given_tau_path_covariance():
    box = cube(2, 1)
    x = gaussian_phi_draws(TauField.constant(box), np.random.default_rng(2), 100_000)[:, 1:4]
    M = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
    C = oracle.dense_inverse(M)
    emp = np.cov(x.T)
    se = np.sqrt((C ** 2 + np.outer(np.diag(C), np.diag(C))) / len(x))
    assert np.all(np.abs(emp - C) < 3 * se)


def test_phi_given_tau_general_5x5():
    box = cube(2, 2)
    gen = np.random.default_rng(3)
    tau = TauField(box, 0.7 * gen.normal(size=len(box.edges())))
    inter = ~box.boundary_mask()
    a = dict(zip([(e.base, e.tip) for e in box.edges()], tau.a))
    M = oracle.dense_laplacian(box.vertices(), lambda p, q: a.get((p, q), a.get((q, p))))[np.ix_(inter, inter)]
    C = oracle.dense_inverse(M)
    x = gaussian_phi_draws(tau, gen, 100_000)[:, inter]
    emp = np.cov(x.T)
    se = np.sqrt((C ** 2 + np.outer(np.diag(C), np.diag(C))) / len(x))
    assert np.all(np.abs(emp - C) < 3 * se)
    # the single-draw path agrees in distribution with the batch path
    phi = resample_phi_given_tau(tau, RngStream(3).child("one"))
    assert np.all(phi.values[~inter] == 0)


def symbolic_single_site_variance():
    v = sympy.Symbol("v", real=True)
    dens = sympy.exp(-2 * sympy.Abs(v))
    Z = sympy.integrate(dens.rewrite(sympy.Piecewise), (v, -sympy.oo, sympy.oo))
    m2 = sympy.integrate((v ** 2 * dens).rewrite(sympy.Piecewise), (v, -sympy.oo, sympy.oo))
    return float(m2 / Z)


@pytest.mark.parametrize("kind", ["phi-heatbath", "joint-alternating"])
def test_single_site_marginal_variance(kind):
    target = symbolic_single_site_variance()
    assert target == pytest.approx(0.5)
    cfg = SamplerConfig(L=1, d=1, n_samples=20_000, burn_in=100, thinning=1, kind=kind, seed=4)
    x = np.array([p.values[1] for p, _ in run_chain(cfg).samples])
    est = jackknife(x ** 2)
    assert abs(est.value - target) < 3 * est.sigma


def test_chain_determinism_and_manifest():
    cfg = SamplerConfig(L=4, n_samples=5, burn_in=3, thinning=2, seed=99)
    a, b = run_chain(cfg), run_chain(cfg)
    for (p1, t1), (p2, t2) in zip(a.samples, b.samples):
        assert p1.values.tobytes() == p2.values.tobytes()
        assert t1.tau.tobytes() == t2.tau.tobytes()
    assert a.manifest == b.manifest
    assert a.manifest["seed"] == 99 and a.manifest["sweeps"] == 13
    c = run_chain(SamplerConfig(L=4, n_samples=5, burn_in=3, thinning=2, seed=100))
    assert c.samples[0][1].tau.tobytes() != a.samples[0][1].tau.tobytes()


def test_chain_no_drift(sos_chain):
    diag = sos_chain.manifest["diagnostics"]
    assert abs(diag["half_drift"]) < 3 * diag["half_drift_sigma"]


@pytest.mark.parametrize("kw,field", [
    ({"delta": -1.0}, "delta"),
    ({"kind": "phi-heatbath", "delta": 0.1}, "kind"),
    ({"thinning": 0}, "thinning"),
    ({"kind": "metropolis"}, "kind"),
])
def test_config_validation_messages(kw, field):
    with pytest.raises(ConfigError, match=field):
        SamplerConfig(**kw).validate()


def test_joint_chain_positive_delta():
    res = run_chain(SamplerConfig(L=3, delta=0.1, n_samples=3, burn_in=2, thinning=1, seed=1))
    assert len(res) == 3
