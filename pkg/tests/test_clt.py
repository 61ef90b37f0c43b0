import math

import numpy as np
import pytest

from sos_lab import oracle
from sos_lab.clt import (box_energy, brascamp_lieb_check, dipole, energy_convergence, moment_structure,
                         predict_gff_variance, tau_route_value, variance_direct, variance_tau_route)
from sos_lab.field import F_R_weights, PhiField, TauField, bump_field
from sos_lab.lattice import DomainError, cube
from sos_lab.sampler import gaussian_phi_draws
from sos_lab.stats import StatisticsError

from conftest import random_tau

PI_OVER_7 = math.pi / 7


def dense_variance(tau, f):
    box = tau.box
    inner = ~box.boundary_mask()
    lut = dict(zip([(e.base, e.tip) for e in box.edges()], tau.a))
    M = oracle.dense_laplacian(box.vertices(), lambda p, q: lut.get((p, q), lut.get((q, p))))
    C = oracle.dense_inverse(M[np.ix_(inner, inner)])
    v = F_R_weights(box, f)[inner]
    return float(v @ C @ v)


def test_tau_route_matches_dense_gaussian_variance(rng):
    box = cube(6, 2)
    f = bump_field(2, 3.0, (1.0, -0.5))
    for tau in (TauField.constant(box), random_tau(box, rng)):
        assert tau_route_value(tau, f) == pytest.approx(dense_variance(tau, f), rel=1e-10)
        assert tau_route_value(tau, f, method="cg", tol=1e-13) == pytest.approx(dense_variance(tau, f), rel=1e-8)


def test_direct_variance_on_gaussian_draws(rng):
    box = cube(6, 2)
    tau = random_tau(box, rng, 0.5)
    f = bump_field(2, 3.0)
    X = gaussian_phi_draws(tau, rng, 4000)
    phis = [PhiField(box, x) for x in X]
    var, mean = variance_direct(phis, f)
    ref = dense_variance(tau, f)
    assert abs(var.value - ref) < 4 * var.sigma
    assert abs(mean.value) < 4 * mean.sigma
    with pytest.raises(StatisticsError):
        variance_direct(phis[:50], f)


def test_variance_tau_route_requires_samples(box9):
    f = bump_field(2, 2.0)
    est, failures = variance_tau_route([TauField.constant(box9)] * 3, f, min_samples=3)
    assert failures == 0 and est.sigma == 0.0
    with pytest.raises(StatisticsError):
        variance_tau_route([TauField.constant(box9)] * 3, f)
    with pytest.raises(DomainError):
        tau_route_value(TauField.constant(box9), bump_field(2, 5.0))


def test_gff_prediction_routes_agree():
    f = bump_field(2, 1.0, (1.0, 1.0))
    exact = oracle.log_kernel_gff_variance((1.0, 1.0))
    assert exact == pytest.approx(PI_OVER_7, rel=1e-14)
    assert predict_gff_variance(1.0, f, method="radial") == pytest.approx(exact, rel=1e-10)
    assert predict_gff_variance(1.0, f, method="spectral") == pytest.approx(exact, rel=1e-8)


def test_gff_prediction_anisotropic_and_homogeneous():
    f = bump_field(2, 1.0, (0.3, 1.2))
    A = np.array([[1.5, 0.2], [0.2, 0.7]])
    r = predict_gff_variance(A, f, method="radial")
    s = predict_gff_variance(A, f, method="spectral")
    assert r == pytest.approx(s, rel=1e-7)
    assert predict_gff_variance(3.0 * A, f) == pytest.approx(r / 3.0, rel=1e-12)
    g = f.scaled(2.0)
    assert predict_gff_variance(A, g) == pytest.approx(4.0 * r, rel=1e-12)


def test_gff_prediction_three_dimensions():
    f = bump_field(3, 1.0, (1.0, 0.0, 0.0))
    # isotropic: radial integral of b^2 r^2 times |S^2| |w|^2 / 3
    from scipy.integrate import quad
    radial = quad(lambda r: (1 - r * r) ** 6 * r * r, 0, 1)[0]
    assert predict_gff_variance(1.0, f, d=3) == pytest.approx(radial * 4 * math.pi / 3, rel=1e-10)


def test_gff_prediction_rejects_bad_input():
    f = bump_field(2)
    with pytest.raises(ValueError):
        predict_gff_variance(-1.0, f)
    with pytest.raises(ValueError):
        predict_gff_variance(np.diag([1.0, -1.0]), f)
    with pytest.raises(ValueError):
        predict_gff_variance(1.0, f, d=4)


def test_lattice_gff_approaches_continuum():
    box = cube(64, 2)
    val = tau_route_value(TauField.constant(box), bump_field(2, 8.0))
    assert abs(val - PI_OVER_7) / PI_OVER_7 < 0.01


def test_box_energy_increases_to_whole_plane():
    f = bump_field(2)
    e = [box_energy(1.0, f, h) for h in (2.0, 4.0, 8.0)]
    assert e[0] < e[1] < e[2] < PI_OVER_7
    assert PI_OVER_7 - e[2] < 0.01
    assert box_energy(2.0, f, 4.0) == pytest.approx(e[1] / 2, rel=1e-12)
    with pytest.raises(ValueError):
        box_energy(0.0, f, 4.0)


def test_box_energy_matches_lattice_unit_conductance():
    f = bump_field(2)
    R = 16
    lattice = tau_route_value(TauField.constant(cube(2 * R, 2)), f.with_R(R))
    assert lattice == pytest.approx(box_energy(1.0, f, 2.0), rel=0.01)


def test_brascamp_lieb_unit_is_equality(box9):
    res = brascamp_lieb_check([TauField.constant(box9)] * 2, dipole(box9))
    assert res["violations"] == 0
    assert np.allclose(res["lhs"], res["rhs"], rtol=1e-10)


def test_brascamp_lieb_random_fields(box9):
    gen = np.random.default_rng(3)
    taus = [random_tau(box9, gen, 1.5) for _ in range(20)]
    res = brascamp_lieb_check(taus, dipole(box9), k=2)
    assert res["violations"] == 0 and res["max_margin"] <= 0
    assert res["moment_consistent"]
    with pytest.raises(ValueError):
        brascamp_lieb_check(taus, np.eye(1, box9.n_vertices, 40)[0])


def test_dipole():
    box = cube(2, 2)
    v = dipole(box)
    assert v.sum() == 0 and v[box.index_of([[0, 0]])[0]] == 1 and v[box.index_of([[1, 0]])[0]] == -1


def test_wick_ratios_gaussian_and_not():
    gen = np.random.default_rng(8)
    f = bump_field(2)
    g = moment_structure(None, f, values=gen.normal(size=20_000))
    for k in (2, 3):
        e = g[f"wick_{2 * k}"]
        assert abs(e["value"] - 1.0) < 4 * e["sigma"]
    lap = moment_structure(None, f, values=gen.laplace(size=20_000))
    assert lap["wick_4"]["value"] > 1.5  # Laplace kurtosis ratio is 2
    with pytest.raises(StatisticsError):
        moment_structure(None, f, values=np.ones(50))


def test_energy_convergence_unit():
    f = bump_field(2)
    taus = {R: [TauField.constant(cube(8 * R, 2))] for R in (2, 4)}
    out = energy_convergence(taus, f, 1.0)
    assert out["continuum"] == pytest.approx(box_energy(1.0, f, 8.0))
    gaps = [out["profile"][R]["abs_gap"] for R in (2, 4)]
    assert gaps[1] < gaps[0]
