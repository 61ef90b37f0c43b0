import math

import numpy as np
import pytest

from sos_lab import oracle
from sos_lab.field import TauField
from sos_lab.lattice import DomainError, cube, triadic_cube
from sos_lab.percolation import (central_edge, classify_good_cube, cluster_histogram, decompose_clusters,
                                 ensemble_inverse_moments, estimate_inverse_moments, extreme_tail_index, good_cube_fractions,
                                 large_scale_poincare_check, minimal_scale, scale_cubes,
                                 straight_path_indices, tail_statistics)
from sos_lab.stats import StatisticsError

from conftest import random_tau


def iid_samples(box, n, seed, scale=1.0):
    gen = np.random.default_rng(seed)
    return [random_tau(box, gen, scale) for _ in range(n)]


def test_clusters_match_flood_fill():
    box = cube(16, 2)
    gen = np.random.default_rng(5)
    for scale in (1.5, 2.0):
        tau = random_tau(box, gen, scale)
        dec = decompose_clusters(tau, 3.0)
        ref = oracle.flood_fill_clusters(box, tau, 3.0)
        assert len(dec) == len(ref) > 0
        verts = box.vertices()
        for c, r in zip(dec.clusters, ref):
            got = sorted(tuple(int(v) for v in verts[i]) for i in c.vertices)
            assert got == r["vertices"]
            assert len(c.edges) == r["n_edges"]
            assert c.diameter == r["diameter"]
            assert c.representative == r["vertices"][0]


def test_cluster_boundary_is_outer_neighborhood():
    box = cube(3, 2)
    tau = np.zeros(len(box.edges()))
    tau[box.edges().base.tolist().index([0, 0])] = 9.0  # an axis-0 edge from the origin
    dec = decompose_clusters(TauField(box, tau), 5.0)
    (c,) = dec.clusters
    assert c.diameter == 1 and len(c.vertices) == 2
    assert len(c.boundary) == 6
    lab = dec.vertex_labels()
    assert (lab == 0).sum() == 2 and (lab == -1).sum() == box.n_vertices - 2


def test_no_bad_edges_and_threshold_validation(box9):
    tau = TauField.constant(box9, 1.0)
    assert len(decompose_clusters(tau, 5.0)) == 0
    with pytest.raises(ValueError):
        decompose_clusters(tau, 0.0)


def test_good_cube_conditions():
    box = cube(13, 2)
    c = triadic_cube(1, 2)
    assert classify_good_cube(TauField.constant(box), c).good
    rep = classify_good_cube(TauField.constant(box, -2.0), c)
    assert not rep.good and rep.inverse_moment_ratios[1] == pytest.approx(math.exp(-2))
    assert "inverse-moment p=1" in rep.failing
    tau = np.zeros(len(box.edges()))
    e = box.edges()
    tau[(e.axis == 0) & (e.base[:, 1] == 0) & (np.abs(e.base[:, 0]) <= 3)] = 8.0
    rep = classify_good_cube(TauField(box, tau), c)
    assert rep.failing == ["diameter-moment"] and rep.diam_moment == 7 ** 4
    with pytest.raises(DomainError):
        classify_good_cube(TauField.constant(box), triadic_cube(2, 2))


def test_scale_cubes_tile():
    box = cube(13, 2)
    cubes = scale_cubes(box, 1, 3)
    assert len(cubes) == 81
    assert sum(c.n_vertices for c in cubes) == 27 ** 2
    fr = good_cube_fractions(TauField.constant(box), [1, 2])
    assert fr == {1: 1.0, 2: 1.0}


def test_minimal_scale():
    out = minimal_scale([{1: 1.0, 2: 1.0}, {1: 0.9, 2: 1.0}, {1: 1.0, 2: 0.5}])
    assert out.tolist() == [1, 2, math.inf]


def test_straight_paths_are_consecutive():
    box = cube(8, 2)
    P = straight_path_indices(box, 3)
    e = box.edges()
    assert P.shape == (81, 3)
    b = e.base[P]
    assert np.all(e.axis[P] == 0)
    assert np.all(np.diff(b[:, :, 0], axis=1) == 1) and np.all(np.diff(b[:, :, 1], axis=1) == 0)
    with pytest.raises(DomainError):
        straight_path_indices(box, 12)


def test_tail_statistics_iid_rates():
    # iid N(0,1) edges: a path of k edges all above t has probability p^k
    box = cube(8, 2)
    samples = iid_samples(box, 400, 1)
    from scipy.stats import norm
    rep = tail_statistics(samples, thresholds=(0.5, 1.0), sizes=range(1, 4))
    for r in rep.rows:
        p = norm.sf(r["threshold"]) ** r["size"]
        assert abs(r["estimate"] - p) < 4 * r["sigma"] + 1e-12
    a = rep.alpha[("up", 1.0)]
    assert abs(a["alpha"] + math.log(norm.sf(1.0))) < 4 * a["se"] + 0.05
    assert rep.single_edge_fit["slope"] < 0
    header, rows = rep.table()
    assert len(rows) == 2 * 2 * 3 and header[0] == "threshold"
    with pytest.raises(StatisticsError):
        tail_statistics(samples[:10])


def test_tail_statistics_empty_counts_use_rule_of_three():
    box = cube(6, 2)
    rep = tail_statistics(iid_samples(box, 100, 2, 0.1), thresholds=(5.0,), sizes=[1])
    assert all(r["count"] == 0 and r["upper"] == pytest.approx(0.03) for r in rep.rows)


def test_extreme_tail_index_pareto():
    gen = np.random.default_rng(3)
    x = gen.pareto(2.0, 200_000) + 1.0
    res = extreme_tail_index(np.log(x))
    assert abs(res["index"] - 2.0) < 4 * res["se"]
    assert math.isnan(extreme_tail_index(np.zeros(50))["index"])


def test_inverse_moments_lognormal():
    box = cube(6, 2)
    samples = iid_samples(box, 2000, 4, 0.5)
    out = estimate_inverse_moments(samples, ks=(1, 2))
    for k in (1, 2):
        ref = math.exp(0.5 * (0.5 * k) ** 2)
        assert abs(out[k]["estimate"] - ref) < 4 * out[k]["sigma"]
        assert not out[k]["divergence_suspected"]
    assert box.edges()[central_edge(box)].base == (0, 0)


def test_ensemble_moments_and_good_cubes():
    box = cube(12, 2)
    ref = ensemble_inverse_moments([TauField.constant(box, -2.0)] * 3)
    assert ref == pytest.approx({1: math.exp(2.0), 2: math.exp(4.0), 4: math.exp(8.0)})
    # a uniformly small a is bad against unit references but typical against its own ensemble
    c = scale_cubes(box, 1, 1)[0]
    assert not classify_good_cube(TauField.constant(box, -2.0), c).good
    assert classify_good_cube(TauField.constant(box, -2.0), c, reference_inverse_moments=ref).good
    lognormal = ensemble_inverse_moments(iid_samples(box, 400, 5, 0.5), ps=(1,))
    assert lognormal[1] == pytest.approx(math.exp(0.125), rel=0.02)


def test_inverse_moments_flags_heavy_tail():
    # tau = -log(Pareto(1/2)) makes a^{-1} have infinite mean
    box = cube(6, 2)
    gen = np.random.default_rng(6)
    m = len(box.edges())
    samples = [TauField(box, -np.log(gen.pareto(0.5, m) + 1.0)) for _ in range(2000)]
    assert estimate_inverse_moments(samples, ks=(1,))[1]["divergence_suspected"]


def test_large_scale_poincare():
    box = cube(13, 2)
    c = triadic_cube(1, 2)
    tau = TauField.constant(box)
    assert large_scale_poincare_check(tau, np.ones(c.n_vertices), c) == 0.0
    u = c.vertices()[:, 0].astype(float)
    # mean square of x over [-3,3]^2 is 4; 42 edges of which 42 along x carry gradient 1; diam 12
    assert large_scale_poincare_check(tau, u, c) == pytest.approx(4.0 / (144 * 42 / 49))


def test_cluster_histogram():
    box = cube(10, 2)
    decs = [decompose_clusters(t, 2.0) for t in iid_samples(box, 5, 7)]
    hist = cluster_histogram(decs)
    assert sum(hist.values()) == sum(len(d) for d in decs)
    assert sum(k * v for k, v in hist.items()) == sum(int(d.bad.sum()) for d in decs)
