import numpy as np
import pytest

from irmc.design import (DesignScheme, build_design, faustmann_lattice,
                         federico_lattice, pre_average)
from irmc.errors import DomainDegenerate, TooFewSites


def test_federico_lattice_counts():
    sites = federico_lattice()
    assert len(sites) == 600
    assert sites.min() == 1.0 and sites.max() == 90.0
    d = build_design(DesignScheme.EXPLICIT_LATTICE, [[1.0, 90.0]],
                     n_unique=600, n_rep=40, sites=sites[:, None])
    rep = d.replicated()
    assert rep.shape == (24_000, 1)
    # replicates are site-major blocks
    assert np.allclose(rep[:40], rep[0])
    assert rep[40, 0] != rep[0, 0]


def test_faustmann_lattice_counts():
    sites = faustmann_lattice()
    assert len(sites) == 100
    assert sites.min() == -0.25 and sites.max() == 2.5
    assert np.allclose(np.diff(sites), sites[1] - sites[0])


def test_iid_in_bounds_distinct_deterministic():
    dom = [[0.0, 1.0], [2.0, 5.0]]
    d1 = build_design(DesignScheme.IID_UNIFORM, dom, 50, 3, seed=11)
    d2 = build_design(DesignScheme.IID_UNIFORM, dom, 50, 3, seed=11)
    assert np.array_equal(d1.unique_sites, d2.unique_sites)
    pts = d1.unique_sites
    assert ((pts >= [0.0, 2.0]) & (pts <= [1.0, 5.0])).all()
    assert len(np.unique(pts, axis=0)) == 50


def test_lhs_strata():
    n = 64
    d = build_design(DesignScheme.LATIN_HYPERCUBE, [[0.0, 1.0], [0.0, 1.0]],
                     n, 1, seed=5)
    for j in range(2):
        strata = np.floor(d.unique_sites[:, j] * n).astype(int)
        assert sorted(strata) == list(range(n))


def test_sobol_beats_iid_star_discrepancy():
    # brute-force star discrepancy at corners induced by the sample itself
    def star_discrepancy(pts):
        n = len(pts)
        qx = np.unique(np.concatenate([pts[:, 0], [1.0]]))
        qy = np.unique(np.concatenate([pts[:, 1], [1.0]]))
        worst = 0.0
        for a in qx:
            inx = pts[:, 0] < a
            for b in qy:
                frac = np.count_nonzero(inx & (pts[:, 1] < b)) / n
                worst = max(worst, abs(frac - a * b))
        return worst

    dom = [[0.0, 1.0], [0.0, 1.0]]
    sob, iid = [], []
    for seed in range(20):
        sob.append(star_discrepancy(
            build_design(DesignScheme.SOBOL, dom, 128, 1, seed=seed).unique_sites))
        iid.append(star_discrepancy(
            build_design(DesignScheme.IID_UNIFORM, dom, 128, 1, seed=seed).unique_sites))
    assert np.mean(sob) < np.mean(iid)


def test_explicit_sites_validated():
    with pytest.raises(TooFewSites):
        build_design(DesignScheme.IID_UNIFORM, [[0.0, 1.0]], 1, 1, seed=0)
    with pytest.raises(DomainDegenerate):
        build_design(DesignScheme.IID_UNIFORM, [[1.0, 1.0]], 10, 1, seed=0)


def test_pre_average_hand_cases():
    means, var = pre_average(np.array([[3.0, 3.0, 3.0], [1.0, 2.0, 3.0]]))
    assert np.allclose(means, [3.0, 2.0])
    assert np.allclose(var, [0.0, 1.0])
    r = np.array([[1.0], [4.0]])
    m1, v1 = pre_average(r)
    assert np.allclose(m1, [1.0, 4.0])
    assert np.allclose(v1, 0.0)


def test_pre_average_rmse_rate():
    # the site mean converges at the Monte Carlo rate 1/sqrt(n_rep)
    rng = np.random.default_rng(17)
    reps = [10, 40, 160, 640]
    rmse = []
    for n_rep in reps:
        draws = rng.standard_normal((400, n_rep))
        means, _ = pre_average(draws)
        rmse.append(np.sqrt(np.mean(means**2)))
    slope = np.polyfit(np.log(reps), np.log(rmse), 1)[0]
    assert abs(slope + 0.5) < 0.1
