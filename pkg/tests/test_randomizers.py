from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from dualstop.models import simulate
from dualstop.randomizers import (NONE, RandomizerSpec, check_asl, draw_xi, eta_scale, make_eta,
                                  pseudo_martingale, xi_grid)
from conftest import PA1


def test_eta_zero_at_tau_star(stylized_paths):
    paths, s = stylized_paths
    eta = make_eta(RandomizerSpec("optimal", 1.0), paths, s, seed=3)
    rows = np.arange(paths.n_paths)
    np.testing.assert_array_equal(eta[rows, s.tau_star], 0.0)


def test_none_leaves_martingale(stylized_paths):
    paths, s = stylized_paths
    eta = make_eta(NONE, paths, s, seed=3)
    m = s.m_star
    np.testing.assert_array_equal(pseudo_martingale(m, eta), m)


def test_theta_zero_matches_none_bitwise(stylized_paths):
    paths, s = stylized_paths
    a = make_eta(RandomizerSpec("optimal", 0.0), paths, s, 4)
    b = make_eta(NONE, paths, s, 4)
    np.testing.assert_array_equal(a, b)


def test_stylized_multiplier_below_one(stylized_paths):
    paths, s = stylized_paths
    k = int(np.argmin(np.abs(paths.rewards[:, 1] - 0.5)))
    u = paths.rewards[k, 1]
    scale = eta_scale(RandomizerSpec("optimal", 1.0), paths.n_paths, 2, s)
    assert scale[k, 1] == pytest.approx(1.0 - u, abs=1e-15)
    eta = make_eta(RandomizerSpec("optimal", 1.0), paths, s, 9)
    xi = draw_xi("uniform", 9, paths.n_paths, 2)
    assert eta[k, 1] == pytest.approx((1.0 - u) * xi[k, 1], abs=1e-15)


def test_asl_optimal_always(pa1_paths):
    paths, s = pa1_paths
    for law in ("uniform", "texp"):
        for theta in (0.3, 1.0):
            eta = make_eta(RandomizerSpec("optimal", theta, xi=law), paths, s, 2)
            assert check_asl(eta, s).all()


def test_asl_violated_by_construction(pa1_paths):
    paths, s = pa1_paths
    eta = s.randomizer_scale().copy()
    eta[:, 1] += 0.1
    assert not check_asl(eta, s).any()


def test_naive_violates_on_pa1():
    paths = simulate(PA1, 20_000, 6)
    from dualstop.snell import snell_for
    s = snell_for(paths)
    eta = make_eta(RandomizerSpec("naive", theta_naive=(1.6, 0, 0)), paths, s, 6)
    bad = ~check_asl(eta, s)
    assert 0 < bad.mean() < 1
    # only date 0 is randomized, and Y*_0 - Z_0 + A*_0 = Y*_0 there
    assert bad.mean() == pytest.approx(0.5 * (1 - s.y0 / 1.6), abs=0.02)


def test_xi_laws_moments():
    u = draw_xi("uniform", 1, 200_000, 2).ravel()
    t = draw_xi("texp", 1, 200_000, 2).ravel()
    assert u.min() > -1 and u.max() < 1 and abs(u.mean()) < 4 / math.sqrt(3 * u.size)
    assert t.max() < 1 and abs(t.mean()) < 4 / math.sqrt(t.size)
    assert t.var() == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("law", ["uniform", "texp"])
def test_xi_grid_integrates_polynomials(law):
    x, w = xi_grid(law)
    assert w.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.dot(w, x) == pytest.approx(0.0, abs=1e-13)
    assert np.all(w > 0) and np.all(x <= 1.0)
    if law == "uniform":
        exact = [integrate.quad(lambda v, k=k: v ** k / 2, -1, 1)[0] for k in range(8)]
    else:
        exact = [integrate.quad(lambda e, k=k: (1 - e) ** k * math.exp(-e), 0, math.inf)[0] for k in range(8)]
    for k in range(8):
        assert np.dot(w, x ** k) == pytest.approx(exact[k], rel=1e-10, abs=1e-12)


def test_texp_grid_has_node_at_one():
    x, w = xi_grid("texp")
    assert x[0] == 1.0 and w[0] > 0


def test_spec_validation():
    with pytest.raises(ValueError):
        RandomizerSpec("weird")
    with pytest.raises(ValueError):
        RandomizerSpec("optimal", -1.0)
    with pytest.raises(ValueError):
        RandomizerSpec("optimal", xi="normal")
    assert RandomizerSpec("naive", theta_naive=(0, 0)).is_trivial
    assert RandomizerSpec.from_config({"kind": "naive", "theta_naive": [1, 2]}).theta_naive == (1.0, 2.0)


def test_labels():
    assert NONE.label() == "theta=0"
    assert RandomizerSpec("optimal", 1.0).label() == "theta=1"
    assert RandomizerSpec("naive", theta_naive=(1.6, 0, 0)).label() == "naive(1.6,0,0)"


def test_optimal_needs_snell(stylized_paths):
    paths, _ = stylized_paths
    with pytest.raises(ValueError):
        make_eta(RandomizerSpec("optimal"), paths, None, 0)
    with pytest.raises(ValueError):
        eta_scale(RandomizerSpec("naive", theta_naive=(1, 1, 1, 1)), 3, 2)
