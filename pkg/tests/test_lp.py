from __future__ import annotations

import numpy as np
import pytest

import oracles
from conftest import PA1
from dualstop.families import FamilySpec, build_basis
from dualstop.lp import LPProblem, build_lp, minimize, solve_lp
from dualstop.models import StylizedModel, simulate, stylized_tree
from dualstop.randomizers import NONE, RandomizerSpec
from dualstop.snell import snell_for, tree_snell


def random_problem(seed, N, R, K, weighted=False, integer=False):
    g = np.random.default_rng(seed)
    b = g.normal(size=(N, R, K))
    b[:, 0, :] = 0.0
    c = g.normal(size=(N, R))
    if integer:  # heavy ties and degeneracy
        b = np.round(b)
        c = np.round(c)
    w = g.dirichlet(np.ones(N)) if weighted else None
    return LPProblem(c, b, w)


def stylized_problem(n, spec, seed=2):
    paths = simulate(StylizedModel(), n, seed)
    s = snell_for(paths)
    basis = build_basis(FamilySpec("doob_scalar"), paths, s)
    return paths, s, basis, build_lp(paths, basis, spec, s, seed)


def assert_tight(prob, sol):
    np.testing.assert_allclose(sol.u, np.max(prob.c - prob.b @ sol.alpha_hat, axis=1), atol=1e-8)


def test_counting_small():
    _, _, _, prob = stylized_problem(2, NONE)
    assert prob.n_variables == 3 and prob.n_rows == 6


def test_theta_zero_equals_none_bitwise():
    _, _, _, a = stylized_problem(50, RandomizerSpec("optimal", 0.0))
    _, _, _, b = stylized_problem(50, NONE)
    np.testing.assert_array_equal(a.c, b.c)
    np.testing.assert_array_equal(a.b, b.b)


def test_counting_pa1():
    paths = simulate(PA1, 2000, 1)
    s = snell_for(paths)
    prob = build_lp(paths, build_basis(FamilySpec("msty"), paths, s), NONE, s, 1)
    assert prob.n_variables == 2004 and prob.n_rows == 6000


@pytest.mark.parametrize("seed, N, R, K", [(0, 30, 3, 1), (1, 40, 3, 2), (2, 60, 4, 3), (3, 100, 3, 5),
                                          (4, 25, 5, 4), (5, 200, 3, 4)])
def test_matches_highs(seed, N, R, K):
    prob = random_problem(seed, N, R, K)
    sol = solve_lp(prob)
    ref, _ = oracles.highs(prob)
    assert sol.ok
    assert sol.objective_value == pytest.approx(ref, abs=1e-9)
    assert prob.objective(sol.alpha_hat) == pytest.approx(sol.objective_value, abs=1e-10)
    assert_tight(prob, sol)


@pytest.mark.parametrize("seed", range(4))
def test_degenerate_integer_instances(seed):
    prob = random_problem(100 + seed, 40, 4, 3, integer=True)
    sol = solve_lp(prob)
    assert sol.ok
    assert sol.objective_value == pytest.approx(oracles.highs(prob)[0], abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_weighted_matches_highs(seed):
    prob = random_problem(200 + seed, 50, 3, 3, weighted=True)
    sol = solve_lp(prob)
    assert sol.objective_value == pytest.approx(oracles.highs(prob)[0], abs=1e-9)


def test_weighted_tree_lp(two_point):
    b, s = tree_snell(stylized_tree((0.0, 1.0, 2.0), (0.25, 0.5, 0.25)))
    basis = build_basis(FamilySpec("doob_scalar"), b, s)
    sol = solve_lp(build_lp(b, basis, NONE, s))
    assert sol.objective_value == pytest.approx(1.25, abs=1e-12)


def test_single_path_golden_section():
    g = np.random.default_rng(7)
    for _ in range(5):
        c = g.normal(size=(1, 6))
        b = np.sort(g.normal(size=6))[None, :, None]
        prob = LPProblem(c, b)
        sol = solve_lp(prob)
        a_ref = oracles.golden(lambda a: prob.objective([a]), -50, 50, tol=1e-11)
        assert sol.objective_value == pytest.approx(prob.objective([a_ref]), abs=1e-9)
        assert abs(sol.alpha_hat[0] - a_ref) < 1e-6 or abs(prob.objective([a_ref]) - sol.objective_value) < 1e-9


def test_stylized_unrandomized_flat():
    _, _, _, prob = stylized_problem(10_000, NONE, seed=0)
    sol = solve_lp(prob)
    vals = np.max(prob.c - prob.b @ sol.alpha_hat, axis=1)
    se = vals.std(ddof=1) / 100
    assert abs(sol.objective_value - 1.25) < 3 * se
    assert sol.objective_value == pytest.approx(oracles.highs(prob)[0], abs=1e-9)


@pytest.mark.xfail(reason="at N=1e4 the sampling error of the objective (~3e-4) exceeds its rise "
                          "0.1 away from alpha=1 (~1e-4); alpha_hat spreads with sd ~0.18 over seeds",
                   strict=False)
def test_stylized_randomized_recovers_doob_at_1e4():
    _, _, _, prob = stylized_problem(10_000, RandomizerSpec("optimal", 1.0), seed=0)
    assert abs(solve_lp(prob).alpha_hat[0] - 1.0) < 0.1


def test_stylized_randomized_alpha_hat_centres_on_doob():
    hats = []
    for seed in range(20):
        _, _, _, prob = stylized_problem(10_000, RandomizerSpec("optimal", 1.0), seed=seed)
        sol = solve_lp(prob)
        hats.append(sol.alpha_hat[0])
        if seed == 0:
            assert sol.objective_value == pytest.approx(oracles.highs(prob)[0], abs=1e-9)
    assert abs(np.mean(hats) - 1.0) < 0.1


def test_unbounded():
    prob = LPProblem(np.array([[0.0, 1.0]]), np.array([[[1.0], [1.0]]]))
    assert solve_lp(prob).status == "unbounded"


def test_zero_column_is_harmless():
    prob = random_problem(9, 30, 3, 2)
    b = np.concatenate([prob.b, np.zeros((30, 3, 1))], axis=2)
    sol = solve_lp(LPProblem(prob.c, b))
    assert sol.ok and sol.objective_value == pytest.approx(solve_lp(prob).objective_value, abs=1e-10)


def test_permutation_invariance():
    prob = random_problem(11, 60, 3, 3)
    perm = np.random.default_rng(0).permutation(60)
    a = solve_lp(prob).objective_value
    b = solve_lp(LPProblem(prob.c[perm], prob.b[perm])).objective_value
    assert a == pytest.approx(b, abs=1e-10)


def test_more_columns_never_hurt():
    prob = random_problem(12, 80, 3, 4)
    vals = [solve_lp(LPProblem(prob.c, prob.b[:, :, :k])).objective_value for k in range(1, 5)]
    assert all(x >= y - 1e-10 for x, y in zip(vals, vals[1:]))


def test_iteration_limit():
    prob = random_problem(13, 100, 3, 4)
    assert solve_lp(prob, max_iter=1).status == "iteration-limit"


def test_dump_load_roundtrip(tmp_path):
    for w in (False, True):
        prob = random_problem(14, 7, 3, 2, weighted=w)
        prob.dump(tmp_path / "lp.txt")
        back = LPProblem.load(tmp_path / "lp.txt")
        np.testing.assert_array_equal(back.c, prob.c)
        np.testing.assert_array_equal(back.b, prob.b)
        if w:
            np.testing.assert_array_equal(back.weights, prob.weights)
        else:
            assert back.weights is None
    text = (tmp_path / "lp.txt").read_text()
    assert "u0 >= " in text and "*a2)" in text


def test_validation():
    with pytest.raises(ValueError):
        LPProblem(np.zeros((0, 3)), np.zeros((0, 3, 1)))
    with pytest.raises(ValueError):
        LPProblem(np.zeros((2, 3)), np.zeros((2, 3, 0)))
    with pytest.raises(ValueError):
        LPProblem(np.zeros((2, 3)), np.zeros((2, 3, 1)), np.array([1.0, -1.0]))


def test_minimize_reports_in_and_out_of_sample():
    paths = simulate(PA1, 300, 4)
    s = snell_for(paths)
    basis = build_basis(FamilySpec("msty"), paths, s)
    sol, ins, test = minimize(paths, basis, RandomizerSpec("optimal", 1.0), s, 4, n_test=5000)
    assert sol.ok and ins.n == 300 and test.n == 5000
    assert ins.mean == pytest.approx(sol.objective_value, abs=1e-10)
    # test bundle is fresh, and any alpha gives an upper bound in expectation
    assert test.mean > s.y0 - 4 * test.se
