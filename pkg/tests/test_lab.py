from __future__ import annotations

import json

import numpy as np
import pytest

import oracles
from dualstop import lab
from dualstop.dual import _max_moments
from dualstop.lab import PerturbationS
from dualstop.models import TreeModel, stylized_tree
from dualstop.randomizers import xi_grid
from dualstop.snell import backward_induct

THREE = stylized_tree((0.0, 1.0, 2.0), (0.25, 0.5, 0.25))


def scaled_doob(tree, alpha):
    return tuple(alpha * m for m in backward_induct(tree).m)


def s_for_alpha(tree, alpha):
    """``S = M* - alpha M* = (1 - alpha) M*``."""
    return PerturbationS(tree, scaled_doob(tree, 1.0 - alpha), f"alpha={alpha}")


def weak_by_hand(tree, alpha):
    """Dual objective of ``alpha M*`` by leaf enumeration equals ``Y*_0``?"""
    mean, _ = oracles.tree_dual(tree, scaled_doob(tree, alpha))
    return abs(mean - backward_induct(tree).y0) <= 1e-12


@pytest.mark.parametrize("name, tree", lab.builtin_trees(0))
def test_doob_optimal_everywhere(name, tree):
    m = lab.doob_martingale(tree)
    for j in range(tree.horizon + 1):
        assert lab.is_weakly_optimal_at(tree, m, j)
        assert lab.is_surely_optimal_at(tree, m, j)


def test_two_point_alpha_two_weak_not_sure(two_point):
    m = scaled_doob(two_point, 2.0)
    assert lab.is_weakly_optimal_at(two_point, m, 0)
    assert not lab.is_surely_optimal_at(two_point, m, 0)


def test_two_point_alpha_five_matches_enumeration(two_point):
    # the two-point tree's flat region is [-4, 6], wider than the continuous [-4, 8/3]
    assert lab.is_weakly_optimal_at(two_point, scaled_doob(two_point, 5.0), 0) == weak_by_hand(two_point, 5.0)
    assert weak_by_hand(two_point, 5.0)
    assert not weak_by_hand(two_point, 6.5)


@pytest.mark.parametrize("alpha, expected", [(-4.5, False), (-4.0, True), (8 / 3, True), (3.0, False), (5.0, False)])
def test_three_point_flat_region(alpha, expected):
    assert lab.is_weakly_optimal_at(THREE, scaled_doob(THREE, alpha), 0) == expected
    assert weak_by_hand(THREE, alpha) == expected


def test_brute_force_rejects_non_martingale(two_point):
    bad = lab.violate_martingale(two_point, np.random.default_rng(0))
    with pytest.raises(ValueError, match="martingale"):
        lab.is_weakly_optimal_at(two_point, lab.martingale_from(two_point, bad), 0)


@pytest.mark.parametrize("name, tree", lab.builtin_trees(0))
def test_zero_perturbation_passes_everything(name, tree):
    z = PerturbationS.zero(tree)
    assert lab.check_thm_main(tree, z)
    assert lab.check_cor_eqco(tree, z)
    assert lab.check_thm_i0(tree, z) == (True, True)
    assert lab.check_cor_alms(tree, z)
    assert lab.check_thm_opran(tree, z) == pytest.approx(0.0, abs=1e-12)
    assert lab.randomized_moments(tree, z)[1] == pytest.approx(0.0, abs=1e-12)


def test_stylized_alpha_two_predicates(two_point):
    s = s_for_alpha(two_point, 2.0)
    assert lab.check_thm_i0(two_point, s) == (True, False)
    assert lab.check_thm_main(two_point, s) == lab.weakly_optimal(two_point, lab.martingale_from(two_point, s))
    assert lab.check_thm_opran(two_point, s) > 1e-6
    assert lab.randomized_moments(two_point, s)[1] > 1e-8


def test_violate_upper_bound_fails_weak():
    for name, tree in lab.builtin_trees(0):
        s = lab.violate_premium(tree, np.random.default_rng(1))
        if s is None:
            continue
        m = lab.martingale_from(tree, s)
        assert s.is_martingale()
        assert not lab.check_thm_main(tree, s)
        assert not lab.check_cor_eqco(tree, s)
        assert not lab.weakly_optimal(tree, m)


def test_inside_segment_increment_fails_sure():
    hits = 0
    for name, tree in lab.builtin_trees(0):
        s = lab.violate_inside(tree, np.random.default_rng(2))
        if s is None:
            continue
        hits += 1
        assert not lab.check_cor_alms(tree, s)
        assert not lab.surely_optimal(tree, lab.martingale_from(tree, s))
    assert hits >= 3


def test_post_exercise_increment_is_surely_optimal():
    g = np.random.default_rng(3)
    nonzero = 0
    for name, tree in lab.builtin_trees(0):
        for _ in range(5):
            s = lab.sure_perturbation(tree, g, 0.3)
            assert s.is_martingale()
            assert lab.check_cor_alms(tree, s)
            m = lab.martingale_from(tree, s)
            assert lab.surely_optimal(tree, m)
            assert lab.is_surely_optimal_at(tree, m, 0)
            nonzero += not s.is_zero()
    assert nonzero > 10


def test_convexity_of_weak_class():
    g = np.random.default_rng(4)
    for name, tree in lab.builtin_trees(0):
        a = lab.feasible_perturbation(tree, g, 0.5)
        b = lab.feasible_perturbation(tree, g, 1.0)
        assert lab.check_thm_main(tree, a) and lab.check_thm_main(tree, b)
        mid = (a + b).scaled(0.5)
        assert lab.check_thm_main(tree, mid)
        assert lab.weakly_optimal(tree, lab.martingale_from(tree, mid))


def test_prop2_on_weak_optimal_martingales():
    g = np.random.default_rng(5)
    for name, tree in lab.builtin_trees(0):
        for _ in range(4):
            s = lab.feasible_perturbation(tree, g, 0.5)
            assert lab.check_prop2(tree, lab.martingale_from(tree, s))


def test_opran_gap_positive_off_doob():
    g = np.random.default_rng(6)
    for name, tree in lab.builtin_trees(0):
        s = lab.feasible_perturbation(tree, g, 0.5, sparsity=0.0)
        if s.is_zero():
            continue
        assert lab.check_thm_opran(tree, s, "texp") > 1e-9
        assert lab.randomized_moments(tree, s, "texp")[1] > 0


def test_opran_requires_weak_optimality(two_point):
    with pytest.raises(ValueError):
        lab.check_thm_opran(two_point, s_for_alpha(two_point, 20.0))


def test_randomized_moments_vs_enumeration():
    tree = lab.random_tree(4, 2, 3)
    s = lab.feasible_perturbation(tree, np.random.default_rng(0), 0.5)
    ts = backward_induct(tree)
    m = lab.martingale_from(tree, s)
    scale = tuple(y - z + a for y, z, a in zip(ts.y, tree.rewards, ts.a))
    # a 7-point grid keeps the explicit product enumeration small
    grid = xi_grid("texp", 7)
    em, ev = oracles.tree_dual(tree, m, scale, grid)
    mean, var = _moments_with_grid(tree, s, grid)
    assert mean == pytest.approx(em, abs=1e-13) and var == pytest.approx(ev, abs=1e-12)


def _moments_with_grid(tree, s, grid):
    ctx = lab._context(tree)
    ts = ctx.ts
    a = ctx.path(tree.rewards) - ctx.path(lab.martingale_from(tree, s))
    scale = ctx.path(tuple(y - z + aa for y, z, aa in zip(ts.y, tree.rewards, ts.a)))
    e1, e2 = _max_moments(a, scale, *grid)
    p = ctx.leaf_probs
    mean = float(np.sum(p * e1))
    return mean, float(np.sum(p * e2)) - mean * mean


def test_perturbation_validation(two_point):
    with pytest.raises(ValueError):
        PerturbationS(two_point, (np.zeros(1), np.zeros(2)))
    with pytest.raises(ValueError):
        PerturbationS(two_point, (np.ones(1), np.zeros(2), np.zeros(2)))
    s = PerturbationS.from_increments(two_point, [np.array([0.1, -0.1]), np.zeros(2)])
    np.testing.assert_allclose(s.zeta(1), [0.1, -0.1])
    assert s.is_martingale() and not s.is_zero()
    assert s.describe()["values"][1] == [0.1, -0.1]


def test_single_branch_tree_sweep():
    t = TreeModel.from_dates([[{"id": "a", "reward": 0.3}],
                              [{"id": "b", "reward": 1.0, "parent": "a", "prob": 1.0}],
                              [{"id": "c", "reward": 0.5, "parent": "b", "prob": 1.0}]])
    rep = lab.verify_tree(t, seed=0, per_tree=12)
    assert rep.passed
    zero = rep.trials[0]
    assert zero.is_zero and zero.thm_main and zero.cor_alms


def test_corrupted_fixture_detected():
    # exercise at date 1 (Z_1 = 2 > C_1 = 1), then branching; the increment 1.5 exceeds the premium 1
    t = TreeModel.from_dates([[{"id": "r", "reward": 0.0}],
                              [{"id": "a", "reward": 2.0, "parent": "r", "prob": 1.0}],
                              [{"id": "u", "reward": 1.5, "parent": "a", "prob": 0.5},
                               {"id": "d", "reward": 0.5, "parent": "a", "prob": 0.5}]])
    bad = PerturbationS.from_increments(t, [np.zeros(1), np.array([1.5, -1.5])], "corrupt")
    res = lab.run_trial("fixture", t, bad, negative="weak")
    assert not res.thm_main and not res.cor_eqco and not res.bf_weak_all and res.negative_detected
    mean, _ = oracles.tree_dual(t, lab.martingale_from(t, bad))
    assert mean == pytest.approx(2.25, abs=1e-14)


def test_builtin_sweep_passes():
    rep = lab.sweep(seed=0, per_tree=120)
    s = rep.summary()
    assert rep.passed, [(t.tree, t.kind) for t in rep.failures]
    assert s["trials"] >= 100 and len(s["trees"]) >= 5
    assert 0 < s["weak_all_true"] < s["trials"]
    assert 0 < s["sure_all_true"] < s["weak_all_true"]
    assert s["negative_controls"] >= 10
    assert {4, 3, 2} <= {tree.horizon for _, tree in lab.builtin_trees(0)}


def test_sweep_json(tmp_path):
    rep = lab.sweep(seed=1, per_tree=6, trees=lab.builtin_trees(1)[:2])
    rep.write(tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["passed"] and len(data["trials_detail"]) == rep.n_trials
