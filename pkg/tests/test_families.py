from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import PA1
from dualstop.families import (BasisMatrix, FamilySpec, HermiteSpec, build_basis, eval_family, hermite,
                               martingale_defect, write_basis_csv)
from dualstop.models import simulate, stylized_tree
from dualstop.snell import snell_for, tree_snell


def test_hermite_values():
    assert hermite(2, 2.0) == 3.0
    assert hermite(3, 1.0) == -2.0
    np.testing.assert_array_equal(hermite(0, np.array([-5.0, 0.0, 7.0])), 1.0)
    with pytest.raises(ValueError):
        hermite(-1, 0.0)


def test_hermite_orthogonality():
    x, w = np.polynomial.hermite_e.hermegauss(30)
    w = w / w.sum()
    gram = np.array([[np.dot(w, hermite(i, x) * hermite(j, x)) for j in range(6)] for i in range(6)])
    np.testing.assert_allclose(gram, np.diag([math.factorial(k) for k in range(6)]), atol=1e-9)


def test_msty_unit_alpha_is_doob(pa1_paths):
    paths, s = pa1_paths
    basis = build_basis(FamilySpec("msty"), paths, s)
    np.testing.assert_allclose(eval_family(basis, [1, 1, 1, 1]), s.m_star, atol=1e-12)
    np.testing.assert_array_equal(eval_family(basis, [0, 0, 0, 0]), 0.0)
    m = eval_family(basis, [1, 1, 0, 0])
    np.testing.assert_allclose(m[:, 2], m[:, 1], atol=0)
    np.testing.assert_allclose(m[:, 1], s.m_star[:, 1], atol=1e-12)


@pytest.mark.parametrize("K, L, dim", [(3, 3, 15), (1, 1, 3)])
def test_hermite_dimension(pa1_paths, K, L, dim):
    paths, _ = pa1_paths
    basis = build_basis(FamilySpec("hermite", HermiteSpec(K, L)), paths)
    assert basis.dim == dim == HermiteSpec(K, L).dim
    if K == 1:
        w1, w12 = paths.drivers["W1"], paths.drivers["W12"]
        np.testing.assert_allclose(basis.values[:, 1, 0], w1)
        np.testing.assert_allclose(basis.values[:, 2, 1], w12)
        np.testing.assert_allclose(basis.values[:, 2, 2], w1 * w12)


def test_hermite_column_conditional_mean_zero():
    p = simulate(PA1, 200_000, 8)
    basis = build_basis(FamilySpec("hermite", HermiteSpec(3, 3)), p)
    col = basis.names.index("a2_2_1")
    inc = basis.values[:, 2, col] - basis.values[:, 1, col]
    # given W_1 the increment is He_2(W_1) W_12; bucket on W_1 and check each bucket mean
    w1 = p.drivers["W1"]
    edges = np.quantile(w1, np.linspace(0, 1, 11))
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (w1 >= lo) & (w1 < hi)
        se = inc[sel].std() / math.sqrt(sel.sum())
        assert abs(inc[sel].mean()) < 4 * se


def test_doob_scalar_recovers_doob(stylized_paths):
    paths, s = stylized_paths
    basis = build_basis(FamilySpec("doob_scalar"), paths, s)
    assert basis.dim == 1
    np.testing.assert_array_equal(eval_family(basis, [1.0]), s.m_star)
    np.testing.assert_array_equal(eval_family(basis, [0.0]), 0.0)


def test_linearity(pa1_paths):
    paths, s = pa1_paths
    basis = build_basis(FamilySpec("hermite"), paths)
    g = np.random.default_rng(0)
    a, b = g.normal(size=15), g.normal(size=15)
    np.testing.assert_allclose(eval_family(basis, a + b), eval_family(basis, a) + eval_family(basis, b), atol=1e-12)


def test_custom_family_reproduces_msty(pa1_paths):
    paths, s = pa1_paths
    cols = [
        {"name": "a11", "increments": {"1": "Y1 - Y0 - W1"}},
        {"name": "a12", "increments": {"1": "W1"}},
        {"name": "a21", "increments": {"2": "Z2 - C1 - W12"}},
        {"name": "a22", "increments": ["0", "W12"]},
    ]
    custom = build_basis(FamilySpec("custom", columns=tuple(json.dumps(c) for c in cols)), paths, s)
    msty = build_basis(FamilySpec("msty"), paths, s)
    np.testing.assert_allclose(custom.values, msty.values, atol=1e-13)


def test_custom_family_from_file(tmp_path, pa1_paths):
    paths, s = pa1_paths
    (tmp_path / "f.json").write_text(json.dumps({"columns": [{"increments": {"1": "W1"}}]}))
    fam = FamilySpec.from_config({"type": "custom", "file": "f.json"}, base_dir=tmp_path)
    basis = build_basis(fam, paths, s)
    np.testing.assert_array_equal(basis.values[:, 2, 0], paths.drivers["W1"])


def test_custom_family_bad_date(pa1_paths):
    paths, s = pa1_paths
    fam = FamilySpec("custom", columns=(json.dumps({"increments": {"3": "W1"}}),))
    with pytest.raises(ValueError, match="outside"):
        build_basis(fam, paths, s)


def test_tree_martingale_defect():
    b, s = tree_snell(stylized_tree((0.2, 1.1, 1.9), (0.3, 0.3, 0.4)))
    basis = build_basis(FamilySpec("doob_scalar"), b, s)
    assert martingale_defect(basis, b) < 1e-15


def test_basis_validation_and_errors(stylized_paths):
    with pytest.raises(ValueError, match="vanish"):
        BasisMatrix(np.ones((2, 3, 1)), FamilySpec("doob_scalar"), ("x",))
    with pytest.raises(ValueError, match="family kind"):
        FamilySpec("nope")
    paths, s = stylized_paths
    with pytest.raises(ValueError, match="length"):
        eval_family(build_basis(FamilySpec("doob_scalar"), paths, s), [1.0, 2.0])
    with pytest.raises(TypeError):
        build_basis(FamilySpec("msty"), paths, s)
    with pytest.raises(ValueError):
        HermiteSpec(0, 3)


def test_basis_csv(tmp_path, stylized_paths):
    paths, s = stylized_paths
    write_basis_csv(tmp_path / "b.csv", build_basis(FamilySpec("doob_scalar"), paths, s))
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "path,M*@0,M*@1,M*@2" and len(lines) == paths.n_paths + 1
