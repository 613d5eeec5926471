"""Linearly parameterized martingale families ``M_j(alpha) = sum_k alpha_k B_{j,k}``."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .expr import Expression
from .models import BermudanCallModel, PathBundle
from .snell import SnellData, black_continuation

FAMILY_KINDS = ("doob_scalar", "msty", "hermite", "custom")


def hermite(k: int, x):
    """Probabilists' Hermite polynomial ``He_k(x)`` by three-term recurrence."""
    if k < 0:
        raise ValueError("degree must be >= 0")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x
    if k == 0:
        return prev
    for n in range(1, k):
        prev, cur = cur, x * cur - n * prev
    return cur


@dataclass(frozen=True)
class HermiteSpec:
    K: int = 3
    L: int = 3

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError("Hermite family needs K >= 1 and L >= 1")

    @property
    def dim(self) -> int:
        return self.K + (self.K + 1) * self.L


@dataclass(frozen=True)
class FamilySpec:
    """What to build; ``columns`` holds per-date increment expressions for custom families."""

    kind: str
    hermite: HermiteSpec | None = None
    columns: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"family kind must be one of {FAMILY_KINDS}, got {self.kind!r}")
        if self.kind == "hermite" and self.hermite is None:
            object.__setattr__(self, "hermite", HermiteSpec())

    @classmethod
    def from_config(cls, cfg: Mapping, base_dir=None) -> "FamilySpec":
        kind = cfg.get("type", cfg.get("kind"))
        if kind == "hermite":
            return cls("hermite", HermiteSpec(int(cfg.get("K", 3)), int(cfg.get("L", 3))))
        if kind == "custom":
            cols = cfg.get("columns")
            if cols is None:
                from pathlib import Path
                p = Path(cfg["file"])
                if base_dir is not None and not p.is_absolute():
                    p = Path(base_dir) / p
                cols = json.loads(p.read_text())["columns"]
            return cls("custom", columns=tuple(json.dumps(c, sort_keys=True) for c in cols))
        return cls(kind)


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """``values[n, j, k] = B_{j,k}`` on path ``n``; ``B_{0,k} = 0``."""

    values: np.ndarray
    family: FamilySpec
    names: tuple

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("basis values must have shape (n, J+1, K)")
        if np.any(v[:, 0, :] != 0):
            raise ValueError("basis columns must vanish at date 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]


def _bs_drivers(paths: PathBundle):
    if not isinstance(paths.model, BermudanCallModel):
        raise TypeError("this family is defined on Bermudan call bundles")
    return paths.drivers["W1"], paths.drivers["W12"]


def doob_scalar_basis(snell: SnellData) -> BasisMatrix:
    """One column equal to the Doob martingale, so ``M(alpha) = alpha * M*``."""
    return BasisMatrix(np.asarray(snell.m_star)[:, :, None], FamilySpec("doob_scalar"), ("M*",))


def build_stylized_basis(paths: PathBundle, snell: SnellData) -> BasisMatrix:
    """Four columns whose unit combination reproduces the Doob martingale."""
    if snell is None:
        raise ValueError("the stylized family needs exact Snell data")
    w1, w12 = _bs_drivers(paths)
    c1 = snell.cont[:, 1]
    n = paths.n_paths
    v = np.zeros((n, 3, 4))
    v[:, 1, 0] = v[:, 2, 0] = snell.y_star[:, 1] - snell.y0 - w1
    v[:, 1, 1] = v[:, 2, 1] = w1
    v[:, 2, 2] = paths.rewards[:, 2] - c1 - w12
    v[:, 2, 3] = w12
    return BasisMatrix(v, FamilySpec("msty"), ("a11", "a12", "a21", "a22"))


def build_hermite_basis(paths: PathBundle, spec: HermiteSpec) -> BasisMatrix:
    """``He_k(W_1)`` columns at date 1 and ``He_k(W_1) He_l(W_{1,2})`` increments at date 2."""
    w1, w12 = _bs_drivers(paths)
    K, L = spec.K, spec.L
    h1 = [hermite(k, w1) for k in range(K + 1)]
    h2 = [hermite(l, w12) for l in range(L + 1)]
    n = paths.n_paths
    v = np.zeros((n, 3, spec.dim))
    names = []
    for k in range(1, K + 1):
        v[:, 1, k - 1] = v[:, 2, k - 1] = h1[k]
        names.append(f"a1_{k}")
    c = K
    for k in range(K + 1):
        for l in range(1, L + 1):
            v[:, 2, c] = h1[k] * h2[l]
            names.append(f"a2_{k}_{l}")
            c += 1
    return BasisMatrix(v, FamilySpec("hermite", spec), tuple(names))


def expression_env(paths: PathBundle, snell: SnellData | None = None) -> dict:
    env = {k: v for k, v in paths.drivers.items() if np.ndim(v) == 1}
    R = paths.horizon + 1
    for j in range(R):
        env[f"Z{j}"] = paths.rewards[:, j]
    if snell is not None:
        for j in range(R):
            env[f"Y{j}"] = snell.y_star[:, j]
            env[f"M{j}"] = snell.m_star[:, j]
            env[f"A{j}"] = snell.a_star[:, j]
            env[f"C{j}"] = snell.cont[:, j]
    if isinstance(paths.model, BermudanCallModel) and "W1" in env:
        s = paths.model.stock(env["W1"], env["W12"])
        env.update(S0=s[:, 0], S1=s[:, 1], S2=s[:, 2])
        if paths.model.sigma2 > 0:
            env.setdefault("C1", black_continuation(paths.model, env["W1"]))
    return env


def build_custom_basis(paths: PathBundle, family: FamilySpec, snell: SnellData | None = None) -> BasisMatrix:
    """Columns given by per-date increment expressions.

    Each column is ``{"name": ..., "increments": {"1": expr, "2": expr}}`` (a list of
    ``J`` expressions for dates ``1..J`` is accepted too); omitted dates add nothing.
    """
    env = expression_env(paths, snell)
    n, R = paths.n_paths, paths.horizon + 1
    cols = [json.loads(c) if isinstance(c, str) else c for c in family.columns]
    if not cols:
        raise ValueError("custom family has no columns")
    v = np.zeros((n, R, len(cols)))
    names = []
    for k, col in enumerate(cols):
        inc = col["increments"]
        if isinstance(inc, list):
            inc = {str(i + 1): e for i, e in enumerate(inc)}
        for date, src in inc.items():
            j = int(date)
            if not 1 <= j < R:
                raise ValueError(f"increment date {j} outside 1..{R - 1}")
            v[:, j:, k] += np.broadcast_to(Expression(str(src))(env), (n,))[:, None]
        names.append(col.get("name", f"c{k}"))
    return BasisMatrix(v, family, tuple(names))


def build_basis(family: FamilySpec, paths: PathBundle, snell: SnellData | None = None) -> BasisMatrix:
    if family.kind == "doob_scalar":
        if snell is None:
            raise ValueError("the scalar Doob family needs exact Snell data")
        return doob_scalar_basis(snell)
    if family.kind == "msty":
        return build_stylized_basis(paths, snell)
    if family.kind == "hermite":
        return build_hermite_basis(paths, family.hermite)
    return build_custom_basis(paths, family, snell)


def eval_family(basis: BasisMatrix, alpha) -> np.ndarray:
    """Martingale values ``M_0..M_J`` per path, shape ``(n, J+1)``."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != basis.dim:
        raise ValueError(f"alpha has length {alpha.size}, family dimension is {basis.dim}")
    return basis.values @ alpha


def martingale_defect(basis: BasisMatrix, paths: PathBundle) -> float:
    """Largest exact conditional one-step increment mean over columns (tree bundles)."""
    worst = 0.0
    for j in range(paths.horizon):
        inc = basis.values[:, j + 1, :] - basis.values[:, j, :]
        for k in range(basis.dim):
            worst = max(worst, float(np.max(np.abs(paths.conditional_mean(inc[:, k], j)))))
    return worst


def write_basis_csv(path, basis: BasisMatrix) -> None:
    R = basis.values.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path"] + [f"{name}@{j}" for name in basis.names for j in range(R)])
        for n in range(basis.n_paths):
            w.writerow([n] + [format(float(basis.values[n, j, k]), ".17g")
                              for k in range(basis.dim) for j in range(R)])
