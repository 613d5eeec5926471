"""Exact Snell envelopes, Doob decompositions and optimal stopping families.

Backward induction on :class:`~dualstop.models.TreeModel`, closed forms for the
stylized example, and a Black-type continuation value plus adaptive quadrature
for the Bermudan call.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr

from .models import BermudanCallModel, PathBundle, StylizedModel, TreeModel, tree_bundle

EXERCISE_TOL = 1e-12
QUAD_DOMAIN = (-10.0, 10.0)
QUAD_TOL = 1e-7


class QuadratureError(RuntimeError):
    def __init__(self, message: str, error: float):
        super().__init__(f"{message} (achieved error estimate {error:.3g})")
        self.error = error


def _ro(a) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SegmentIndex:
    """Successive optimal exercise dates per path.

    ``exercise[n, i]`` marks the dates ``tau^l``; ``start[n, i]`` is
    ``tau^(l_i - 1)`` (``-1`` stands for ``0^-``), ``end[n, i]`` is ``tau^(l_i)``
    and ``label[n, i]`` is ``l_i``.
    """

    exercise: np.ndarray
    label: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def dates(self, path: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.exercise[path])]


@dataclass(frozen=True, eq=False)
class SnellData:
    """Path-indexed Snell data, every array of shape ``(n, J+1)``.

    ``cont[:, j]`` is ``E_j[Y*_{j+1}]`` with ``Y*_{J+1} := 0``.
    """

    y0: float
    rewards: np.ndarray
    y_star: np.ndarray
    m_star: np.ndarray
    a_star: np.ndarray
    cont: np.ndarray
    tau_star: np.ndarray
    tau_family: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.y_star.shape[0]

    @property
    def horizon(self) -> int:
        return self.y_star.shape[1] - 1

    def randomizer_scale(self) -> np.ndarray:
        """``Y*_j - Z_j + A*_j``, the multiplier of the optimal randomization."""
        return self.y_star - self.rewards + self.a_star


@dataclass(frozen=True, eq=False)
class TreeSnell:
    """Node-indexed Snell data: ``y[j][i]`` etc. for node position ``i`` at date ``j``."""

    tree: TreeModel
    y: tuple
    cont: tuple
    m: tuple
    a: tuple

    @property
    def y0(self) -> float:
        return float(self.y[0][0])


def stopping_family(snell: SnellData) -> SegmentIndex:
    """Optimal exercise dates ``tau^l`` and segment labels; ties count as exercise."""
    z, cont = snell.rewards, snell.cont
    n, R = z.shape
    J = R - 1
    ex = z >= cont - EXERCISE_TOL * (1.0 + np.abs(cont))
    ex[:, J] = True
    end = np.empty((n, R), dtype=np.int64)
    end[:, J] = J
    for i in range(J - 1, -1, -1):
        end[:, i] = np.where(ex[:, i], i, end[:, i + 1])
    start = np.empty((n, R), dtype=np.int64)
    start[:, 0] = -1
    for i in range(1, R):
        start[:, i] = np.where(ex[:, i - 1], i - 1, start[:, i - 1])
    label = np.ones((n, R), dtype=np.int64)
    label[:, 1:] += np.cumsum(ex[:, :-1], axis=1)
    return SegmentIndex(_ro(ex), _ro(label), _ro(start), _ro(end))


def snell_from_envelope(z, y, cont) -> SnellData:
    """Doob decomposition along paths from the envelope ``y`` and continuation ``cont``."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    cont = np.asarray(cont, dtype=float)
    m = np.zeros_like(y)
    a = np.zeros_like(y)
    m[:, 1:] = np.cumsum(y[:, 1:] - cont[:, :-1], axis=1)
    a[:, 1:] = np.cumsum(y[:, :-1] - cont[:, :-1], axis=1)
    partial = SnellData(float(y[0, 0]), _ro(z), _ro(y), _ro(m), _ro(a), _ro(cont), None, None)
    seg = stopping_family(partial)
    tau = np.argmax(seg.exercise, axis=1)
    return SnellData(partial.y0, partial.rewards, partial.y_star, partial.m_star, partial.a_star,
                     partial.cont, _ro(tau), seg.end)


def backward_induct(tree: TreeModel) -> TreeSnell:
    """Bellman recursion with exact conditional expectations on every node."""
    J = tree.horizon
    y = [None] * (J + 1)
    cont = [None] * (J + 1)
    y[J] = np.array(tree.rewards[J], dtype=float)
    cont[J] = np.zeros_like(y[J])
    for j in range(J - 1, -1, -1):
        c = np.bincount(tree.parents[j + 1], weights=tree.probs[j + 1] * y[j + 1],
                        minlength=len(tree.rewards[j]))
        cont[j] = c
        y[j] = np.maximum(tree.rewards[j], c)
    m = [np.zeros(1)]
    a = [np.zeros(1)]
    for j in range(1, J + 1):
        par = tree.parents[j]
        m.append(m[j - 1][par] + y[j] - cont[j - 1][par])
        a.append(a[j - 1][par] + y[j - 1][par] - cont[j - 1][par])
    return TreeSnell(tree, *(tuple(_ro(x) for x in arr) for arr in (y, cont, m, a)))


def tree_snell(tree: TreeModel, bundle: PathBundle | None = None) -> tuple[PathBundle, SnellData]:
    """Enumerated bundle of ``tree`` together with its path-indexed Snell data."""
    if bundle is None:
        bundle = tree_bundle(tree)
    ts = backward_induct(tree)
    nodes = bundle.drivers["node"]
    cols = range(tree.horizon + 1)
    y = np.column_stack([ts.y[j][nodes[:, j]] for j in cols])
    cont = np.column_stack([ts.cont[j][nodes[:, j]] for j in cols])
    return bundle, snell_from_envelope(bundle.rewards, y, cont)


def stylized_snell(paths: PathBundle) -> SnellData:
    """Closed-form Snell data of the stylized example: ``Y*_0 = 5/4``, ``Y*_1 = max(U, 1)``."""
    if not isinstance(paths.model, StylizedModel):
        raise TypeError("stylized_snell needs a bundle simulated from StylizedModel")
    u = paths.rewards[:, 1]
    n = paths.n_paths
    y = np.column_stack([np.full(n, 1.25), np.maximum(u, 1.0), np.ones(n)])
    cont = np.column_stack([np.full(n, 1.25), np.ones(n), np.zeros(n)])
    return snell_from_envelope(paths.rewards, y, cont)


def black_continuation(model: BermudanCallModel, w1):
    """Continuation value at date 1 as a function of ``W_1`` (Black-type formula)."""
    if not model.sigma2 > 0:
        raise ValueError("black_continuation needs sigma2 > 0")
    sig = model.sigma
    w1 = np.asarray(w1, dtype=float)
    s1 = model.s0 * np.exp(-0.5 * model.sigma2 + sig * w1)
    if model.kappa2 == 0:
        return s1
    d = w1 + math.log(model.s0 / model.kappa2) / sig
    return s1 * ndtr(d) - model.kappa2 * ndtr(d - sig)


def _exercise_kinks(model: BermudanCallModel) -> list[float]:
    lo, hi = QUAD_DOMAIN
    sig = model.sigma
    pts = []
    if model.kappa1 > 0:
        zk = math.log(model.kappa1 / model.s0) / sig + 0.5 * sig
        if lo < zk < hi:
            pts.append(zk)
    zc = exercise_boundary(model)
    if zc is not None and lo < zc < hi:
        pts.append(zc)
    return sorted(pts)


def exercise_boundary(model: BermudanCallModel) -> float | None:
    """The ``W_1`` level where ``Z_1`` crosses ``C_1`` from below, if it does in the domain."""
    lo, hi = QUAD_DOMAIN
    sig = model.sigma

    def gap(z):
        return max(model.s0 * math.exp(-0.5 * model.sigma2 + sig * z) - model.kappa1, 0.0) - float(
            black_continuation(model, z))

    a = lo
    if model.kappa1 > 0:
        a = max(lo, math.log(model.kappa1 / model.s0) / sig + 0.5 * sig)
    if gap(hi) <= 0:
        return None
    if gap(a) >= 0:
        return a
    return brentq(gap, a, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


@lru_cache(maxsize=64)
def bs_value(model: BermudanCallModel) -> tuple[float, float]:
    """``(Y*_0, error estimate)`` by adaptive Gauss-Kronrod on ``[-10, 10]``."""
    sig = model.sigma

    def integrand(z):
        z1 = max(model.s0 * math.exp(-0.5 * model.sigma2 + sig * z) - model.kappa1, 0.0)
        return max(z1, float(black_continuation(model, z))) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    lo, hi = QUAD_DOMAIN
    val, err = quad(integrand, lo, hi, points=_exercise_kinks(model) or None,
                    epsabs=1e-11, epsrel=1e-12, limit=400)
    if not err <= QUAD_TOL:
        raise QuadratureError("quadrature for Y*_0 did not converge", err)
    return val, err


def bs_value_and_snell(model: BermudanCallModel, paths: PathBundle) -> tuple[float, SnellData]:
    """Target value ``Y*_0`` and per-path Snell data for the Bermudan call."""
    if not isinstance(paths.model, BermudanCallModel):
        raise TypeError("bs_value_and_snell needs a bundle simulated from BermudanCallModel")
    y0, _ = bs_value(model)
    z = paths.rewards
    c1 = black_continuation(model, paths.drivers["W1"])
    n = paths.n_paths
    y = np.column_stack([np.full(n, y0), np.maximum(z[:, 1], c1), z[:, 2]])
    cont = np.column_stack([np.full(n, y0), c1, np.zeros(n)])
    return y0, snell_from_envelope(z, y, cont)


def snell_for(paths: PathBundle) -> SnellData:
    """Exact Snell data for any supported bundle."""
    model = paths.model
    if isinstance(model, StylizedModel):
        return stylized_snell(paths)
    if isinstance(model, BermudanCallModel):
        return bs_value_and_snell(model, paths)[1]
    if isinstance(model, TreeModel):
        return tree_snell(model, paths)[1]
    raise TypeError(f"no Snell oracle for {type(model).__name__}")


def write_snell_csv(path, paths: PathBundle, snell: SnellData) -> None:
    """One row per path: drivers, ``Z_j``, ``Y*_j``, ``M*_j``, ``A*_j``, ``tau*``."""
    R = snell.horizon + 1
    drivers = {k: v for k, v in paths.drivers.items() if np.ndim(v) == 1}
    header = list(drivers)
    for name in ("Z", "Y", "M", "A"):
        header += [f"{name}{j}" for j in range(R)]
    header.append("tau")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(snell.n_paths):
            row = [format(float(v[n]), ".17g") for v in drivers.values()]
            for arr in (snell.rewards, snell.y_star, snell.m_star, snell.a_star):
                row += [format(float(x), ".17g") for x in arr[n]]
            row.append(int(snell.tau_star[n]))
            w.writerow(row)
