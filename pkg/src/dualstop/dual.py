"""Dual objective: pathwise maxima of ``Z - M + eta`` and their statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .families import BasisMatrix, eval_family
from .models import PathBundle
from .randomizers import RandomizerSpec, eta_scale, make_eta, xi_grid
from .snell import SnellData


@dataclass(frozen=True, eq=False)
class DualEstimate:
    mean: float
    std: float
    se: float
    per_path_max: np.ndarray
    n: int

    @classmethod
    def from_values(cls, values) -> "DualEstimate":
        v = np.asarray(values, dtype=float)
        n = v.size
        mean = math.fsum(v) / n
        std = math.sqrt(math.fsum((v - mean) ** 2) / (n - 1)) if n > 1 else float("nan")
        v.setflags(write=False)
        return cls(mean, std, std / math.sqrt(n), v, n)


def pathwise_max(rewards, m, eta=None):
    """``max_j (Z_j - M_j + eta_j)`` along the last axis."""
    x = np.asarray(rewards, dtype=float) - np.asarray(m, dtype=float)
    if eta is not None:
        x = x + np.asarray(eta, dtype=float)
    out = np.max(x, axis=-1)
    return float(out) if out.ndim == 0 else out


def estimate(paths: PathBundle, basis: BasisMatrix, alpha, spec: RandomizerSpec,
             snell: SnellData | None = None, seed: int = 0) -> DualEstimate:
    """Monte Carlo estimate of the (randomized) dual objective at ``alpha``."""
    if paths.is_exact:
        raise ValueError("use exact_objective for enumerated tree bundles")
    m = eval_family(basis, alpha)
    eta = make_eta(spec, paths, snell, seed)
    return DualEstimate.from_values(pathwise_max(paths.rewards, m, eta))


def _max_moments(a: np.ndarray, scale: np.ndarray, nodes: np.ndarray, weights: np.ndarray,
                 chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``E[V]`` and ``E[V^2]`` per path for ``V = max_j (a_j + scale_j xi_j)``
    with independent ``xi_j`` on the discrete law ``(nodes, weights)``."""
    n, R = a.shape
    G = nodes.size
    m1 = np.empty(n)
    m2 = np.empty(n)
    for s in range(0, n, chunk):
        aa, ss = a[s:s + chunk], scale[s:s + chunk]
        vals = aa[:, :, None] + ss[:, :, None] * nodes  # (c, R, G)
        cand = np.sort(vals.reshape(len(aa), R * G), axis=1)  # (c, RG)
        le = vals[:, :, :, None] <= cand[:, None, None, :]  # (c, R, G, RG)
        cdf = np.prod(np.einsum("crgm,g->crm", le, weights), axis=1)  # (c, RG)
        dp = np.diff(cdf, axis=1, prepend=0.0)
        m1[s:s + chunk] = np.sum(cand * dp, axis=1)
        m2[s:s + chunk] = np.sum(cand * cand * dp, axis=1)
    return m1, m2


def exact_moments(paths: PathBundle, m, spec: RandomizerSpec, snell: SnellData | None = None,
                  grid: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[float, float]:
    """Exact mean and variance of ``max_j (Z_j - M_j + eta_j)`` on an enumerated tree.

    ``eta`` uses the discrete ``xi`` grid of the chosen law, so the expectation over
    both the tree and ``xi`` is a finite weighted sum.
    """
    if not paths.is_exact:
        raise ValueError("exact moments need an enumerated tree bundle")
    a = paths.rewards - np.asarray(m, dtype=float)
    w = paths.weights
    if spec.is_trivial:
        v = a.max(axis=1)
        e1, e2 = v, v * v
    else:
        scale = eta_scale(spec, paths.n_paths, paths.horizon, snell)
        nodes, gw = grid if grid is not None else xi_grid(spec.xi)
        e1, e2 = _max_moments(a, scale, nodes, gw)
    mean = math.fsum(w * e1)
    var = math.fsum(w * e2) - mean * mean
    return mean, max(var, 0.0)


def exact_objective(paths: PathBundle, basis: BasisMatrix, alpha, spec: RandomizerSpec,
                    snell: SnellData | None = None) -> float:
    """Exact ``E[max_j (Z_j - M_j(alpha) + eta_j)]`` on an enumerated tree."""
    return exact_moments(paths, eval_family(basis, alpha), spec, snell)[0]


@dataclass(frozen=True)
class ProfileRow:
    alpha: tuple
    mean: float
    std: float
    se: float
    n: int


def variance_profile(paths: PathBundle, basis: BasisMatrix, alpha_grid: Iterable[Sequence[float]],
                     spec: RandomizerSpec, snell: SnellData | None = None, seed: int = 0) -> list[ProfileRow]:
    rows = []
    for alpha in alpha_grid:
        alpha = tuple(float(x) for x in np.atleast_1d(alpha))
        if paths.is_exact:
            mean, var = exact_moments(paths, eval_family(basis, alpha), spec, snell)
            rows.append(ProfileRow(alpha, mean, math.sqrt(var), 0.0, paths.n_paths))
        else:
            est = estimate(paths, basis, alpha, spec, snell, seed)
            rows.append(ProfileRow(alpha, est.mean, est.std, est.se, est.n))
    if not rows:
        raise ValueError("alpha grid is empty")
    return rows


def write_profile_csv(path, rows: Sequence[ProfileRow], labels: Sequence[str] | None = None,
                      y0: float | None = None) -> None:
    """CSV with alpha components, mean, std, se, n (and relative deviation ``std / Y*_0``)."""
    dim = len(rows[0].alpha)
    header = ([] if labels is None else ["curve"]) + [f"alpha{k + 1}" for k in range(dim)]
    header += ["mean", "std", "se", "n"] + ([] if y0 is None else ["rel_dev"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, r in enumerate(rows):
            row = ([] if labels is None else [labels[i]]) + [format(a, ".17g") for a in r.alpha]
            row += [format(r.mean, ".17g"), format(r.std, ".17g"), format(r.se, ".17g"), r.n]
            if y0 is not None:
                row.append(format(r.std / y0, ".17g"))
            w.writerow(row)
