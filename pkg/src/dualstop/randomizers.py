"""Randomized perturbations ``eta_j = xi_j * scale_j`` of dual martingales."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy.special import roots_genlaguerre, roots_legendre

from . import rng
from .models import PathBundle
from .snell import SnellData

KINDS = ("none", "optimal", "naive")
XI_LAWS = ("uniform", "texp")
GRID_SIZE = 21
ASL_TOL = 1e-12


@dataclass(frozen=True)
class RandomizerSpec:
    """``kind='optimal'``: ``eta_j = theta * xi_j * (Y*_j - Z_j + A*_j)``;
    ``kind='naive'``: ``eta_j = theta_naive[j] * xi_j`` (missing dates count as 0).

    ``xi='uniform'`` draws from Uniform[-1, 1]; ``xi='texp'`` draws ``1 - E`` with
    ``E ~ Exp(1)``, mean zero on ``(-inf, 1]`` with density 1 at the right end.
    """

    kind: str = "none"
    theta: float = 1.0
    theta_naive: tuple = field(default=())
    xi: str = "uniform"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"randomizer kind must be one of {KINDS}, got {self.kind!r}")
        if self.xi not in XI_LAWS:
            raise ValueError(f"xi law must be one of {XI_LAWS}, got {self.xi!r}")
        if self.theta < 0 or any(t < 0 for t in self.theta_naive):
            raise ValueError("randomization scales must be nonnegative")
        object.__setattr__(self, "theta_naive", tuple(float(t) for t in self.theta_naive))

    @classmethod
    def from_config(cls, cfg: Mapping) -> "RandomizerSpec":
        return cls(
            kind=cfg.get("kind", "none"),
            theta=float(cfg.get("theta", 1.0)),
            theta_naive=tuple(cfg.get("theta_naive", ())),
            xi=cfg.get("xi", "uniform"),
        )

    @property
    def is_trivial(self) -> bool:
        if self.kind == "none":
            return True
        if self.kind == "optimal":
            return self.theta == 0
        return not any(self.theta_naive)

    def label(self) -> str:
        if self.kind == "optimal":
            return f"theta={self.theta:g}"
        if self.kind == "naive":
            return "naive(" + ",".join(f"{t:g}" for t in self.theta_naive) + ")"
        return "theta=0"


NONE = RandomizerSpec("none")


def sample_xi(law: str, u: np.ndarray) -> np.ndarray:
    """Map open-interval uniforms to draws of the ``xi`` law."""
    if law == "uniform":
        return 2.0 * u - 1.0
    if law == "texp":
        return 1.0 + np.log(u)
    raise ValueError(f"unknown xi law {law!r}")


@lru_cache(maxsize=8)
def xi_grid(law: str, size: int = GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Discrete law ``(nodes, weights)`` standing in for ``xi`` in exact expectations.

    Uniform: Gauss-Legendre on ``[-1, 1]``. texp: Gauss-Radau-Laguerre with a fixed
    node at ``E = 0`` (that is ``xi = 1``); both reproduce mean zero exactly.
    """
    if law == "uniform":
        x, w = roots_legendre(size)
        return x, w / 2.0
    if law == "texp":
        # f(E) = f(0) + E h(E); integrate h against E e^{-E} with size-1 Gauss points
        x1, w1 = roots_genlaguerre(size - 1, 1.0)
        w_int = w1 / x1
        e = np.concatenate([[0.0], x1])
        w = np.concatenate([[1.0 - w_int.sum()], w_int])
        return 1.0 - e, w
    raise ValueError(f"unknown xi law {law!r}")


def eta_scale(spec: RandomizerSpec, n_paths: int, horizon: int, snell: SnellData | None = None) -> np.ndarray:
    """Per-path, per-date multiplier of ``xi_j``; shape ``(n, J+1)``."""
    R = horizon + 1
    if spec.kind == "none":
        return np.zeros((n_paths, R))
    if spec.kind == "optimal":
        if snell is None:
            raise ValueError("optimal randomization needs exact Snell data")
        return spec.theta * snell.randomizer_scale()
    th = np.zeros(R)
    if len(spec.theta_naive) > R:
        raise ValueError(f"theta_naive has {len(spec.theta_naive)} entries for {R} dates")
    th[: len(spec.theta_naive)] = spec.theta_naive
    return np.broadcast_to(th, (n_paths, R)).copy()


def draw_xi(law: str, seed: int, n_paths: int, horizon: int) -> np.ndarray:
    """``xi`` draws from the dedicated stream keyed by ``(seed, 'xi', path, date)``."""
    return sample_xi(law, rng.uniforms(seed, "xi", n_paths, horizon + 1))


def make_eta(spec: RandomizerSpec, paths: PathBundle, snell: SnellData | None, seed: int) -> np.ndarray:
    """Perturbations ``eta_0..eta_J`` per path."""
    scale = eta_scale(spec, paths.n_paths, paths.horizon, snell)
    if spec.is_trivial:
        return np.zeros_like(scale)
    return scale * draw_xi(spec.xi, seed, paths.n_paths, paths.horizon)


def check_asl(eta, snell: SnellData, tol: float = ASL_TOL) -> np.ndarray:
    """Per path: ``eta_j <= Y*_j - Z_j + A*_j`` at every date."""
    eta = np.asarray(eta, dtype=float)
    return np.all(eta <= snell.randomizer_scale() + tol, axis=1)


def pseudo_martingale(m, eta) -> np.ndarray:
    return np.asarray(m, dtype=float) - np.asarray(eta, dtype=float)
