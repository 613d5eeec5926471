"""Reward models and sample-path bundles.

Two closed-form models with horizon ``J = 2`` (the stylized uniform example
and a two-date Bermudan call under Black-Scholes) plus exactly enumerable
finite probability trees used as brute-force oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng

MAX_TREE_PATHS = 10 ** 7
PROB_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StylizedModel:
    """``Z_0 = 0``, ``Z_1 = U ~ Uniform[0, 2]``, ``Z_2 = 1``."""

    horizon: int = field(default=2, init=False)


@dataclass(frozen=True)
class BermudanCallModel:
    """Two-date Bermudan call with increasing strikes on a driftless GBM.

    ``S_j = s0 * exp(-sigma2 * j / 2 + sigma * W_j)``, ``Z_1 = (S_1 - kappa1)^+``,
    ``Z_2 = (S_2 - kappa2)^+``. ``sigma2`` is the per-period variance.
    """

    s0: float
    sigma2: float
    kappa1: float
    kappa2: float
    horizon: int = field(default=2, init=False)

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("strikes must be nonnegative")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def stock(self, w1, w12) -> np.ndarray:
        """Stock levels ``S_0, S_1, S_2`` with shape ``(n, 3)``."""
        w1 = np.asarray(w1, dtype=float)
        w2 = w1 + np.asarray(w12, dtype=float)
        s = np.empty(w1.shape + (3,))
        s[..., 0] = self.s0
        s[..., 1] = self.s0 * np.exp(-0.5 * self.sigma2 + self.sigma * w1)
        s[..., 2] = self.s0 * np.exp(-self.sigma2 + self.sigma * w2)
        return s

    def rewards(self, w1, w12) -> np.ndarray:
        s = self.stock(w1, w12)
        z = np.zeros_like(s)
        z[..., 1] = np.maximum(s[..., 1] - self.kappa1, 0.0)
        z[..., 2] = np.maximum(s[..., 2] - self.kappa2, 0.0)
        return z


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Finite probability tree. Node ``i`` at date ``j`` has reward ``rewards[j][i]``,
    parent ``parents[j][i]`` (position at date ``j-1``, ``-1`` for the root) and
    transition probability ``probs[j][i]`` from that parent.

    Nodes carry their full history, so the natural filtration is the tree itself.
    Hashing is by identity, which lets oracle contexts be cached per tree.
    """

    horizon: int
    ids: tuple
    rewards: tuple
    parents: tuple
    probs: tuple

    @classmethod
    def from_dates(cls, dates: Sequence[Sequence[Mapping]], horizon: int | None = None) -> "TreeModel":
        if not dates:
            raise ValueError("tree needs at least the root date")
        if horizon is None:
            horizon = len(dates) - 1
        if horizon != len(dates) - 1:
            raise ValueError(f"horizon {horizon} does not match {len(dates)} dates")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(dates[-1]) > MAX_TREE_PATHS:
            raise ValueError(f"tree has {len(dates[-1])} paths, limit is {MAX_TREE_PATHS}")
        ids, rewards, parents, probs = [], [], [], []
        prev_pos: dict = {}
        for j, nodes in enumerate(dates):
            if not nodes:
                raise ValueError(f"date {j} has no nodes")
            if j == 0 and len(nodes) != 1:
                raise ValueError("date 0 must hold exactly one root node")
            pos = {}
            r = np.empty(len(nodes))
            par = np.empty(len(nodes), dtype=np.int64)
            pr = np.empty(len(nodes))
            for i, node in enumerate(nodes):
                nid = node["id"]
                if nid in pos:
                    raise ValueError(f"duplicate node id {nid!r} at date {j}")
                pos[nid] = i
                r[i] = float(node["reward"])
                if j == 0:
                    par[i] = -1
                    pr[i] = 1.0 if node.get("prob") is None else float(node["prob"])
                else:
                    if node.get("parent") not in prev_pos:
                        raise ValueError(f"node {nid!r} at date {j} has unknown parent {node.get('parent')!r}")
                    par[i] = prev_pos[node["parent"]]
                    pr[i] = float(node["prob"])
            if not np.all(np.isfinite(r)):
                raise ValueError(f"non-finite reward at date {j}")
            if j == 0:
                if abs(pr[0] - 1.0) > PROB_TOL:
                    raise ValueError("root probability must be 1")
            else:
                if np.any(pr <= 0) or np.any(pr > 1 + PROB_TOL):
                    raise ValueError(f"transition probabilities at date {j} must lie in (0, 1]")
                tot = np.bincount(par, weights=pr, minlength=len(dates[j - 1]))
                if np.any(np.bincount(par, minlength=len(dates[j - 1])) == 0):
                    raise ValueError(f"a node at date {j - 1} has no children")
                if np.max(np.abs(tot - 1.0)) > PROB_TOL:
                    raise ValueError(f"probabilities out of a parent at date {j - 1} do not sum to 1")
            ids.append(tuple(pos))
            rewards.append(_frozen(r))
            parents.append(_frozen(par))
            probs.append(_frozen(pr))
            prev_pos = pos
        return cls(horizon, tuple(ids), tuple(rewards), tuple(parents), tuple(probs))

    @classmethod
    def from_json(cls, obj: Mapping) -> "TreeModel":
        return cls.from_dates(obj["dates"], horizon=obj.get("horizon"))

    def to_json(self) -> dict:
        dates = []
        for j in range(self.horizon + 1):
            nodes = []
            for i, nid in enumerate(self.ids[j]):
                node = {"id": nid, "reward": float(self.rewards[j][i])}
                if j == 0:
                    node.update(parent=None, prob=1.0)
                else:
                    node.update(parent=self.ids[j - 1][self.parents[j][i]], prob=float(self.probs[j][i]))
                nodes.append(node)
            dates.append(nodes)
        return {"horizon": self.horizon, "dates": dates}

    def node_paths(self) -> np.ndarray:
        """Positional node index per date for every root-to-leaf path, shape ``(n_leaves, J+1)``."""
        J = self.horizon
        out = np.empty((len(self.ids[J]), J + 1), dtype=np.int64)
        out[:, J] = np.arange(len(self.ids[J]))
        for j in range(J, 0, -1):
            out[:, j - 1] = self.parents[j][out[:, j]]
        return out

    def path_probs(self, nodes: np.ndarray) -> np.ndarray:
        p = np.ones(nodes.shape[0])
        for j in range(1, self.horizon + 1):
            p = p * self.probs[j][nodes[:, j]]
        return p


def load_tree(path) -> TreeModel:
    with open(path) as fh:
        return TreeModel.from_json(json.load(fh))


def save_tree(tree: TreeModel, path) -> None:
    Path(path).write_text(json.dumps(tree.to_json(), indent=1))


def stylized_tree(points=(0.5, 1.5), probs=None) -> TreeModel:
    """Discretized stylized example: ``Z_1`` takes ``points`` with ``probs`` (default equal)."""
    points = list(points)
    if probs is None:
        probs = [1.0 / len(points)] * len(points)
    dates = [
        [{"id": "r", "reward": 0.0, "parent": None, "prob": 1.0}],
        [{"id": f"u{i}", "reward": float(u), "parent": "r", "prob": float(p)} for i, (u, p) in enumerate(zip(points, probs))],
        [{"id": f"u{i}e", "reward": 1.0, "parent": f"u{i}", "prob": 1.0} for i in range(len(points))],
    ]
    return TreeModel.from_dates(dates)


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated (or enumerated) paths.

    ``rewards`` has shape ``(n, J+1)``. ``weights`` is ``None`` for Monte Carlo
    bundles (equal weights) and holds path probabilities for enumerated trees,
    whose ``drivers["node"]`` gives the node position at every date.
    """

    model: object
    rewards: np.ndarray
    drivers: Mapping[str, np.ndarray]
    seed: int | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "rewards", _frozen(np.asarray(self.rewards, dtype=float)))
        object.__setattr__(self, "drivers", {k: _frozen(v) for k, v in self.drivers.items()})
        if self.weights is not None:
            object.__setattr__(self, "weights", _frozen(np.asarray(self.weights, dtype=float)))
        if self.rewards.ndim != 2 or self.rewards.shape[1] != self.model.horizon + 1:
            raise ValueError("rewards must have shape (n_paths, J+1)")

    @property
    def n_paths(self) -> int:
        return self.rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1] - 1

    @property
    def is_exact(self) -> bool:
        return self.weights is not None

    def expect(self, values) -> float:
        """Probability-weighted mean for enumerated trees, plain mean otherwise."""
        values = np.asarray(values, dtype=float)
        if self.weights is None:
            return math.fsum(values) / values.size
        return math.fsum(self.weights * values)

    def conditional_mean(self, values, j: int) -> np.ndarray:
        """Exact ``E[values | F_j]`` broadcast back to paths (enumerated trees only)."""
        if self.weights is None:
            raise ValueError("conditional expectations are exact only on enumerated trees")
        node = self.drivers["node"][:, j]
        num = np.bincount(node, weights=self.weights * np.asarray(values, dtype=float))
        den = np.bincount(node, weights=self.weights)
        return (num / np.where(den > 0, den, 1.0))[node]


def simulate(model, n_paths: int, seed: int) -> PathBundle:
    """Seeded sample paths of a :class:`StylizedModel` or :class:`BermudanCallModel`."""
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if isinstance(model, StylizedModel):
        u = 2.0 * rng.uniforms(seed, "drivers", n_paths, 1)[:, 0]
        z = np.zeros((n_paths, 3))
        z[:, 1] = u
        z[:, 2] = 1.0
        return PathBundle(model, z, {"U": u}, seed=seed)
    if isinstance(model, BermudanCallModel):
        w = rng.normals(seed, "drivers", n_paths, 2)
        w1, w12 = w[:, 0].copy(), w[:, 1].copy()
        return PathBundle(model, model.rewards(w1, w12), {"W1": w1, "W12": w12}, seed=seed)
    raise TypeError(f"cannot simulate {type(model).__name__}; enumerate trees with tree_bundle()")


def enumerate_paths(tree: TreeModel) -> list[tuple[tuple, float, np.ndarray]]:
    """Every root-to-leaf path as ``(node ids, probability, reward vector)``."""
    nodes = tree.node_paths()
    probs = tree.path_probs(nodes)
    out = []
    for row, p in zip(nodes, probs):
        ids = tuple(tree.ids[j][i] for j, i in enumerate(row))
        z = np.array([tree.rewards[j][i] for j, i in enumerate(row)])
        out.append((ids, float(p), z))
    return out


def tree_bundle(tree: TreeModel) -> PathBundle:
    """All paths of ``tree`` as a probability-weighted bundle."""
    nodes = tree.node_paths()
    z = np.column_stack([tree.rewards[j][nodes[:, j]] for j in range(tree.horizon + 1)])
    return PathBundle(tree, z, {"node": nodes}, weights=tree.path_probs(nodes))
