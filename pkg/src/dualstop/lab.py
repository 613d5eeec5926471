"""Characterization predicates for optimal dual martingales on finite trees.

A perturbation ``S`` (node-indexed, ``S_0 = 0``) stands for the martingale
``M = M* - S``. The increment-form and segment-form conditions are checked
node by node; brute force evaluates the defining conditional expectations over
every path of the tree. Sweeps compare the two over random perturbations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dual import _max_moments
from .models import TreeModel, tree_bundle
from .randomizers import xi_grid
from .snell import TreeSnell, backward_induct, tree_snell

TOL = 1e-10
GAP_TOL = 1e-9
ZERO_GAP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PerturbationS:
    """``values[j][i]`` is ``S_j`` at node ``i`` of date ``j``."""

    tree: TreeModel
    values: tuple
    label: str = ""

    def __post_init__(self):
        vals = tuple(np.array(v, dtype=float) for v in self.values)
        if len(vals) != self.tree.horizon + 1:
            raise ValueError("one array of S values per date is required")
        for j, v in enumerate(vals):
            if v.shape != (len(self.tree.ids[j]),):
                raise ValueError(f"S at date {j} must have one value per node")
            v.setflags(write=False)
        if vals[0][0] != 0:
            raise ValueError("S_0 must be 0")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, tree: TreeModel) -> "PerturbationS":
        return cls(tree, tuple(np.zeros(len(ids)) for ids in tree.ids), "zero")

    @classmethod
    def from_increments(cls, tree: TreeModel, zetas, label: str = "") -> "PerturbationS":
        """``zetas[j - 1]`` holds ``zeta_j`` on the date-``j`` nodes."""
        vals = [np.zeros(1)]
        for j in range(1, tree.horizon + 1):
            vals.append(vals[-1][tree.parents[j]] + np.asarray(zetas[j - 1], dtype=float))
        return cls(tree, tuple(vals), label)

    def zeta(self, j: int) -> np.ndarray:
        return self.values[j] - self.values[j - 1][self.tree.parents[j]]

    def scaled(self, factor: float, label: str | None = None) -> "PerturbationS":
        return PerturbationS(self.tree, tuple(factor * v for v in self.values),
                             self.label if label is None else label)

    def __add__(self, other: "PerturbationS") -> "PerturbationS":
        return PerturbationS(self.tree, tuple(a + b for a, b in zip(self.values, other.values)))

    def martingale_defect(self) -> float:
        worst = 0.0
        t = self.tree
        for j in range(1, t.horizon + 1):
            m = np.bincount(t.parents[j], weights=t.probs[j] * self.zeta(j), minlength=len(t.ids[j - 1]))
            worst = max(worst, float(np.max(np.abs(m))))
        return worst

    def is_martingale(self, tol: float = TOL) -> bool:
        return self.martingale_defect() <= tol

    def is_zero(self, tol: float = TOL) -> bool:
        return all(np.max(np.abs(v)) <= tol for v in self.values)

    def describe(self) -> dict:
        return {"label": self.label, "values": [v.tolist() for v in self.values]}


@dataclass(frozen=True, eq=False)
class _Context:
    tree: TreeModel
    ts: TreeSnell
    anc: tuple  # anc[i]: (n_i, i+1) positions of the ancestors of each date-i node
    ex: tuple  # exercise flag per node
    start: tuple  # tau^(l_i - 1) per node, -1 for 0^-
    label: tuple
    tau1: tuple  # first exercise date among ancestors (inclusive), J+1 if none yet
    leaf_nodes: np.ndarray
    leaf_probs: np.ndarray

    def hist(self, values, i: int) -> np.ndarray:
        """``values`` along the ancestry of every date-``i`` node, shape ``(n_i, i+1)``."""
        a = self.anc[i]
        return np.column_stack([np.asarray(values[r])[a[:, r]] for r in range(i + 1)])

    def path(self, values) -> np.ndarray:
        return np.column_stack([np.asarray(values[j])[self.leaf_nodes[:, j]]
                                for j in range(self.tree.horizon + 1)])


@lru_cache(maxsize=64)
def _context(tree: TreeModel) -> _Context:
    J = tree.horizon
    ts = backward_induct(tree)
    anc = [np.zeros((1, 1), dtype=np.int64)]
    for i in range(1, J + 1):
        par = tree.parents[i]
        anc.append(np.column_stack([anc[i - 1][par], np.arange(len(par))]))
    ex = []
    for j in range(J + 1):
        z, c = tree.rewards[j], ts.cont[j]
        e = z >= c - 1e-12 * (1.0 + np.abs(c))
        if j == J:
            e = np.ones_like(e)
        ex.append(e)
    start, label, tau1 = [], [], []
    for i in range(J + 1):
        exh = np.column_stack([ex[r][anc[i][:, r]] for r in range(i + 1)])
        prev = exh[:, :i]
        st = np.full(len(anc[i]), -1, dtype=np.int64)
        for r in range(i):
            st = np.where(prev[:, r], r, st)
        start.append(st)
        label.append(1 + prev.sum(axis=1))
        first = np.where(exh.any(axis=1), np.argmax(exh, axis=1), J + 1)
        tau1.append(first)
    leaves = tree.node_paths()
    return _Context(tree, ts, tuple(anc), tuple(ex), tuple(start), tuple(label), tuple(tau1),
                    leaves, tree.path_probs(leaves))


def doob_martingale(tree: TreeModel) -> tuple:
    return _context(tree).ts.m


def martingale_from(tree: TreeModel, s: PerturbationS) -> tuple:
    """Node-indexed ``M* - S``."""
    return tuple(m - v for m, v in zip(_context(tree).ts.m, s.values))


def _check_martingale(tree: TreeModel, m) -> None:
    for j in range(1, tree.horizon + 1):
        inc = np.asarray(m[j]) - np.asarray(m[j - 1])[tree.parents[j]]
        mean = np.bincount(tree.parents[j], weights=tree.probs[j] * inc, minlength=len(tree.ids[j - 1]))
        if np.max(np.abs(mean)) > TOL:
            raise ValueError(f"M is not a martingale: conditional increment mean {np.max(np.abs(mean)):.3g} at date {j - 1}")
    if abs(float(np.asarray(m[0])[0])) > TOL:
        raise ValueError("M_0 must be 0")


def _tail_max(ctx: _Context, m, j: int) -> np.ndarray:
    z = ctx.path(ctx.tree.rewards)
    mm = ctx.path(m)
    return np.max(z[:, j:] - mm[:, j:], axis=1) + mm[:, j]


def is_weakly_optimal_at(tree: TreeModel, m, j: int) -> bool:
    """``E_j[max_{j<=r<=J} (Z_r - M_r + M_j)] = Y*_j`` at every date-``j`` node (brute force)."""
    _check_martingale(tree, m)
    ctx = _context(tree)
    v = _tail_max(ctx, m, j)
    node = ctx.leaf_nodes[:, j]
    n = len(tree.ids[j])
    num = np.bincount(node, weights=ctx.leaf_probs * v, minlength=n)
    den = np.bincount(node, weights=ctx.leaf_probs, minlength=n)
    return bool(np.max(np.abs(num / den - ctx.ts.y[j])) <= TOL)


def is_surely_optimal_at(tree: TreeModel, m, j: int) -> bool:
    """``max_{j<=r<=J} (Z_r - M_r + M_j) = Y*_j`` on every path (brute force)."""
    _check_martingale(tree, m)
    ctx = _context(tree)
    v = _tail_max(ctx, m, j)
    return bool(np.max(np.abs(v - ctx.ts.y[j][ctx.leaf_nodes[:, j]])) <= TOL)


def weakly_optimal(tree: TreeModel, m) -> bool:
    return all(is_weakly_optimal_at(tree, m, j) for j in range(tree.horizon + 1))


def surely_optimal(tree: TreeModel, m) -> bool:
    return all(is_surely_optimal_at(tree, m, j) for j in range(tree.horizon + 1))


# -- increment / segment conditions ------------------------------------------

def _segment_terms(ctx: _Context, s: PerturbationS, i: int):
    """Per date-``i`` node: ``max_{start<r<=i}(Z_r - Y*_r + S_r) - S_i`` and the
    upper budget ``Z_st - C_st + S_st - S_i`` (``inf`` when ``l_i = 1``)."""
    tree, ts = ctx.tree, ctx.ts
    zh = ctx.hist(tree.rewards, i)
    yh = ctx.hist(ts.y, i)
    sh = ctx.hist(s.values, i)
    ch = ctx.hist(ts.cont, i)
    st = ctx.start[i]
    r = np.arange(i + 1)
    inside = r[None, :] > st[:, None]
    lower = np.max(np.where(inside, zh - yh + sh, -np.inf), axis=1) - sh[:, i]
    rows = np.arange(len(st))
    sti = np.maximum(st, 0)
    upper = np.where(st >= 0, zh[rows, sti] - ch[rows, sti] + sh[rows, sti] - sh[:, i], np.inf)
    return lower, upper


def check_thm_main(tree: TreeModel, s: PerturbationS) -> bool:
    """Martingale ``S`` with the segment conditions at every node: ``M* - S`` is weakly optimal."""
    if not s.is_martingale():
        return False
    ctx = _context(tree)
    for i in range(tree.horizon + 1):
        lower, upper = _segment_terms(ctx, s, i)
        if np.any(lower > TOL) or np.any(upper < -TOL):
            return False
    return True


def check_cor_eqco(tree: TreeModel, s: PerturbationS) -> bool:
    """Same class as :func:`check_thm_main`, phrased as bounds on each increment ``zeta_{i+1}``."""
    if not s.is_martingale():
        return False
    ctx = _context(tree)
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        zeta = s.zeta(i + 1)
        lower, upper = _segment_terms(ctx, s, i)
        ex = ctx.ex[i][par]
        gap = (tree.rewards[i] - ctx.ts.cont[i])[par]
        ok_ex = zeta <= gap + TOL
        ok_in = (zeta >= lower[par] - TOL) & (zeta <= upper[par] + TOL)
        if not np.all(np.where(ex, ok_ex, ok_in)):
            return False
    return True


def check_thm_i0(tree: TreeModel, s: PerturbationS) -> tuple[bool, bool]:
    """``(weakly optimal at 0, surely optimal at 0)`` for ``M* - S`` from conditions on
    ``S`` before and after the first exercise date ``tau*``."""
    if not s.is_martingale():
        return False, False
    ctx = _context(tree)
    ts = ctx.ts
    weak = sure = True
    for j in range(tree.horizon + 1):
        before = ctx.tau1[j] >= j  # j <= tau*
        zh = ctx.hist(tree.rewards, j)
        yh = ctx.hist(ts.y, j)
        sh = ctx.hist(s.values, j)
        sj = sh[:, j]
        if j > 0:
            weak_pre = np.max(zh[:, :j] - yh[:, :j] + sh[:, :j], axis=1) - sj <= TOL
        else:
            weak_pre = np.ones(len(sj), dtype=bool)
        rows = np.arange(len(sj))
        s_tau = sh[rows, np.minimum(ctx.tau1[j], j)]
        budget = ts.y[j] - tree.rewards[j] + ts.a[j]
        weak_post = sj - s_tau <= budget + TOL
        sure_pre = np.abs(sj) <= TOL
        sure_post = sj <= budget + TOL
        weak &= bool(np.all(np.where(before, weak_pre, weak_post)))
        sure &= bool(np.all(np.where(before, sure_pre, sure_post)))
    return weak, sure


def check_cor_alms(tree: TreeModel, s: PerturbationS) -> bool:
    """Surely optimal class: zero increments inside segments, bounded ones after exercise dates."""
    if not s.is_martingale():
        return False
    ctx = _context(tree)
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        zeta = s.zeta(i + 1)
        ex = ctx.ex[i][par]
        gap = (tree.rewards[i] - ctx.ts.cont[i])[par]
        if not np.all(np.where(ex, zeta <= gap + TOL, np.abs(zeta) <= TOL)):
            return False
    return True


def randomized_moments(tree: TreeModel, s: PerturbationS, xi_law: str = "uniform",
                       theta: float = 1.0) -> tuple[float, float]:
    """Exact ``(E, Var)`` of ``max_j (Z_j - M_j + eta_j)`` with optimal ``eta`` on the ``xi`` grid."""
    ctx = _context(tree)
    ts = ctx.ts
    z = ctx.path(tree.rewards)
    a = z - ctx.path(martingale_from(tree, s))
    scale = theta * ctx.path(tuple(y - r + aa for y, r, aa in zip(ts.y, tree.rewards, ts.a)))
    nodes, w = xi_grid(xi_law)
    e1, e2 = _max_moments(a, scale, nodes, w)
    p = ctx.leaf_probs
    mean = float(np.sum(p * e1))
    return mean, max(float(np.sum(p * e2)) - mean * mean, 0.0)


def check_thm_opran(tree: TreeModel, s: PerturbationS, xi_law: str = "uniform") -> float:
    """Exact randomized gap ``E[max_j (Z_j - M~_j)] - Y*_0`` for ``M~ = M* - S - eta``."""
    if not is_weakly_optimal_at(tree, martingale_from(tree, s), 0):
        raise ValueError("M* - S is not weakly optimal at 0")
    return randomized_moments(tree, s, xi_law)[0] - _context(tree).ts.y0


def check_prop2(tree: TreeModel, m) -> bool:
    """If ``M`` is weakly optimal at 0, the pathwise max sits at ``tau*`` on every path."""
    if not is_weakly_optimal_at(tree, m, 0):
        return True
    ctx = _context(tree)
    z = ctx.path(tree.rewards)
    mm = ctx.path(m)
    tau = ctx.tau1[tree.horizon][ctx.leaf_nodes[:, tree.horizon]]
    rows = np.arange(len(z))
    return bool(np.max(np.abs(np.max(z - mm, axis=1) - (z - mm)[rows, tau])) <= TOL)


# -- random trees ---------------------------------------------------------------

def random_tree(seed: int, horizon: int, branching: int = 2, recombining: bool = False,
                name: str = "") -> TreeModel:
    """Random tree with random transition probabilities.

    Recombining trees have rewards depending only on the lattice state (net up
    moves), like a put on a random walk; otherwise rewards are drawn per node.
    """
    g = np.random.default_rng(np.random.SeedSequence(seed))
    levels = np.linspace(-1.0, 1.0, branching)
    strike = g.uniform(0.8, 1.2)
    drift = g.uniform(0.05, 0.25)
    table = {}

    def lattice_reward(j, state):
        if (j, state) not in table:
            table[(j, state)] = max(strike - np.exp(drift * state), 0.0) * (1 + 0.3 * g.random()) + 0.05 * g.random()
        return table[(j, state)]

    dates = [[{"id": "0", "reward": float(lattice_reward(0, 0.0) if recombining else g.uniform(0, 1)),
               "parent": None, "prob": 1.0}]]
    states = {"0": 0.0}
    for j in range(1, horizon + 1):
        nodes = []
        for parent in dates[-1]:
            p = g.uniform(0.2, 1.0, size=branching)
            p /= p.sum()
            for c in range(branching):
                nid = f"{parent['id']}.{c}"
                st = states[parent["id"]] + levels[c]
                states[nid] = st
                r = lattice_reward(j, st) if recombining else g.uniform(0, 2) * g.uniform(0.5, 1.5)
                nodes.append({"id": nid, "reward": float(r), "parent": parent["id"], "prob": float(p[c])})
        dates.append(nodes)
    return TreeModel.from_dates(dates)


def builtin_trees(seed: int = 0) -> list[tuple[str, TreeModel]]:
    from .models import stylized_tree
    return [
        ("stylized", stylized_tree()),
        ("stylized3", stylized_tree((0.0, 1.0, 2.0), (0.25, 0.5, 0.25))),
        ("bin_J2", random_tree(seed + 1, 2, 2)),
        ("ter_J3", random_tree(seed + 2, 3, 3)),
        ("bin_J4", random_tree(seed + 3, 4, 2)),
        ("bin_J4_recomb", random_tree(seed + 4, 4, 2, recombining=True)),
        ("ter_J3_recomb", random_tree(seed + 5, 3, 3, recombining=True)),
        ("ter_J4", random_tree(seed + 6, 4, 3)),
    ]


# -- random perturbations -------------------------------------------------------

def _mean_zero(zeta: np.ndarray, probs: np.ndarray, parents: np.ndarray, n_parents: int) -> np.ndarray:
    """Rescale positive or negative parts per parent so the conditional mean vanishes.

    Scaling only shrinks values towards 0, so any interval containing 0 is preserved.
    """
    pos = np.bincount(parents, weights=probs * np.maximum(zeta, 0), minlength=n_parents)
    neg = np.bincount(parents, weights=probs * np.maximum(-zeta, 0), minlength=n_parents)
    with np.errstate(divide="ignore", invalid="ignore"):
        fpos = np.where(pos > neg, np.where(pos > 0, neg / pos, 0.0), 1.0)
        fneg = np.where(neg > pos, np.where(neg > 0, pos / neg, 0.0), 1.0)
    out = np.where(zeta > 0, zeta * fpos[parents], zeta * fneg[parents])
    # one-child nodes and exact cancellation leave an O(eps) residual; remove it
    resid = np.bincount(parents, weights=probs * out, minlength=n_parents)
    return out - resid[parents]


def _interval(ctx: _Context, s_vals, i: int, spread: float):
    """Feasible interval for ``zeta_{i+1}`` per date-``i`` node (wide ends replaced by ``spread``)."""
    tree = ctx.tree
    partial = PerturbationS(tree, tuple(s_vals) + tuple(np.zeros(len(tree.ids[j]))
                                                          for j in range(i + 1, tree.horizon + 1)))
    lower, upper = _segment_terms(ctx, partial, i)
    ex = ctx.ex[i]
    gap = tree.rewards[i] - ctx.ts.cont[i]
    lo = np.where(ex, -spread, np.minimum(lower, 0.0))
    hi = np.where(ex, gap, np.minimum(upper, spread))
    return lo, hi


def feasible_perturbation(tree: TreeModel, g: np.random.Generator, spread: float = 0.5,
                          sparsity: float = 0.3) -> PerturbationS:
    """Martingale drawn inside the increment bounds, so ``M* - S`` is weakly optimal."""
    ctx = _context(tree)
    vals = [np.zeros(1)]
    for i in range(tree.horizon):
        lo, hi = _interval(ctx, vals, i, spread)
        par = tree.parents[i + 1]
        z = g.uniform(lo[par], hi[par])
        z[g.random(len(z)) < sparsity] = 0.0
        z = _mean_zero(z, tree.probs[i + 1], par, len(tree.ids[i]))
        vals.append(vals[i][par] + z)
    return PerturbationS(tree, tuple(vals), "feasible")


def sure_perturbation(tree: TreeModel, g: np.random.Generator, spread: float = 0.5) -> PerturbationS:
    """Nonzero increments only right after exercise dates, within the exercise premium."""
    ctx = _context(tree)
    zetas = []
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        ex = ctx.ex[i][par]
        gap = (tree.rewards[i] - ctx.ts.cont[i])[par]
        z = np.where(ex, g.uniform(-spread, np.maximum(gap, 0.0)), 0.0)
        zetas.append(_mean_zero(z, tree.probs[i + 1], par, len(tree.ids[i])))
    return PerturbationS.from_increments(tree, zetas, "sure")


def free_perturbation(tree: TreeModel, g: np.random.Generator, spread: float = 0.5) -> PerturbationS:
    """Unconstrained mean-zero increments."""
    zetas = []
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        z = g.normal(0.0, spread, len(par))
        zetas.append(_mean_zero(z, tree.probs[i + 1], par, len(tree.ids[i])))
    return PerturbationS.from_increments(tree, zetas, "free")


def i0_perturbation(tree: TreeModel, g: np.random.Generator, spread: float = 0.5) -> PerturbationS:
    """Feasible up to ``tau*``, loosely bounded afterwards: aims at optimality at 0 only."""
    ctx = _context(tree)
    ts = ctx.ts
    vals = [np.zeros(1)]
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        n = len(par)
        before = (ctx.tau1[i] > i)[par]  # next date still <= tau*
        sh = ctx.hist(vals, i)
        zh = ctx.hist(tree.rewards, i)
        yh = ctx.hist(ts.y, i)
        lo = (np.max(zh - yh + sh, axis=1) - sh[:, i])[par]
        s_tau = sh[np.arange(len(sh)), np.minimum(ctx.tau1[i], i)][par]
        cap = (ts.y[i + 1] - tree.rewards[i + 1] + ts.a[i + 1]) - (vals[i][par] - s_tau)
        z = np.where(before, g.uniform(np.minimum(lo, spread), spread, n),
                     g.uniform(-spread, 1.0, n) * np.maximum(cap, 0) + np.minimum(cap, 0))
        z = _mean_zero(z, tree.probs[i + 1], par, len(tree.ids[i]))
        vals.append(vals[i][par] + z)
    return PerturbationS(tree, tuple(vals), "i0")


def violate_premium(tree: TreeModel, g: np.random.Generator, margin: float = 0.2) -> PerturbationS | None:
    """Break the post-exercise bound at one node with two or more children."""
    ctx = _context(tree)
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        counts = np.bincount(par, minlength=len(tree.ids[i]))
        cand = np.flatnonzero(ctx.ex[i] & (counts >= 2))
        if len(cand) == 0:
            continue
        node = int(g.choice(cand))
        kids = np.flatnonzero(par == node)
        p = tree.probs[i + 1][kids]
        gap = tree.rewards[i][node] - ctx.ts.cont[i][node]
        zk = np.zeros(len(kids))
        zk[0] = gap + margin
        zk[1:] = -p[0] * zk[0] / p[1:].sum()
        zetas = [np.zeros(len(tree.ids[j])) for j in range(1, tree.horizon + 1)]
        zetas[i][kids] = zk
        return PerturbationS.from_increments(tree, zetas, f"violate_premium@{i}")
    return None


def violate_inside(tree: TreeModel, g: np.random.Generator, size: float = 0.3) -> PerturbationS | None:
    """Nonzero mean-zero increment after a date strictly inside a segment."""
    ctx = _context(tree)
    for i in range(tree.horizon):
        par = tree.parents[i + 1]
        counts = np.bincount(par, minlength=len(tree.ids[i]))
        cand = np.flatnonzero(~ctx.ex[i] & (counts >= 2))
        if len(cand) == 0:
            continue
        node = int(g.choice(cand))
        kids = np.flatnonzero(par == node)
        p = tree.probs[i + 1][kids]
        zk = np.zeros(len(kids))
        zk[0] = size
        zk[1:] = -p[0] * size / p[1:].sum()
        zetas = [np.zeros(len(tree.ids[j])) for j in range(1, tree.horizon + 1)]
        zetas[i][kids] = zk
        return PerturbationS.from_increments(tree, zetas, f"violate_inside@{i}")
    return None


def violate_martingale(tree: TreeModel, g: np.random.Generator) -> PerturbationS:
    """Adapted but not a martingale (negative control for every predicate)."""
    zetas = [np.full(len(tree.ids[j]), 0.1) for j in range(1, tree.horizon + 1)]
    return PerturbationS.from_increments(tree, zetas, "not_martingale")


GENERATORS = ("feasible", "sure", "i0", "free", "scaled", "midpoint")


def draw_perturbation(tree: TreeModel, kind: str, g: np.random.Generator) -> PerturbationS:
    spread = float(g.choice([0.05, 0.3, 1.0]))
    if kind == "feasible":
        return feasible_perturbation(tree, g, spread)
    if kind == "sure":
        return sure_perturbation(tree, g, spread)
    if kind == "i0":
        return i0_perturbation(tree, g, spread)
    if kind == "free":
        return free_perturbation(tree, g, spread)
    if kind == "scaled":
        return feasible_perturbation(tree, g, spread).scaled(float(g.uniform(0.5, 3.0)), "scaled")
    if kind == "midpoint":
        a = feasible_perturbation(tree, g, spread)
        b = feasible_perturbation(tree, g, spread)
        return (a + b).scaled(0.5, "midpoint")
    raise ValueError(f"unknown perturbation kind {kind!r}")


# -- sweeps ---------------------------------------------------------------------

@dataclass
class TrialResult:
    tree: str
    kind: str
    thm_main: bool
    cor_eqco: bool
    weak0: bool
    sure0: bool
    cor_alms: bool
    bf_weak_all: bool
    bf_sure_all: bool
    bf_weak0: bool
    bf_sure0: bool
    prop2: bool
    is_zero: bool
    gap_uniform: float | None = None
    gap_texp: float | None = None
    var_uniform: float | None = None
    negative_control: str = ""  # "weak": must fail weak optimality, "sure": must fail sure
    S: dict = field(default_factory=dict)

    @property
    def agree(self) -> bool:
        return (self.thm_main == self.bf_weak_all and self.cor_eqco == self.thm_main
                and self.weak0 == self.bf_weak0 and self.sure0 == self.bf_sure0
                and self.cor_alms == self.bf_sure_all and self.prop2)

    @property
    def opran_ok(self) -> bool:
        """Strict gap and positive variance off the Doob martingale (texp grid decides)."""
        if self.gap_texp is None:
            return True
        if self.is_zero:
            return abs(self.gap_texp) <= ZERO_GAP_TOL
        return self.gap_texp > GAP_TOL

    @property
    def uniform_finding(self) -> bool:
        """Nonzero S whose uniform-grid gap is numerically zero (reported, not failed)."""
        return self.gap_uniform is not None and not self.is_zero and self.gap_uniform <= GAP_TOL

    @property
    def negative_detected(self) -> bool:
        if self.negative_control == "weak":
            return not (self.thm_main or self.cor_eqco or self.bf_weak_all)
        if self.negative_control == "sure":
            return not (self.cor_alms or self.bf_sure_all)
        return True


def run_trial(name: str, tree: TreeModel, s: PerturbationS, negative: str = "") -> TrialResult:
    martingale = s.is_martingale()
    m = martingale_from(tree, s)
    if martingale:
        bf_weak = [is_weakly_optimal_at(tree, m, j) for j in range(tree.horizon + 1)]
        bf_sure = [is_surely_optimal_at(tree, m, j) for j in range(tree.horizon + 1)]
        prop2 = check_prop2(tree, m)
    else:
        bf_weak = bf_sure = [False]
        prop2 = True
    weak0, sure0 = check_thm_i0(tree, s)
    res = TrialResult(
        tree=name, kind=s.label, thm_main=check_thm_main(tree, s), cor_eqco=check_cor_eqco(tree, s),
        weak0=weak0, sure0=sure0, cor_alms=check_cor_alms(tree, s),
        bf_weak_all=all(bf_weak), bf_sure_all=all(bf_sure), bf_weak0=bf_weak[0], bf_sure0=bf_sure[0],
        prop2=prop2, is_zero=s.is_zero(), negative_control=negative, S=s.describe(),
    )
    if martingale and res.bf_weak0:
        res.gap_uniform, res.var_uniform = _gap_var(tree, s, "uniform")
        res.gap_texp = _gap_var(tree, s, "texp")[0]
    return res


def _gap_var(tree, s, law):
    mean, var = randomized_moments(tree, s, law)
    return mean - _context(tree).ts.y0, var


@dataclass
class SweepReport:
    trials: list

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def failures(self) -> list:
        return [t for t in self.trials if not (t.agree and t.opran_ok and t.negative_detected)]

    @property
    def findings(self) -> list:
        return [t for t in self.trials if t.uniform_finding]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> dict:
        trees = sorted({t.tree for t in self.trials})
        return {
            "trials": self.n_trials,
            "trees": trees,
            "failures": len(self.failures),
            "uniform_zero_gap_findings": len(self.findings),
            "weak_all_true": sum(t.bf_weak_all for t in self.trials),
            "sure_all_true": sum(t.bf_sure_all for t in self.trials),
            "weak0_true": sum(t.bf_weak0 for t in self.trials),
            "negative_controls": sum(bool(t.negative_control) for t in self.trials),
        }

    def to_json(self) -> dict:
        out = self.summary()
        out["passed"] = self.passed
        out["trials_detail"] = [
            {k: v for k, v in t.__dict__.items()} | {"agree": t.agree, "opran_ok": t.opran_ok}
            for t in self.trials
        ]
        return out

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def sweep(seed: int = 0, per_tree: int = 120, trees: list | None = None) -> SweepReport:
    """Random perturbations on every tree plus zero and negative-control fixtures."""
    if trees is None:
        trees = builtin_trees(seed)
    trials = []
    for t_idx, (name, tree) in enumerate(trees):
        g = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t_idx,)))
        trials.append(run_trial(name, tree, PerturbationS.zero(tree)))
        for k in range(per_tree):
            kind = GENERATORS[k % len(GENERATORS)]
            trials.append(run_trial(name, tree, draw_perturbation(tree, kind, g)))
        for neg, what in ((violate_premium(tree, g), "weak"), (violate_inside(tree, g), "sure"),
                          (violate_martingale(tree, g), "weak")):
            if neg is not None:
                trials.append(run_trial(name, tree, neg, negative=what))
    return SweepReport(trials)


def verify_tree(tree: TreeModel, seed: int = 0, per_tree: int = 120, name: str = "tree") -> SweepReport:
    return sweep(seed, per_tree, [(name, tree)])


__all__ = [
    "PerturbationS", "is_weakly_optimal_at", "is_surely_optimal_at", "weakly_optimal", "surely_optimal",
    "check_thm_main", "check_cor_eqco", "check_thm_i0", "check_cor_alms", "check_thm_opran",
    "randomized_moments", "check_prop2", "random_tree", "builtin_trees", "sweep", "verify_tree",
    "SweepReport", "TrialResult", "tree_bundle", "tree_snell",
]
