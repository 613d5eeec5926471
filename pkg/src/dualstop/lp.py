"""Epigraph LP for the sample-mean dual minimization and a structured simplex.

The problem is

    minimize   sum_n w_n u_n
    subject to u_n + b[n, j] . alpha >= c[n, j]   for every path n and date j,

with free ``alpha`` (dimension K) and ``w_n = 1/N`` for Monte Carlo bundles.

Every row touches exactly one ``u_n``, so the solver keeps ``u`` implicit. Each
path owns one tight *key* row that defines ``u_n``; any further tight rows
(at most K of them, the set ``E``) are written relative to their path's key as
``D_t . alpha = e_t`` with ``D_t = b[n, j] - b[n, key]``. The working basis is
the ``|E| x |E|`` block of ``D`` on the basic alpha columns, so a pivot costs a
dense solve of size at most K plus one O(N (J+1) K) scan for the ratio test.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import rng
from .dual import DualEstimate, estimate, pathwise_max
from .families import BasisMatrix, build_basis
from .models import PathBundle, simulate
from .randomizers import NONE, RandomizerSpec, make_eta
from .snell import SnellData, snell_for

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-8
OPT_TOL = 1e-8
TEST_SEED_TAG = 1


@dataclass(frozen=True, eq=False)
class LPProblem:
    """``c`` has shape ``(N, J+1)``, ``b`` shape ``(N, J+1, K)``; ``weights`` default to ``1/N``."""

    c: np.ndarray
    b: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float)
        if c.ndim != 2 or b.ndim != 3 or b.shape[:2] != c.shape:
            raise ValueError("need c of shape (N, R) and b of shape (N, R, K)")
        if c.shape[0] == 0:
            raise ValueError("LP needs at least one path")
        if b.shape[2] == 0:
            raise ValueError("LP needs at least one alpha variable")
        for a in (c, b):
            a.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        if self.weights is not None:
            w = np.ascontiguousarray(self.weights, dtype=float)
            if w.shape != (c.shape[0],) or np.any(w <= 0):
                raise ValueError("weights must be positive, one per path")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def n_alpha(self) -> int:
        return self.b.shape[2]

    @property
    def n_paths(self) -> int:
        return self.c.shape[0]

    @property
    def n_dates(self) -> int:
        return self.c.shape[1]

    @property
    def n_variables(self) -> int:
        return self.n_alpha + self.n_paths

    @property
    def n_rows(self) -> int:
        return self.n_paths * self.n_dates

    def path_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_paths, 1.0 / self.n_paths)
        return self.weights

    def objective(self, alpha) -> float:
        """``sum_n w_n max_j (c - b . alpha)``, the LP value at the best ``u`` for ``alpha``."""
        u = np.max(self.c - self.b @ np.asarray(alpha, dtype=float), axis=1)
        return math.fsum(self.path_weights() * u)

    def dump(self, path) -> None:
        K = self.n_alpha
        with open(path, "w") as fh:
            fh.write("# epigraph LP: minimize sum_n w_n u_n over free a_k and u_n\n")
            fh.write(f"n_alpha {K}\nn_paths {self.n_paths}\nn_dates {self.n_dates}\n")
            if self.weights is None:
                fh.write("objective (1/N) sum u_n\n")
            else:
                fh.write("objective sum w_n u_n\n")
                for n, w in enumerate(self.weights):
                    fh.write(f"w{n} = {w:.17g}\n")
            for n in range(self.n_paths):
                for j in range(self.n_dates):
                    terms = " + ".join(f"{self.b[n, j, k]:.17g}*a{k + 1}" for k in range(K))
                    fh.write(f"u{n} >= {self.c[n, j]:.17g} - ({terms})\n")

    @classmethod
    def load(cls, path) -> "LPProblem":
        head: dict[str, int] = {}
        weights = {}
        rows = []
        row_re = re.compile(r"u(\d+) >= (\S+) - \((.*)\)$")
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("objective"):
                    continue
                if line.startswith("u"):
                    m = row_re.match(line)
                    if m is None:
                        raise ValueError(f"bad LP row: {line!r}")
                    coef = [float(t.split("*a")[0]) for t in m.group(3).split(" + ")]
                    rows.append((int(m.group(1)), float(m.group(2)), coef))
                elif line.startswith("w"):
                    key, val = line.split("=")
                    weights[int(key.strip()[1:])] = float(val)
                else:
                    key, val = line.split()
                    head[key] = int(val)
        N, R, K = head["n_paths"], head["n_dates"], head["n_alpha"]
        if len(rows) != N * R:
            raise ValueError(f"expected {N * R} rows, found {len(rows)}")
        c = np.empty((N, R))
        b = np.empty((N, R, K))
        seen = np.zeros(N, dtype=int)
        for n, cv, coef in rows:
            j = seen[n]
            c[n, j] = cv
            b[n, j] = coef
            seen[n] += 1
        w = np.array([weights[n] for n in range(N)]) if weights else None
        return cls(c, b, w)


@dataclass(frozen=True, eq=False)
class LPSolution:
    alpha_hat: np.ndarray
    objective_value: float
    status: str
    iterations: int
    u: np.ndarray

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def build_lp(paths: PathBundle, basis: BasisMatrix, spec: RandomizerSpec,
             snell: SnellData | None = None, seed: int = 0) -> LPProblem:
    """``c = Z + eta`` with ``eta`` drawn once; ``b`` is the basis itself."""
    if paths.n_paths == 0:
        raise ValueError("LP needs at least one path")
    if basis.n_paths != paths.n_paths:
        raise ValueError("basis and path bundle disagree on the number of paths")
    eta = make_eta(spec, paths, snell, seed)
    return LPProblem(paths.rewards + eta, basis.values, paths.weights)


class _Simplex:
    def __init__(self, prob: LPProblem):
        self.c = prob.c
        self.b = prob.b
        self.w = prob.path_weights()
        self.N, self.R, self.K = prob.b.shape
        self.rows = np.arange(self.N)
        self.key = np.argmax(self.c, axis=1)  # first maximizer on ties
        self.bk = self.b[self.rows, self.key].copy()
        self.ck = self.c[self.rows, self.key].copy()
        self.gbar = self.w @ self.bk
        # rows relative to each path's key row; only a rekey changes them
        self.diff = self.b - self.bk[:, None, :]
        self.cdiff = self.c - self.ck[:, None]
        self.active = np.zeros((self.N, self.R), dtype=bool)
        self.active[self.rows, self.key] = True
        self.extra: list[tuple[int, int]] = []  # tight non-key rows (path, date)
        self.basic: list[int] = []  # basic alpha indices, |basic| == |extra|
        self.alpha = np.zeros(self.K)

    # -- state -----------------------------------------------------------
    def refresh(self):
        alpha = np.zeros(self.K)
        if self.extra:
            n = [t[0] for t in self.extra]
            j = [t[1] for t in self.extra]
            self.D = self.diff[n, j]
            self.B = self.D[:, self.basic]
            alpha[self.basic] = np.linalg.solve(self.B, self.cdiff[n, j])
            self.v = np.linalg.solve(self.B.T, self.gbar[self.basic])
        else:
            self.D = np.zeros((0, self.K))
            self.v = np.zeros(0)
        self.alpha = alpha
        self.u = self.ck - self.bk @ alpha
        # slack of (n, j): u_n - (c_nj - b_nj . alpha)
        self.slack = self.diff @ alpha - self.cdiff

    def objective(self) -> float:
        return float(self.w @ self.u)

    def add_extra(self, row, position=None):
        if position is None:
            self.extra.append(row)
        else:
            self.active[self.extra[position]] = False
            self.extra[position] = row
        self.active[row] = True

    # -- pricing ---------------------------------------------------------
    def candidates(self):
        """Improving moves as ``(order, rate, kind, index)``; ``rate < 0`` decreases the objective."""
        out = []
        for k in range(self.K):
            if k in self.basic:
                continue
            r = -self.gbar[k] + (self.v @ self.D[:, k] if self.extra else 0.0)
            if abs(r) > OPT_TOL:
                out.append((k, -abs(r), "enter", (k, -math.copysign(1.0, r))))
        per_path: dict[int, float] = {}
        for t, (n, j) in enumerate(self.extra):
            if self.v[t] > OPT_TOL:
                out.append((self.K + n * self.R + j, -self.v[t], "relax", t))
            per_path[n] = per_path.get(n, 0.0) + self.v[t]
        for n, s in per_path.items():
            rate = self.w[n] + s
            if rate < -OPT_TOL:
                out.append((self.K + n * self.R + int(self.key[n]), rate, "rekey", n))
        return out

    # -- moves -----------------------------------------------------------
    def direction(self, kind, index) -> np.ndarray:
        d = np.zeros(self.K)
        if kind == "enter":
            k, sgn = index
            d[k] = sgn
            if self.extra:
                d[self.basic] = -sgn * np.linalg.solve(self.B, self.D[:, k])
        else:  # relax extra row ``index``: its slack grows at unit rate
            rhs = np.zeros(len(self.extra))
            rhs[index] = 1.0
            d[self.basic] = np.linalg.solve(self.B, rhs)
        return d

    def ratio_test(self, d):
        rate = self.diff @ d  # (N, R): d slack / d step
        block = (rate < -PIVOT_TOL) & ~self.active
        if not block.any():
            return None, math.inf
        idx = np.flatnonzero(block)
        steps = np.maximum(self.slack.flat[idx], 0.0) / -rate.flat[idx]
        best = int(np.argmin(steps))  # lowest row index on ties
        return divmod(int(idx[best]), self.R), float(steps[best])

    def rekey(self, n: int) -> int:
        """Swap path ``n``'s key with its first extra row; return that extra's position."""
        t = next(i for i, (m, _) in enumerate(self.extra) if m == n)
        old = int(self.key[n])
        new = self.extra[t][1]
        self.key[n] = new
        self.extra[t] = (n, old)
        self.gbar += self.w[n] * (self.b[n, new] - self.bk[n])
        self.bk[n] = self.b[n, new]
        self.ck[n] = self.c[n, new]
        self.diff[n] = self.b[n] - self.bk[n]
        self.cdiff[n] = self.c[n] - self.ck[n]
        return t


def solve_lp(problem: LPProblem, max_iter: int | None = None) -> LPSolution:
    """Primal simplex from ``alpha = 0``, ``u_n = max_j c_{n,j}`` (feasible, no phase I).

    Dantzig pricing; after ``5 * rows`` iterations without objective progress the
    rule switches to Bland's (lowest index) to break cycling.
    """
    s = _Simplex(problem)
    rows = problem.n_rows
    if max_iter is None:
        max_iter = 50 * rows + 1000
    s.refresh()
    best = s.objective()
    stall = 0
    bland = False
    status = "iteration-limit"
    it = 0
    while it < max_iter:
        cands = s.candidates()
        if not cands:
            status = "optimal"
            break
        if bland:
            order, rate, kind, index = min(cands, key=lambda x: x[0])
        else:
            order, rate, kind, index = min(cands, key=lambda x: (x[1], x[0]))
        it += 1
        if kind == "rekey":
            index = s.rekey(index)
            s.refresh()
            kind = "relax"
        d = s.direction(kind, index)
        hit, step = s.ratio_test(d)
        if hit is None:
            status = "unbounded"
            break
        if kind == "enter":
            s.basic.append(index[0])
            s.add_extra(hit)
        else:
            s.add_extra(hit, index)
        s.refresh()
        obj = s.objective()
        if obj < best - 1e-12 * (1.0 + abs(best)):
            best, stall = obj, 0
        else:
            stall += 1
            if stall > 5 * rows:
                bland = True
    # rebuild from the final active set so incremental updates leave no drift
    s.gbar = s.w @ s.b[s.rows, s.key]
    s.bk = s.b[s.rows, s.key]
    s.ck = s.c[s.rows, s.key]
    s.refresh()
    if np.min(s.slack) < -FEAS_TOL * (1.0 + np.max(np.abs(s.u))):
        status = "numerical-failure"
    return LPSolution(s.alpha.copy(), math.fsum(s.w * s.u), status, it, s.u.copy())


def minimize(paths: PathBundle, basis: BasisMatrix, spec: RandomizerSpec, snell: SnellData | None = None,
             seed: int = 0, n_test: int | None = None, test_seed: int | None = None
             ) -> tuple[LPSolution, DualEstimate, DualEstimate | None]:
    """Solve on ``paths``, then evaluate ``alpha_hat`` in-sample (same ``eta``) and on a
    fresh bundle of ``n_test`` paths with the unrandomized martingale."""
    sol = solve_lp(build_lp(paths, basis, spec, snell, seed))
    eta = make_eta(spec, paths, snell, seed)
    m = basis.values @ sol.alpha_hat
    in_sample = DualEstimate.from_values(pathwise_max(paths.rewards, m, eta))
    test = None
    if n_test:
        if test_seed is None:
            test_seed = rng.derive_seed(seed, TEST_SEED_TAG)
        tpaths = simulate(paths.model, n_test, test_seed)
        tsnell = snell_for(tpaths) if basis.family.kind in ("doob_scalar", "msty", "custom") else None
        tbasis = build_basis(basis.family, tpaths, tsnell)
        test = estimate(tpaths, tbasis, sol.alpha_hat, NONE)
    return sol, in_sample, test
