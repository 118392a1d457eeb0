"""Maximisation of  sum_t max(l'Y_t, r)  over a portfolio complex.

The objective is rewritten with binary indicators ``b_t`` (1 when the
portfolio return beats the floor ``r``) and linearised with big-M
constraints.  Per face, with ``u`` the barycentric weights and
``s_t = X_t - r >= 0``::

    max  sum_t s_t - eps * sum_t b_t
    s.t. s_t <= M+_t b_t
         s_t <= u'R_t - r + M-_t (1 - b_t)
         u'R_t - r <= M+_t b_t              (the indicator may be 0 only if l'Y_t <= r)
         1'u = 1,  u >= 0,  b_t in {0, 1}

and the program is solved by best-bound branch-and-bound over ``b`` with
LP relaxations from :mod:`msdspan.simplex`.

Because the objective is convex in the portfolio, its maximum over each
face is attained at a vertex; ``method="vertex"`` uses that directly and
serves as the fast path for large samples.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from msdspan.core import PortfolioSet, PortfolioWeights, ReturnPanel, clean_weights
from msdspan.simplex import OPTIMAL, BoundedSimplex

DEFAULT_NODE_LIMIT = 1_000_000
TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MipSolution:
    value: float
    weights: PortfolioWeights
    indicators: np.ndarray
    nodes_explored: int
    status: str


def max_of_max_objective(returns: np.ndarray, r: float) -> float:
    return float(np.maximum(returns, r).sum())


def _big_m(R: np.ndarray, r: float, big_m: str) -> tuple[np.ndarray, np.ndarray]:
    T = R.shape[0]
    if big_m == "uniform":
        M = abs(r) + np.abs(R).max() + 1.0
        return np.full(T, M), np.full(T, M)
    if big_m == "per_row":
        return np.maximum(R.max(axis=1) - r, 0.0), np.maximum(r - R.min(axis=1), 0.0)
    raise ValueError(f"unknown big-M policy {big_m!r}")


class _FaceRelaxation:
    """LP relaxation of the big-M program on one face; rebuilt per node."""

    def __init__(self, R: np.ndarray, r: float, big_m: str, eps: float):
        T, m = R.shape
        self.T, self.m, self.r = T, m, r
        Mp, Mm = _big_m(R, r, big_m)
        self.Mp, self.Mm = Mp, Mm
        nvar = m + 2 * T + 3 * T
        A = np.zeros((1 + 3 * T, nvar))
        b = np.zeros(1 + 3 * T)
        iu = np.arange(m)
        i_s = m + np.arange(T)
        i_b = m + T + np.arange(T)
        i_sl = m + 2 * T + np.arange(3 * T)
        rows1 = 1 + np.arange(T)
        rows2 = 1 + T + np.arange(T)
        rows3 = 1 + 2 * T + np.arange(T)
        A[0, iu] = 1.0
        b[0] = 1.0
        A[rows1, i_s] = 1.0
        A[rows1, i_b] = -Mp
        A[rows2, i_s] = 1.0
        A[np.ix_(rows2, iu)] = -R
        A[rows2, i_b] = Mm
        b[rows2] = Mm - r
        A[np.ix_(rows3, iu)] = R
        A[rows3, i_b] = -Mp
        b[rows3] = r
        A[np.arange(1, 1 + 3 * T), i_sl] = 1.0
        self.A, self.b = A, b
        self.i_b, self.iu = i_b, iu
        self.c = np.zeros(nvar)
        self.c[i_s] = 1.0
        self.c[i_b] = -eps
        self.lo = np.zeros(nvar)
        self.hi = np.full(nvar, np.inf)
        self.hi[i_b] = 1.0

    def presolve_fixings(self) -> dict[int, int]:
        """Rows whose indicator is decided by the face alone."""
        fix = {}
        for t in range(self.T):
            if self.Mp[t] <= 0.0:
                fix[t] = 0
            elif self.Mm[t] <= 0.0:
                fix[t] = 1
        return fix

    def solve(self, fixings: dict[int, int]):
        lo, hi = self.lo.copy(), self.hi.copy()
        for t, v in fixings.items():
            lo[self.i_b[t]] = hi[self.i_b[t]] = float(v)
        solver = BoundedSimplex(self.A, self.b, lo, hi)
        res = solver.optimize(self.c)
        if res.status != OPTIMAL:
            return None
        u = np.clip(res.x[self.iu], 0.0, None)
        return res.value + self.T * self.r, u / u.sum(), res.x[self.i_b]


def _vertex_best(Y: np.ndarray, pset: PortfolioSet, r: float):
    best = None
    for k, face in enumerate(pset.faces):
        for i in face:
            val = max_of_max_objective(Y @ pset.vertices[i], r)
            if best is None or val > best[0]:
                best = (val, pset.vertices[i].copy())
    return best


def solve_max_of_max(
    panel: ReturnPanel | np.ndarray,
    pset: PortfolioSet,
    r: float,
    method: str = "bnb",
    node_limit: int = DEFAULT_NODE_LIMIT,
    big_m: str = "per_row",
    eps: float = 0.0,
) -> MipSolution:
    """Exact ``max over the complex of sum_t max(l'Y_t, r)``.

    Parameters
    ----------
    method : {"bnb", "vertex"}
        Branch-and-bound on the big-M program, or enumeration of vertices.
    big_m : {"per_row", "uniform"}
        ``uniform`` uses one constant ``|r| + max|v'Y_t| + 1`` per face;
        ``per_row`` uses the tightest valid constant for each period.
    eps : float
        Optional penalty per active indicator; breaks ties toward fewer
        active periods without changing the reported objective.
    """
    Y = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)
    if Y.shape[1] != pset.n:
        raise ValueError(f"panel has n={Y.shape[1]} assets, portfolio set has n={pset.n}")
    inc_val, inc_lam = _vertex_best(Y, pset, r)
    nodes = 0
    status = OPTIMAL

    if method == "bnb":
        counter = itertools.count()
        for k in range(len(pset.faces)):
            V = pset.face_vertices(k)
            if V.shape[0] == 1:
                continue  # a vertex, already scored
            relax = _FaceRelaxation(Y @ V.T, r, big_m, eps)
            heap = [(-np.inf, next(counter), tuple(sorted(relax.presolve_fixings().items())))]
            while heap:
                neg_bound, _, fixed = heapq.heappop(heap)
                if -neg_bound <= inc_val + TIE_TOL:
                    continue
                if nodes >= node_limit:
                    status = "node-limit"
                    break
                nodes += 1
                fixings = dict(fixed)
                sol = relax.solve(fixings)
                if sol is None:
                    continue
                bound, u, bvals = sol
                if bound <= inc_val + TIE_TOL:
                    continue
                frac = np.abs(bvals - np.round(bvals))
                free = [t for t in range(relax.T) if t not in fixings and frac[t] > 1e-9]
                lam = u @ V
                val = max_of_max_objective(Y @ lam, r)
                if val > inc_val + 1e-12:
                    inc_val, inc_lam = val, lam
                if not free:
                    continue
                # most fractional indicator, lowest period on ties
                t = min(free, key=lambda t: (-frac[t], t))
                for v in (0, 1):
                    child = tuple(sorted({**fixings, t: v}.items()))
                    heapq.heappush(heap, (-bound, next(counter), child))
            if status != OPTIMAL:
                break
    elif method != "vertex":
        raise ValueError(f"unknown method {method!r}")

    weights = clean_weights(inc_lam)
    ret = Y @ weights.w
    indicators = (ret > r).astype(int)
    return MipSolution(max_of_max_objective(ret, r), weights, indicators, nodes, status)
