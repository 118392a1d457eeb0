"""Exact minimisation of the hinge sum  sum_t (r - k'Y_t)_+  over a portfolio complex.

On a face with vertex matrix V (m x n) the portfolio is ``k = V'u`` with
``u`` in the unit simplex, and the problem

    min  sum_t W_t   s.t.  W_t >= r - u'R_t,  W_t >= 0,  u >= 0,  1'u = 1

(``R_t = V Y_t`` are the vertex-portfolio returns) is an LP.  We run the
simplex method on its dual

    max  r * sum_t p_t + mu   s.t.  sum_t p_t R_tj + mu <= 0  (j = 1..m),
                                     0 <= p_t <= 1,  mu free,

which has only m rows.  The optimal ``u`` is read off the dual prices of
those rows.  The feasible region does not depend on ``r``, so a face solver
can sweep an increasing sequence of levels with warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msdspan.core import PortfolioSet, PortfolioWeights, ReturnPanel, clean_weights
from msdspan.simplex import NUMERICAL_FAILURE, OPTIMAL, BoundedSimplex

DEFAULT_LP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LpSolution:
    value: float
    weights: PortfolioWeights | None
    face_index: int
    iterations: int
    status: str


class HingeFaceLP:
    """Warm-startable hinge minimiser on one face.

    Parameters
    ----------
    R : ndarray, shape (T, m)
        Returns of the face's vertex portfolios.
    """

    def __init__(self, R: np.ndarray, tol: float = DEFAULT_LP_TOL, max_iter: int = 100_000):
        R = np.asarray(R, dtype=float)
        self.R = R
        T, m = R.shape
        self.T, self.m = T, m
        if m == 1:
            self._solver = None
            return
        A = np.hstack([R.T, np.ones((m, 1)), -np.ones((m, 1)), np.eye(m)])
        N = A.shape[1]
        lo = np.zeros(N)
        hi = np.full(N, np.inf)
        hi[:T] = 1.0
        basis = np.arange(T + 2, T + 2 + m)
        self._solver = BoundedSimplex(A, np.zeros(m), lo, hi, basis=basis, tol=tol, max_iter=max_iter)
        self._c = np.zeros(N)
        self._c[T] = 1.0
        self._c[T + 1] = -1.0

    def solve(self, r: float) -> tuple[float, np.ndarray, int, str]:
        """Return ``(value, u, iterations, status)`` at level ``r``."""
        if self._solver is None:
            return float(np.maximum(r - self.R[:, 0], 0.0).sum()), np.ones(1), 0, OPTIMAL
        before = self._solver.iterations
        self._c[: self.T] = r
        res = self._solver.optimize(self._c)
        its = self._solver.iterations - before
        if res.status != OPTIMAL:
            return np.nan, np.full(self.m, np.nan), its, NUMERICAL_FAILURE
        u = np.clip(res.duals, 0.0, None)
        u /= u.sum()
        return max(res.value, 0.0), u, its, OPTIMAL


def face_returns(Y: np.ndarray, pset: PortfolioSet, k: int) -> np.ndarray:
    return Y @ pset.face_vertices(k).T


def solve_hinge_min(
    panel: ReturnPanel | np.ndarray, pset: PortfolioSet, r: float, tol: float = DEFAULT_LP_TOL
) -> LpSolution:
    """Minimise ``sum_t (r - k'Y_t)_+`` over the complex; best face wins, lowest index on ties."""
    Y = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)
    if Y.shape[1] != pset.n:
        raise ValueError(f"panel has n={Y.shape[1]} assets, portfolio set has n={pset.n}")
    best = None
    total_its = 0
    for k in range(len(pset.faces)):
        value, u, its, status = HingeFaceLP(face_returns(Y, pset, k), tol=tol).solve(r)
        total_its += its
        if status != OPTIMAL:
            return LpSolution(np.nan, None, k, total_its, NUMERICAL_FAILURE)
        if best is None or value < best[0]:
            best = (value, u, k)
    value, u, k = best
    weights = clean_weights(u @ pset.face_vertices(k))
    return LpSolution(float(value), weights, k, total_its, OPTIMAL)
