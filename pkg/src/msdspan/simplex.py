"""Dense-tableau primal simplex for bounded-variable linear programs.

Solves ``max c'x  s.t.  A x = b,  lo <= x <= hi`` with finite lower bounds
and possibly infinite upper bounds.  Nonbasic variables sit at one of their
bounds, so box constraints never become rows.  Entering and leaving
variables follow Bland's smallest-index rule, which rules out cycling.

The solver object keeps its basis between calls to :meth:`optimize`, so a
sequence of LPs that share the feasible region but differ in the objective
can be warm-started from the previous optimal basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

_PIVOT_TOL = 1e-11


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    value: float
    duals: np.ndarray
    iterations: int


class BoundedSimplex:
    """Primal simplex over ``A x = b, lo <= x <= hi``.

    Parameters
    ----------
    A, b : constraint matrix (m x N) and right-hand side (m,)
    lo, hi : variable bounds; ``lo`` finite, ``hi`` may contain ``inf``
    basis : optional list of m column indices whose columns of ``A`` form
        an identity matrix and whose implied values are within bounds.  When
        omitted, a phase-I problem with artificial variables finds a start.
    at_upper : optional boolean mask of nonbasic variables placed at ``hi``.
    """

    def __init__(self, A, b, lo, hi, basis=None, at_upper=None, tol=1e-9, max_iter=100_000):
        A = np.array(A, dtype=float)
        b = np.array(b, dtype=float)
        self.m, self.n_orig = A.shape
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0
        lo = np.array(lo, dtype=float)
        hi = np.array(hi, dtype=float)
        at_upper = np.zeros(self.n_orig, dtype=bool) if at_upper is None else np.array(at_upper, bool)

        if basis is not None:
            self.tab = A
            self.Binv = np.eye(self.m)
            self.lo, self.hi = lo, hi
            self.basis = np.array(basis, dtype=int)
            self.at_upper = at_upper
            self._init_state(b)
            self.feasible = True
            return

        # phase I: one artificial per row absorbs the residual at the initial bounds
        x0 = np.where(at_upper, hi, lo)
        resid = b - A @ x0
        sign = np.where(resid >= 0, 1.0, -1.0)
        self.tab = np.hstack([A * sign[:, None], np.eye(self.m)])
        self.Binv = np.diag(sign)
        self.lo = np.concatenate([lo, np.zeros(self.m)])
        self.hi = np.concatenate([hi, np.full(self.m, np.inf)])
        self.basis = np.arange(self.n_orig, self.n_orig + self.m)
        self.at_upper = np.concatenate([at_upper, np.zeros(self.m, dtype=bool)])
        self._init_state(b)
        c1 = np.concatenate([np.zeros(self.n_orig), -np.ones(self.m)])
        status = self._run(c1)
        art_total = self.xb[self.basis >= self.n_orig].sum()
        self.feasible = status == OPTIMAL and art_total <= 1e-8 * max(1.0, np.abs(b).max())
        if status == NUMERICAL_FAILURE:
            self.feasible = False
        # artificials are pinned at zero from here on
        self.hi[self.n_orig:] = 0.0

    def _init_state(self, b):
        N = self.tab.shape[1]
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[self.basis] = True
        self.at_upper[self.basis] = False
        xn = np.where(self.at_upper, self.hi, self.lo)
        xn[self.basis] = 0.0
        # with B^-1 already applied to tab, basic values are B^-1 b - tab_N x_N
        self.xb = self.Binv @ b - self.tab @ xn

    def _nonbasic_values(self) -> np.ndarray:
        return np.where(self.at_upper, self.hi, self.lo)

    def _run(self, c: np.ndarray) -> str:
        tol = self.tol
        tab, basis = self.tab, self.basis
        d = c - c[basis] @ tab
        movable = self.hi > self.lo
        while True:
            if self.iterations >= self.max_iter:
                return NUMERICAL_FAILURE
            eligible = ~self.is_basic & (
                (~self.at_upper & (d > tol) & movable) | (self.at_upper & (d < -tol))
            )
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                return OPTIMAL
            j = cand[0]
            delta = -1.0 if self.at_upper[j] else 1.0
            alpha = delta * tab[:, j]

            theta = self.hi[j] - self.lo[j]
            row = -1
            lo_b, hi_b = self.lo[basis], self.hi[basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.full(self.m, np.inf)
                dec = alpha > _PIVOT_TOL
                inc = alpha < -_PIVOT_TOL
                lim[dec] = (self.xb[dec] - lo_b[dec]) / alpha[dec]
                lim[inc] = (hi_b[inc] - self.xb[inc]) / (-alpha[inc])
            lim = np.maximum(lim, 0.0)
            best = lim.min() if self.m else np.inf
            if best < theta or (np.isinf(theta) and np.isfinite(best)):
                ties = np.flatnonzero(lim <= best + 1e-12)
                row = ties[np.argmin(basis[ties])]
                theta = lim[row]
            if np.isinf(theta):
                return UNBOUNDED

            self.iterations += 1
            self.xb -= theta * alpha
            if row < 0:
                self.at_upper[j] = not self.at_upper[j]
                continue

            leaving = basis[row]
            self.at_upper[leaving] = alpha[row] < 0
            entering_value = (self.hi[j] if self.at_upper[j] else self.lo[j]) + delta * theta
            self.at_upper[j] = False
            piv = tab[row, j]
            tab[row] /= piv
            self.Binv[row] /= piv
            col = tab[:, j].copy()
            col[row] = 0.0
            tab -= np.outer(col, tab[row])
            self.Binv -= np.outer(col, self.Binv[row])
            d -= d[j] * tab[row]
            self.xb[row] = entering_value
            basis[row] = j
            self.is_basic[leaving] = False
            self.is_basic[j] = True

    def optimize(self, c) -> LPResult:
        """Maximise ``c'x`` from the current basis."""
        c = np.asarray(c, dtype=float)
        if c.size == self.n_orig and self.tab.shape[1] != self.n_orig:
            c = np.concatenate([c, np.zeros(self.tab.shape[1] - self.n_orig)])
        if not self.feasible:
            return LPResult(INFEASIBLE, np.full(self.n_orig, np.nan), np.nan, np.full(self.m, np.nan), self.iterations)
        status = self._run(c)
        x = self._nonbasic_values()
        x[self.basis] = self.xb
        duals = c[self.basis] @ self.Binv
        return LPResult(status, x[: self.n_orig], float(c @ x), duals, self.iterations)


def linprog_max(c, A_eq, b_eq, lo, hi, tol=1e-9, max_iter=100_000) -> LPResult:
    """One-shot convenience wrapper: phase I then phase II."""
    solver = BoundedSimplex(A_eq, b_eq, lo, hi, tol=tol, max_iter=max_iter)
    return solver.optimize(c)
