"""The spanning statistic: kernels, z-grids, the two optimisation legs and their maximum.

For ``z <= 0`` the lower-tail leg is

    n1(z) = [min_K sum_t (z - k'Y_t)_+  -  min_L sum_t (z - l'Y_t)_+] / sqrt(T)

and for ``z > 0`` the upper-tail leg is

    n2(z) = [max_L sum_t max(l'Y_t, z)  -  max_K sum_t max(k'Y_t, z)] / sqrt(T).

The statistic is the largest leg value over the grid.  Face-level optima
are computed once per distinct face and shared between the two sets, which
makes ``xi_T(panel, L, L, grid)`` exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from msdspan.core import (
    PortfolioSet,
    PortfolioWeights,
    ReturnPanel,
    SpanningConfig,
    clean_weights,
)
from msdspan.lp import HingeFaceLP, solve_hinge_min
from msdspan.mip import solve_max_of_max

DEDUP_TOL = 1e-12


class GridError(ValueError):
    pass


def _values(panel) -> np.ndarray:
    return panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)


def _w(x) -> np.ndarray:
    return x.w if isinstance(x, PortfolioWeights) else np.asarray(x, dtype=float)


def hinge_kernel_K(z: float, lam, kap, y) -> float:
    """``(z - k'y)_+ - (z - l'y)_+``."""
    y = np.asarray(y, dtype=float)
    return max(z - float(_w(kap) @ y), 0.0) - max(z - float(_w(lam) @ y), 0.0)


def kernel_q2(z: float, lam, kap, y) -> float:
    """Upper-tail kernel ``(l'y)_+ - (k'y)_+ - [K(z) - K(0)]`` for ``z > 0``."""
    if z <= 0:
        raise ValueError("kernel_q2 is defined for z > 0")
    y = np.asarray(y, dtype=float)
    ly, ky = float(_w(lam) @ y), float(_w(kap) @ y)
    v = hinge_kernel_K(z, lam, kap, y) - hinge_kernel_K(0.0, lam, kap, y)
    return max(ly, 0.0) - max(ky, 0.0) - v


@dataclass(frozen=True, eq=False)
class ZGrid:
    """Finite grids for the lower tail (``z <= 0``) and the upper tail (``z > 0``)."""

    negatives: np.ndarray
    positives: np.ndarray

    def __post_init__(self):
        neg = np.array(self.negatives, dtype=float).ravel()
        pos = np.array(self.positives, dtype=float).ravel()
        if neg.size == 0 and pos.size == 0:
            raise GridError("z-grid is empty")
        for name, arr in (("negatives", neg), ("positives", pos)):
            if arr.size > 1 and np.any(np.diff(arr) <= 0):
                raise GridError(f"{name} must be strictly increasing")
        if neg.size and neg[-1] > 0:
            raise GridError("negative grid contains a positive value")
        if pos.size and pos[0] <= 0:
            raise GridError("positive grid must exclude zero and negatives")
        neg.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "negatives", neg)
        object.__setattr__(self, "positives", pos)

    @property
    def size(self) -> int:
        return self.negatives.size + self.positives.size


def _dedupe_sorted(x: np.ndarray) -> np.ndarray:
    x = np.sort(x)
    if x.size == 0:
        return x
    keep = np.ones(x.size, dtype=bool)
    keep[1:] = np.diff(x) > DEDUP_TOL
    return x[keep]


def _thin(x: np.ndarray, k: int) -> np.ndarray:
    if x.size <= k:
        return x
    idx = np.unique(np.round(np.linspace(0, x.size - 1, k)).astype(int))
    return x[idx]


def _arange_inclusive(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0:
        raise GridError("grid step must be positive")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    if count < 1:
        raise GridError(f"empty grid range [{lo}, {hi}]")
    return np.round(lo + step * np.arange(count), 12)


def build_z_grid(
    panel,
    sets: tuple[PortfolioSet, PortfolioSet],
    mode: str = "sample-values",
    fixed_grid=None,
    max_points: int | None = None,
    strict: bool = True,
) -> ZGrid:
    """Candidate z values.

    ``sample-values`` pools the returns of every vertex portfolio of L and K
    over the sample, removes duplicates and splits at zero (zero goes to
    the lower tail).  ``fixed-grid`` takes
    ``((neg_lo, neg_hi, step), (pos_lo, pos_hi, step))``.  With
    ``strict=False`` one empty side is tolerated (used for short windows).
    """
    if mode == "sample-values":
        Y = _values(panel)
        verts = np.vstack([s.used_vertices() for s in sets])
        pooled = _dedupe_sorted((Y @ verts.T).ravel())
        neg, pos = pooled[pooled <= 0], pooled[pooled > 0]
        if max_points is not None and neg.size + pos.size > max_points:
            k_neg = int(round(max_points * neg.size / (neg.size + pos.size)))
            k_neg = min(max(k_neg, 1 if neg.size else 0), max_points - (1 if pos.size else 0))
            neg, pos = _thin(neg, k_neg), _thin(pos, max_points - k_neg)
    elif mode == "fixed-grid":
        if fixed_grid is None:
            raise GridError("fixed-grid mode needs grid bounds")
        (nlo, nhi, nstep), (plo, phi, pstep) = fixed_grid
        neg = _arange_inclusive(nlo, nhi, nstep)
        pos = _arange_inclusive(plo, phi, pstep)
    else:
        raise GridError(f"unknown z-grid mode {mode!r}")
    if strict and (neg.size == 0 or pos.size == 0):
        side = "non-positive" if neg.size == 0 else "positive"
        raise GridError(f"no {side} sample values for the z-grid; use fixed-grid mode")
    return ZGrid(neg, pos)


def grid_for(panel, L: PortfolioSet, K: PortfolioSet, config: SpanningConfig, strict=True) -> ZGrid:
    return build_z_grid(
        panel, (L, K), config.z_grid_mode, config.fixed_grid, config.grid_max_points, strict=strict
    )


def n1(panel, L: PortfolioSet, K: PortfolioSet, z: float, tol: float = 1e-9):
    """Lower-tail leg at one ``z <= 0`` via two LP solves; returns ``(value, lambda_star)``."""
    if z > 0:
        raise ValueError("n1 requires z <= 0")
    Y = _values(panel)
    sol_k = solve_hinge_min(Y, K, z, tol)
    sol_l = solve_hinge_min(Y, L, z, tol)
    return (sol_k.value - sol_l.value) / math.sqrt(Y.shape[0]), sol_l.weights


def n2(panel, L: PortfolioSet, K: PortfolioSet, z: float, method: str = "bnb"):
    """Upper-tail leg at one ``z > 0`` via two max-of-max solves; returns ``(value, lambda_star)``."""
    if z <= 0:
        raise ValueError("n2 requires z > 0")
    Y = _values(panel)
    sol_l = solve_max_of_max(Y, L, z, method=method)
    sol_k = solve_max_of_max(Y, K, z, method=method)
    return (sol_l.value - sol_k.value) / math.sqrt(Y.shape[0]), sol_l.weights


class FaceTable:
    """Per-face optima over a z-grid, computed once per distinct face.

    Faces are keyed by their sorted vertex coordinates, so identical faces
    appearing in several portfolio sets share one computation.
    """

    def __init__(self, Y: np.ndarray, grid: ZGrid, tol: float = 1e-9, mip_method: str = "vertex"):
        self.Y = Y
        self.grid = grid
        self.tol = tol
        self.mip_method = mip_method
        self._hinge: dict = {}
        self._upper: dict = {}
        self._vertex: dict = {}

    def _vertex_tables(self, v: tuple):
        """Sorted returns with prefix sums and suffix sums of one vertex portfolio."""
        if v not in self._vertex:
            x = np.sort(self.Y @ np.array(v))
            prefix = np.concatenate([[0.0], np.cumsum(x)])
            suffix = np.concatenate([np.cumsum(x[::-1])[::-1], [0.0]])
            self._vertex[v] = (x, prefix, suffix)
        return self._vertex[v]

    def _vertex_hinge(self, v: tuple, z: np.ndarray) -> np.ndarray:
        # sum_t (z - x_t)_+ = k z - (x_1 + ... + x_k) with k = #{x_t < z}
        x, prefix, _ = self._vertex_tables(v)
        k = np.searchsorted(x, z, side="left")
        return np.maximum(k * z - prefix[k], 0.0)

    def _vertex_upper(self, v: tuple, z: np.ndarray) -> np.ndarray:
        # sum_t max(x_t, z) = k z + (x_k+1 + ... + x_T); exact k z when every x_t < z
        x, _, suffix = self._vertex_tables(v)
        k = np.searchsorted(x, z, side="left")
        return k * z + suffix[k]

    def hinge(self, key: tuple, V: np.ndarray):
        """Minimum hinge sum on the face at every negative grid point, with minimisers."""
        if key not in self._hinge:
            z = self.grid.negatives
            V = np.array(key)
            if V.shape[0] == 1:
                vals = self._vertex_hinge(key[0], z)
                lams = np.repeat(V, z.size, axis=0)
            else:
                solver = HingeFaceLP(self.Y @ V.T, tol=self.tol)
                vals = np.empty(z.size)
                lams = np.empty((z.size, V.shape[1]))
                for j, zj in enumerate(z):
                    val, u, _, status = solver.solve(zj)
                    if status != "optimal":
                        raise RuntimeError(f"hinge LP failed at z={zj}: {status}")
                    vals[j] = val
                    lams[j] = u @ V
            self._hinge[key] = (vals, lams)
        return self._hinge[key]

    def upper(self, key: tuple, V: np.ndarray):
        """Maximum of sum_t max(l'Y_t, z) on the face at every positive grid point."""
        if key not in self._upper:
            z = self.grid.positives
            if self.mip_method == "vertex" or V.shape[0] == 1:
                best_vals = np.full(z.size, -np.inf)
                best_idx = np.zeros(z.size, dtype=int)
                for i, v in enumerate(key):
                    vals = self._vertex_upper(v, z)
                    better = vals > best_vals
                    best_vals[better] = vals[better]
                    best_idx[better] = i
                # keys are sorted coordinates; map back to the caller's vertex rows
                verts = np.array(key)
                lams = verts[best_idx]
            else:
                pset = PortfolioSet(V, (tuple(range(V.shape[0])),))
                best_vals = np.empty(z.size)
                lams = np.empty((z.size, V.shape[1]))
                for j, zj in enumerate(z):
                    sol = solve_max_of_max(self.Y, pset, zj, method="bnb")
                    best_vals[j] = sol.value
                    lams[j] = sol.weights.w
            self._upper[key] = (best_vals, lams)
        return self._upper[key]

    def lower_envelope(self, pset: PortfolioSet):
        """Min over the set's faces of the hinge sums; lowest face index wins ties."""
        best, lam = None, None
        for key, k in zip(pset.face_keys(), range(len(pset.faces))):
            vals, lams = self.hinge(key, pset.face_vertices(k))
            if best is None:
                best, lam = vals.copy(), lams.copy()
            else:
                better = vals < best
                best[better] = vals[better]
                lam[better] = lams[better]
        return best, lam

    def upper_envelope(self, pset: PortfolioSet):
        best, lam = None, None
        for key, k in zip(pset.face_keys(), range(len(pset.faces))):
            vals, lams = self.upper(key, pset.face_vertices(k))
            if best is None:
                best, lam = vals.copy(), lams.copy()
            else:
                better = vals > best
                best[better] = vals[better]
                lam[better] = lams[better]
        return best, lam


@dataclass(frozen=True, eq=False)
class StatisticResult:
    xi: float
    best_i: int
    best_z: float
    optimal_lambda: PortfolioWeights
    # rows (i, z, unscaled leg value); divide by sqrt(T) for the legs
    per_z_values: np.ndarray = field(repr=False)
    T: int = 0


def _assemble(T: int, grid: ZGrid, lower, upper) -> StatisticResult:
    rows, lams = [], []
    if grid.negatives.size:
        (hk, _), (hl, lam_l) = lower
        rows.append(np.column_stack([np.ones(grid.negatives.size), grid.negatives, hk - hl]))
        lams.append(lam_l)
    if grid.positives.size:
        (sl, lam_l), (sk, _) = upper
        rows.append(np.column_stack([np.full(grid.positives.size, 2.0), grid.positives, sl - sk]))
        lams.append(lam_l)
    table = np.vstack(rows)
    lam_all = np.vstack(lams)
    # rows are ordered by i then ascending z, so argmax applies the tie rule
    j = int(np.argmax(table[:, 2]))
    return StatisticResult(
        xi=float(table[j, 2] / math.sqrt(T)),
        best_i=int(table[j, 0]),
        best_z=float(table[j, 1]),
        optimal_lambda=clean_weights(lam_all[j]),
        per_z_values=table,
        T=T,
    )


def xi_T(
    panel,
    L: PortfolioSet,
    K: PortfolioSet,
    grid: ZGrid,
    tol: float = 1e-9,
    mip_method: str = "vertex",
    table: FaceTable | None = None,
) -> StatisticResult:
    """Spanning statistic on the grid, with the maximising leg, z and portfolio.

    Ties go to the lower-tail leg, then to the smaller z.
    """
    Y = _values(panel)
    if Y.shape[1] != L.n or Y.shape[1] != K.n:
        raise ValueError("panel and portfolio sets disagree on the number of assets")
    ft = table if table is not None else FaceTable(Y, grid, tol, mip_method)
    lower = (ft.lower_envelope(K), ft.lower_envelope(L)) if grid.negatives.size else None
    upper = (ft.upper_envelope(L), ft.upper_envelope(K)) if grid.positives.size else None
    return _assemble(Y.shape[0], grid, lower, upper)


def xi_T_many(panel, L: PortfolioSet, Ks: list[PortfolioSet], grid: ZGrid, tol=1e-9, mip_method="vertex"):
    """Statistics for several candidate spanning sets on one sample, sharing face work."""
    Y = _values(panel)
    ft = FaceTable(Y, grid, tol, mip_method)
    return [xi_T(Y, L, K, grid, tol, mip_method, table=ft) for K in Ks]
