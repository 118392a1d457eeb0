"""Effective extreme points, adjoint sets and the M-character of a portfolio complex.

The character of N relative to M bounds the probability that a random
linear objective has the same maximum over M and over N.  It restricts the
significance levels for which subsampling critical values are asymptotically
exact: the test needs ``alpha < 1 - ch``.

Distances are compared with a relative tolerance, since the definitions
count exact equalities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from msdspan._projection import project_onto_hull
from msdspan.core import MEMBERSHIP_TOL, PortfolioSet, membership_residual

DEFAULT_TIE_TOL = 1e-9


class CharacterError(ValueError):
    pass


def project_to_complex(pset: PortfolioSet, point) -> tuple[float, np.ndarray]:
    """Nearest point of the complex to ``point`` (exact projection onto each face)."""
    point = np.asarray(point, dtype=float)
    if point.shape != (pset.n,):
        raise ValueError("dimension mismatch between point and portfolio set")
    best = None
    for k in range(len(pset.faces)):
        dist, nearest, _ = project_onto_hull(pset.face_vertices(k), point)
        if best is None or dist < best[0]:
            best = (dist, nearest)
    return best


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class EffectivePoint:
    vertex: tuple[float, ...]
    adjoint: tuple[int, ...]
    """Indices s of the unit vectors e_s in the adjoint set."""
    counts: tuple[int, ...]
    """Tie counts, aligned with ``adjoint``."""


@dataclass(frozen=True)
class CharacterReport:
    n: int
    effective_points: tuple[EffectivePoint, ...]
    character_exact: Fraction
    nested: bool
    near_ties: int

    @property
    def character(self) -> float:
        return float(self.character_exact)

    @property
    def alpha_bound(self) -> float | None:
        """``1 - ch`` when that is a usable bound."""
        return float(1 - self.character_exact) if self.character_exact <= 1 else None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "character": self.character,
            "character_fraction": str(self.character_exact),
            "alpha_bound": self.alpha_bound,
            "effective_assumption_holds": self.nested,
            "near_ties": self.near_ties,
            "effective_points": [
                {"vertex": list(p.vertex), "adjoint": list(p.adjoint), "counts": list(p.counts)}
                for p in self.effective_points
            ],
        }


def _check_inputs(M: PortfolioSet, N: PortfolioSet) -> None:
    if M.n != N.n:
        raise ValueError(f"dimension mismatch: M has n={M.n}, N has n={N.n}")
    for v in N.used_vertices():
        if membership_residual(M, v) > MEMBERSHIP_TOL:
            raise CharacterError(f"N is not contained in M: vertex {v.tolist()} lies outside M")


def _adjoints(M: PortfolioSet, N: PortfolioSet, tol: float):
    """Effective vertices of N with their adjoint unit vectors and distances."""
    n = M.n
    eye = np.eye(n)
    d_M = np.array([project_to_complex(M, eye[s])[0] for s in range(n)])
    out = []
    seen = set()
    for v in N.used_vertices():
        key = tuple(float(x) for x in v)
        if key in seen:
            continue
        seen.add(key)
        dists = np.linalg.norm(v - eye, axis=1)
        adj = [s for s in range(n) if dists[s] <= d_M[s] + tol * max(1.0, d_M[s])]
        if adj:
            out.append((key, adj, dists))
    return out, d_M


def _near_ties(M: PortfolioSet, N: PortfolioSet, d_M: np.ndarray, tol: float) -> int:
    """Vertex/unit-vector pairs whose distance misses the nearest distance by 1 to 10 tolerances."""
    eye = np.eye(M.n)
    verts = np.unique(np.vstack([M.used_vertices(), N.used_vertices()]), axis=0)
    count = 0
    for s in range(M.n):
        d = np.linalg.norm(verts - eye[s], axis=1)
        count += sum(not _close(x, d_M[s], tol) and _close(x, d_M[s], 10 * tol) for x in d)
    return int(count)


def effective_extreme_points(M: PortfolioSet, N: PortfolioSet, tie_tol: float = DEFAULT_TIE_TOL) -> list[np.ndarray]:
    """Vertices of N that are nearest points of M to some unit vector."""
    _check_inputs(M, N)
    pts, _ = _adjoints(M, N, tie_tol)
    return [np.array(key) for key, _, _ in pts]


def character(M: PortfolioSet, N: PortfolioSet, tie_tol: float = DEFAULT_TIE_TOL) -> CharacterReport:
    """M-character of N, accumulated in exact rational arithmetic.

    For an effective vertex ``l`` and adjoint unit vector ``s``, the tie
    count is the number of effective extreme points of M (plus ``l``) at
    the same distance from ``s`` as ``l``.
    """
    _check_inputs(M, N)
    n = M.n
    eff_N, d_M = _adjoints(M, N, tie_tol)
    eff_M, _ = _adjoints(M, M, tie_tol)
    pool = {key: dists for key, _, dists in eff_M}
    for key, _, dists in eff_N:
        pool.setdefault(key, dists)
    nested = all(key in {k for k, _, _ in eff_M} for key, _, _ in eff_N)

    total = Fraction(0)
    points = []
    for key, adj, dists in eff_N:
        counts = []
        for s in adj:
            ties = int(sum(_close(other[s], dists[s], tie_tol) for other in pool.values()))
            counts.append(ties)
            total += Fraction(math.factorial(n - ties), math.factorial(n))
        points.append(EffectivePoint(key, tuple(adj), tuple(counts)))
    near = _near_ties(M, N, d_M, tie_tol)
    if near:
        warnings.warn(
            f"{near} vertex distance(s) within {10 * tie_tol:g} of a tie but outside the tie tolerance",
            stacklevel=2,
        )
    return CharacterReport(n, tuple(points), total, nested, near)


def validate_alpha(alpha: float, report: CharacterReport) -> str:
    """``"ok"`` when ``alpha < 1 - ch``, else ``"violates-bound"`` (with a warning)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if Fraction(alpha) < 1 - report.character_exact:
        return "ok"
    warnings.warn(
        f"alpha={alpha} is not below 1 - ch = {float(1 - report.character_exact):.6g}; "
        "subsampling critical values may be conservative",
        stacklevel=2,
    )
    return "violates-bound"
