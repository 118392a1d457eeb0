"""Euclidean projection onto the convex hull of a few affinely independent points."""

from __future__ import annotations

import numpy as np


def project_onto_hull(
    vertices: np.ndarray, point: np.ndarray, tol: float = 1e-12
) -> tuple[float, np.ndarray, np.ndarray]:
    """Project ``point`` onto ``conv(vertices)`` by a primal active-set method.

    Solves ``min ||V'u - p||^2`` subject to ``u >= 0`` and ``sum(u) = 1``.
    The vertices must be affinely independent so that every equality
    subproblem on the free set has a unique solution.

    Parameters
    ----------
    vertices : ndarray, shape (m, n)
        Rows are the hull's vertices.
    point : ndarray, shape (n,)

    Returns
    -------
    distance : float
    nearest : ndarray, shape (n,)
    barycentric : ndarray, shape (m,)
        Convex weights of ``nearest`` with respect to ``vertices``.
    """
    V = np.asarray(vertices, dtype=float)
    p = np.asarray(point, dtype=float)
    m = V.shape[0]
    if m == 1:
        nearest = V[0].copy()
        return float(np.linalg.norm(nearest - p)), nearest, np.ones(1)

    G = V @ V.T
    c = V @ p
    start = int(np.argmin(np.linalg.norm(V - p, axis=1)))
    u = np.zeros(m)
    u[start] = 1.0
    free = np.zeros(m, dtype=bool)
    free[start] = True

    for _ in range(50 * m + 50):
        idx = np.flatnonzero(free)
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = G[np.ix_(idx, idx)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.append(c[idx], 1.0)
        sol = np.linalg.solve(kkt, rhs)
        target = np.zeros(m)
        target[idx] = sol[:k]
        nu = sol[k]

        if np.all(target[idx] >= -tol):
            u = np.clip(target, 0.0, None)
            u /= u.sum()
            mult = G @ u - c + nu
            bound = np.flatnonzero(~free)
            if bound.size == 0 or mult[bound].min() >= -tol:
                break
            free[bound[np.argmin(mult[bound])]] = True
            continue

        # step toward the subproblem optimum until a free weight hits zero
        shrinking = idx[target[idx] < u[idx]]
        ratios = u[shrinking] / (u[shrinking] - target[shrinking])
        j = int(np.argmin(ratios))
        step = min(1.0, ratios[j])
        u = u + step * (target - u)
        u[shrinking[j]] = 0.0
        u = np.clip(u, 0.0, None)
        u /= u.sum()
        free[shrinking[j]] = False
    else:  # pragma: no cover - finite termination for affinely independent input
        raise RuntimeError("active-set projection failed to converge")

    nearest = u @ V
    return float(np.linalg.norm(nearest - p)), nearest, u
