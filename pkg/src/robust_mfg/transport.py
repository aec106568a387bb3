"""Exact 1-Wasserstein distances on finite metric spaces."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

MARGINAL_TOL = 1e-9

_HIGHS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class TransportError(RuntimeError):
    pass


def w1_1d(p, q, coords) -> float:
    """W1 on a sorted 1D support via the CDF formula."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    x = np.asarray(coords, dtype=float).ravel()
    if p.shape != q.shape or p.shape[-1] != x.size:
        raise ValueError("distributions and coordinates must share one support")
    gaps = np.diff(x)
    if np.any(gaps <= 0):
        raise ValueError("coordinates must be strictly increasing")
    cdf_gap = np.abs(np.cumsum(p - q, axis=-1)[..., :-1])
    return cdf_gap @ gaps


def transport_constraints(n: int, m: int):
    """Equality rows for the marginals of an ``n x m`` coupling (flattened row-major)."""
    rows = np.kron(np.eye(n), np.ones((1, m)))
    cols = np.kron(np.ones((1, n)), np.eye(m))
    return rows, cols


def w1_lp(p, q, cost) -> tuple[float, np.ndarray]:
    """Optimal transport value and coupling by linear programming.

    Raises TransportError if the returned coupling misses a marginal by more
    than 1e-9.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if p.shape != (n,) or q.shape != (m,):
        raise ValueError("distribution supports do not match the cost matrix")
    rows, cols = transport_constraints(n, m)
    # one marginal constraint is redundant; drop the last column constraint
    A_eq = np.vstack([rows, cols[:-1]])
    b_eq = np.concatenate([p, q[:-1]])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds", options=_HIGHS)
    if res.status != 0:
        raise TransportError(f"transport LP failed: {res.message}")
    gamma = np.maximum(res.x.reshape(n, m), 0.0)
    resid = max(np.max(np.abs(gamma.sum(1) - p)), np.max(np.abs(gamma.sum(0) - q)))
    if resid > MARGINAL_TOL:
        raise TransportError(f"coupling marginal residual {resid:.3g} exceeds {MARGINAL_TOL}")
    return float(np.sum(cost * gamma)), gamma


def w1(p, q, cost, coords=None) -> float:
    """W1 value, using the 1D formula when sorted 1D coordinates are given."""
    if coords is not None:
        x = np.asarray(coords, dtype=float).ravel()
        if x.size == len(p) and np.all(np.diff(x) > 0):
            return float(w1_1d(p, q, x))
    return w1_lp(p, q, cost)[0]
