"""Inner adversary: minimize a linear functional of the next-state law over an ambiguity set.

For a Wasserstein ball around ``q`` the problem is

    min_gamma  sum_k f(k) sum_j gamma[j, k]
    s.t.       sum_k gamma[j, k] = q[j],  sum_jk cost[j, k] gamma[j, k] <= radius,  gamma >= 0

Two backends solve it. ``"lp"`` hands the transportation LP to HiGHS.
``"greedy"`` uses the structure of the problem: with the single budget
constraint relaxed by a multiplier, every source sends its mass to the point
minimizing ``f(k) + eta * cost[j, k]``. As ``eta`` decreases the choice walks
down the lower convex hull of the points ``(cost[j, k], f(k))``, so the
optimum is a fractional knapsack over hull segments ordered by gain per unit
of transport cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .model import FiniteSet, Singleton, WassersteinBall, simplex_violation
from .transport import MARGINAL_TOL, _HIGHS, transport_constraints, w1_lp

MEMBERSHIP_TOL = 1e-9


class InnerSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class InnerSolution:
    value: float
    minimizer: np.ndarray
    budget: float = 0.0  # transport cost actually spent (mass x distance)


@dataclass(frozen=True, eq=False)
class SingletonSet:
    row: np.ndarray


@dataclass(frozen=True, eq=False)
class FiniteCandidates:
    rows: tuple


@dataclass(frozen=True, eq=False)
class W1Ball:
    center: np.ndarray
    radius: float
    cost: np.ndarray


def _check_f(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or not np.all(np.isfinite(f)):
        raise ValueError("objective must be a finite vector")
    return f


def worst_case_expectation(f, aset, backend: str = "greedy") -> InnerSolution:
    """Exact ``inf_P sum_k f(k) P(k)`` over the ambiguity instance ``aset``."""
    f = _check_f(f)
    if isinstance(aset, SingletonSet):
        row = np.asarray(aset.row, dtype=float)
        return InnerSolution(float(f @ row), row, 0.0)
    if isinstance(aset, FiniteCandidates):
        values = [float(f @ np.asarray(r, dtype=float)) for r in aset.rows]
        k = int(np.argmin(values))
        return InnerSolution(values[k], np.asarray(aset.rows[k], dtype=float), 0.0)
    if isinstance(aset, W1Ball):
        if not aset.radius >= 0:
            raise ValueError(f"radius must be >= 0, got {aset.radius}")
        q = np.asarray(aset.center, dtype=float)
        cost = np.asarray(aset.cost, dtype=float)
        if f.shape != q.shape or cost.shape != (q.size, q.size):
            raise ValueError("objective, center and cost matrix disagree on the support")
        if simplex_violation(q) > MEMBERSHIP_TOL:
            raise ValueError("ball center is not a probability vector")
        if backend == "greedy":
            return ball_greedy(f, q, cost, float(aset.radius))
        if backend == "lp":
            return ball_lp(f, q, cost, float(aset.radius))
        raise ValueError(f"unknown backend {backend!r}")
    raise TypeError(f"unsupported ambiguity instance {type(aset).__name__}")


def _hull(f, costs, start):
    """Lower-left convex hull of ``(costs[k], f[k])`` from ``start`` with strictly falling f.

    Collinear interior points are dropped, so mass heads straight for the
    lower-f end of a tie.
    """
    f0 = f[start]
    pts = sorted(
        (k for k in range(len(f)) if costs[k] > 0 and f[k] < f0),
        key=lambda k: (costs[k], f[k], k),
    )
    hull = [start]
    for k in pts:
        if f[k] >= f[hull[-1]]:
            continue
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # slope(a,b) >= slope(b,k)  <=>  b is not strictly below segment a-k
            lhs = (f[b] - f[a]) * (costs[k] - costs[b])
            rhs = (f[k] - f[b]) * (costs[b] - costs[a])
            if lhs >= rhs:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def ball_greedy(f, q, cost, radius) -> InnerSolution:
    n = len(f)
    gamma = np.zeros((n, n))
    segments = []
    for j in range(n):
        if q[j] <= 0:
            continue
        free = [k for k in range(n) if cost[j, k] <= 0]
        start = min(free, key=lambda k: (f[k], k))
        gamma[j, start] = q[j]
        hull = _hull(f, cost[j], start)
        for a, b in zip(hull, hull[1:]):
            dc = cost[j, b] - cost[j, a]
            ratio = (f[a] - f[b]) / dc
            # tie-break: highest-f source, then lowest-f target, then indices
            segments.append((-ratio, -f[j], f[b], j, b, a, dc))

    segments.sort()
    budget = radius
    for _, _, _, j, b, a, dc in segments:
        if budget <= 0:
            break
        mass = gamma[j, a]
        need = mass * dc
        moved = mass if need <= budget else budget / dc
        gamma[j, a] -= moved
        gamma[j, b] += moved
        budget -= min(need, budget)

    P = gamma.sum(axis=0)
    spent = float(np.sum(cost * gamma))
    return InnerSolution(float(f @ P), P, spent)


def ball_lp(f, q, cost, radius) -> InnerSolution:
    n = len(f)
    rows, _ = transport_constraints(n, n)
    c = np.tile(f, n)  # gamma[j, k] pays f[k]
    res = linprog(
        c,
        A_ub=cost.reshape(1, -1),
        b_ub=[radius],
        A_eq=rows,
        b_eq=q,
        bounds=(0, None),
        method="highs-ds",
        options=_HIGHS,
    )
    if res.status != 0:
        raise InnerSolverError(f"inner LP failed: {res.message}")
    gamma = np.maximum(res.x.reshape(n, n), 0.0)
    resid = np.max(np.abs(gamma.sum(1) - q))
    if resid > MARGINAL_TOL:
        raise InnerSolverError(f"inner LP marginal residual {resid:.3g}")
    P = gamma.sum(axis=0)
    return InnerSolution(float(f @ P), P, float(np.sum(cost * gamma)))


def ball_membership(P, center, radius, cost) -> bool:
    """True iff W1(P, center) <= radius + 1e-9."""
    d, _ = w1_lp(np.asarray(P, dtype=float), np.asarray(center, dtype=float), cost)
    return d <= radius + MEMBERSHIP_TOL


def contains(aset, P, tol: float = MEMBERSHIP_TOL) -> bool:
    """Membership test for any ambiguity instance."""
    P = np.asarray(P, dtype=float)
    if isinstance(aset, SingletonSet):
        return bool(np.max(np.abs(P - aset.row)) <= tol)
    if isinstance(aset, FiniteCandidates):
        return any(np.max(np.abs(P - np.asarray(r))) <= tol for r in aset.rows)
    if isinstance(aset, W1Ball):
        return ball_membership(P, aset.center, aset.radius, aset.cost)
    raise TypeError(f"unsupported ambiguity instance {type(aset).__name__}")


def instance(family, s: int, a: int, mu) -> object:
    """Concrete ambiguity set of a family at ``(s, a, mu)``."""
    if isinstance(family, Singleton):
        return SingletonSet(family.reference(s, a, mu))
    if isinstance(family, FiniteSet):
        return FiniteCandidates(tuple(family.members(s, a, mu)))
    if isinstance(family, WassersteinBall):
        return W1Ball(family.reference(s, a, mu), family.radius, family.cost)
    raise TypeError(f"unsupported ambiguity family {type(family).__name__}")
