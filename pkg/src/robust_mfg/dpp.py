"""Robust backward induction for a fixed measure flow, and equilibrium checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .inner import W1Ball, InnerSolverError, contains, instance, worst_case_expectation
from .model import GameSpec, check_flow, check_kernel, check_policy
from .transport import _HIGHS, transport_constraints, w1_lp

ARGMAX_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SolveResult:
    Jhat: np.ndarray  # (T, nS, nA)
    Vhat: np.ndarray  # (T, nS); the terminal row V_T = 0 is implicit
    pStar: np.ndarray  # (T, nS, nA, nS)
    piStar: np.ndarray  # (T, nS, nA)
    Vflow: float
    budget: np.ndarray  # (T, nS, nA) transport cost spent by the adversary

    def continuation(self, t: int) -> np.ndarray:
        """V_{t} with the terminal convention V_T = 0."""
        if t >= self.Vhat.shape[0]:
            return np.zeros(self.Vhat.shape[1])
        return self.Vhat[t]

    def to_dict(self, spec: GameSpec) -> dict:
        S, A = spec.states.labels, spec.actions.labels
        T = spec.horizon
        return {
            "Vflow": self.Vflow,
            "Jhat": {str(t): {str(s): {str(a): self.Jhat[t, i, j] for j, a in enumerate(A)} for i, s in enumerate(S)} for t in range(T)},
            "Vhat": {str(t): {str(s): self.Vhat[t, i] for i, s in enumerate(S)} for t in range(T)},
            "pStar": _kernel_dict(self.pStar, S, A),
            "piStar": _policy_dict(self.piStar, S, A),
        }


def _kernel_dict(p, S, A):
    return {
        str(t): {str(s): {str(a): [float(x) for x in p[t, i, j]] for j, a in enumerate(A)} for i, s in enumerate(S)}
        for t in range(p.shape[0])
    }


def _policy_dict(pi, S, A):
    return {str(t): {str(s): [float(x) for x in pi[t, i]] for i, s in enumerate(S)} for t in range(pi.shape[0])}


def argmax_lowest(row) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(row))


def backward_induction(spec: GameSpec, flow, backend: str = "greedy") -> SolveResult:
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    flow = check_flow(flow, T, nS)
    Jhat = np.zeros((T, nS, nA))
    Vhat = np.zeros((T, nS))
    pStar = np.zeros((T, nS, nA, nS))
    budget = np.zeros((T, nS, nA))
    choice = np.zeros((T, nS), dtype=int)
    V_next = np.zeros(nS)
    for t in range(T - 1, -1, -1):
        mu = flow[t]
        R = spec.reward.table(mu)
        fam = spec.ambiguity[t]
        for s in range(nS):
            for a in range(nA):
                f = R[s, a] + V_next
                try:
                    sol = worst_case_expectation(f, instance(fam, s, a, mu), backend)
                except (InnerSolverError, ValueError) as exc:
                    raise InnerSolverError(f"inner problem failed at (t={t}, s={s}, a={a}): {exc}") from exc
                Jhat[t, s, a] = sol.value
                pStar[t, s, a] = sol.minimizer
                budget[t, s, a] = sol.budget
            choice[t, s] = argmax_lowest(Jhat[t, s])
            Vhat[t, s] = Jhat[t, s, choice[t, s]]
        V_next = Vhat[t]
    piStar = np.eye(nA)[choice]
    Vflow = float(Vhat[0] @ flow[0])
    return SolveResult(Jhat, Vhat, pStar, piStar, Vflow, budget)


def value_of_flow(spec: GameSpec, flow, backend: str = "greedy") -> float:
    return backward_induction(spec, flow, backend).Vflow


def robust_policy_eval(spec: GameSpec, flow, policy, backend: str = "greedy") -> float:
    """Worst-case objective of a fixed Markov policy against a fixed flow."""
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    flow = check_flow(flow, T, nS)
    policy = check_policy(policy, T, nS, nA)
    W = np.zeros(nS)
    for t in range(T - 1, -1, -1):
        mu = flow[t]
        R = spec.reward.table(mu)
        fam = spec.ambiguity[t]
        W_t = np.zeros(nS)
        for s in range(nS):
            for a in range(nA):
                if policy[t, s, a] == 0.0:
                    continue
                sol = worst_case_expectation(R[s, a] + W, instance(fam, s, a, mu), backend)
                W_t[s] += policy[t, s, a] * sol.value
        W = W_t
    return float(W @ flow[0])


def pushforward(kernel_t, policy_t, mu_t) -> np.ndarray:
    """``sum_{s,a} kernel_t[s, a, :] policy_t[s, a] mu_t[s]``."""
    return np.einsum("s,sa,sak->k", mu_t, policy_t, kernel_t)


def flow_from(spec: GameSpec, kernel, policy, steps: int | None = None) -> np.ndarray:
    """Flow started at the initial law and pushed through ``(kernel, policy)``.

    ``steps`` defaults to T, giving mu_0..mu_{T-1}; ``steps = T + 1`` adds the
    terminal law.
    """
    steps = spec.horizon if steps is None else steps
    out = np.zeros((steps, spec.nS))
    out[0] = spec.initial
    for t in range(steps - 1):
        out[t + 1] = pushforward(kernel[t], policy[t], out[t])
    return out


@dataclass
class ResidualReport:
    optimality: float
    adversary: float
    flow: float
    support: float

    def accepted(self, tol: float = 1e-8) -> bool:
        return max(self.optimality, self.adversary, self.flow, self.support) <= tol

    def to_dict(self) -> dict:
        return {
            "optimality": self.optimality,
            "adversary": self.adversary,
            "flow": self.flow,
            "support": self.support,
        }


def _argmax_mask(J, tol=ARGMAX_TOL):
    best = J.max(axis=-1, keepdims=True)
    return J >= best - tol * np.maximum(1.0, np.abs(best))


def check_mfe(spec: GameSpec, candidate, backend: str = "greedy") -> ResidualReport:
    """Residuals of a candidate equilibrium.

    ``candidate`` carries ``flow``, ``policy`` and ``kernel`` arrays (an
    :class:`~robust_mfg.mfe.Equilibrium` or anything shaped like one).
    """
    return residuals(spec, candidate.flow, candidate.policy, candidate.kernel, backend)


def residuals(spec: GameSpec, flow, policy, kernel, backend: str = "greedy") -> ResidualReport:
    """Residuals of ``(flow, policy, kernel)`` against the equilibrium conditions.

    The adversary residual also absorbs any excess of a kernel row over its
    ambiguity set; the flow residual includes the initial-law gap.
    """
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    flow = check_flow(flow, T, nS)
    policy = check_policy(policy, T, nS, nA)
    kernel = check_kernel(kernel, T, nS, nA)
    sol = backward_induction(spec, flow, backend)

    optimality = float(np.max(np.abs(sol.Vhat - np.einsum("tsa,tsa->ts", sol.Jhat, policy))))

    adversary = 0.0
    for t in range(T):
        R = spec.reward.table(flow[t])
        f = R + sol.continuation(t + 1)[None, None, :]
        achieved = np.einsum("sak,sak->sa", f, kernel[t])
        adversary = max(adversary, float(np.max(np.abs(achieved - sol.Jhat[t]))))
        fam = spec.ambiguity[t]
        for s in range(nS):
            for a in range(nA):
                if not contains(instance(fam, s, a, flow[t]), kernel[t, s, a]):
                    adversary = max(adversary, _excess(instance(fam, s, a, flow[t]), kernel[t, s, a]))

    gaps = [float(np.max(np.abs(flow[0] - spec.initial)))]
    for t in range(T - 1):
        gaps.append(float(np.max(np.abs(flow[t + 1] - pushforward(kernel[t], policy[t], flow[t])))))
    flow_res = max(gaps)

    off = ~_argmax_mask(sol.Jhat)
    support = float(np.max(np.where(off, policy, 0.0).sum(axis=-1)))
    return ResidualReport(optimality, adversary, flow_res, support)


def _excess(aset, P) -> float:
    if isinstance(aset, W1Ball):
        d, _ = w1_lp(P, aset.center, aset.cost)
        return max(0.0, d - aset.radius)
    if hasattr(aset, "row"):
        return float(np.max(np.abs(P - aset.row)))
    return float(min(np.max(np.abs(P - r)) for r in aset.rows))


@dataclass
class FixedPointReport:
    best_response: list[bool]  # per t: joint law supported on the argmax set
    consistency: list[bool]  # per t: marginal reachable through worst-case kernels
    best_response_gap: list[float] = field(default_factory=list)
    consistency_gap: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.best_response) and all(self.consistency)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "best_response": self.best_response,
            "consistency": self.consistency,
            "best_response_gap": self.best_response_gap,
            "consistency_gap": self.consistency_gap,
        }


def disintegrate(nu_t) -> tuple[np.ndarray, np.ndarray]:
    """State marginal and conditional action law of a joint law on S x A.

    States without mass get the uniform action law.
    """
    nu_t = np.asarray(nu_t, dtype=float)
    marg = nu_t.sum(axis=1)
    nA = nu_t.shape[1]
    cond = np.full_like(nu_t, 1.0 / nA)
    pos = marg > 0
    cond[pos] = nu_t[pos] / marg[pos, None]
    return marg, cond


def check_fixed_point(spec: GameSpec, nu, tol: float = 1e-8, backend: str = "greedy") -> FixedPointReport:
    """Check ``nu in C(nu) and nu in B(nu)`` for joint state-action laws ``nu`` of shape (T, nS, nA)."""
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (T, nS, nA):
        raise ValueError(f"joint laws must have shape {(T, nS, nA)}")
    flow = nu.sum(axis=2)
    sol = backward_induction(spec, flow, backend)
    mask = _argmax_mask(sol.Jhat)

    br, br_gap = [], []
    for t in range(T):
        off = float(np.sum(np.where(mask[t], 0.0, nu[t])))
        br_gap.append(off)
        br.append(off <= tol)

    cons, cons_gap = [], []
    gap0 = float(np.max(np.abs(flow[0] - spec.initial)))
    for t in range(T):
        if t == 0:
            gap = gap0
        else:
            target = flow[t]
            gap = float(np.max(np.abs(target - np.einsum("sa,sak->k", nu[t - 1], sol.pStar[t - 1]))))
            if gap > tol:
                gap = min(gap, _consistency_lp(spec, sol, flow, nu[t - 1], target, t - 1, tol))
        cons_gap.append(gap)
        cons.append(gap <= tol)
    return FixedPointReport(br, cons, br_gap, cons_gap)


def _consistency_lp(spec, sol, flow, nu_t, target, t, tol) -> float:
    """Search the whole set of worst-case kernels for one reproducing ``target``.

    Only Wasserstein balls are searched; other families keep the selector
    answer. Returns 0.0 when a kernel exists, inf otherwise.
    """
    fam = spec.ambiguity[t]
    nS, nA = spec.nS, spec.nA
    pairs = [(s, a) for s in range(nS) for a in range(nA) if nu_t[s, a] > 0]
    insts = [instance(fam, s, a, flow[t]) for s, a in pairs]
    if not all(isinstance(x, W1Ball) for x in insts):
        return float("inf")
    R = spec.reward.table(flow[t])
    V = sol.continuation(t + 1)
    n = nS
    rows, _ = transport_constraints(n, n)
    m = len(pairs)
    nv = m * n * n
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for i, ((s, a), inst) in enumerate(zip(pairs, insts)):
        block = np.zeros((n, nv))
        block[:, i * n * n:(i + 1) * n * n] = rows
        A_eq.append(block)
        b_eq.append(inst.center)
        budget = np.zeros(nv)
        budget[i * n * n:(i + 1) * n * n] = inst.cost.ravel()
        A_ub.append(budget)
        b_ub.append(inst.radius)
        optimal = np.zeros(nv)
        optimal[i * n * n:(i + 1) * n * n] = np.tile(R[s, a] + V, n)
        A_ub.append(optimal)
        b_ub.append(sol.Jhat[t, s, a] + tol)
    mix = np.zeros((n, nv))
    for i, (s, a) in enumerate(pairs):
        mix[:, i * n * n:(i + 1) * n * n] = nu_t[s, a] * np.kron(np.ones((1, n)), np.eye(n))
    A_eq.append(mix)
    b_eq.append(target)
    res = linprog(
        np.zeros(nv),
        A_ub=np.vstack(A_ub),
        b_ub=b_ub,
        A_eq=np.vstack(A_eq),
        b_eq=np.concatenate(b_eq),
        bounds=(0, None),
        method="highs",
        options=_HIGHS,
    )
    return 0.0 if res.status == 0 else float("inf")
