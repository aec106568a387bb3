"""Mean-field equilibria by fixed-point iteration on the measure flow."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dpp import ResidualReport, SolveResult, backward_induction, check_mfe, pushforward
from .model import GameSpec, check_flow

log = logging.getLogger(__name__)

MIN_DAMPING = 1.0 / 16.0


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 10_000
    damping: float = 1.0
    cycle_window: int = 20
    backend: str = "greedy"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.cycle_window < 2:
            raise ValueError("cycle_window must be >= 2")


@dataclass(eq=False)
class Equilibrium:
    flow: np.ndarray  # (T, nS)
    policy: np.ndarray  # (T, nS, nA)
    kernel: np.ndarray  # (T, nS, nA, nS)
    residuals: ResidualReport
    iterations: int
    converged: bool
    value: float
    method: str = "pure"  # "pure", "mixed" or "damped"
    trace: list = field(default_factory=list)

    def terminal(self) -> np.ndarray:
        """Law at time T, one pushforward past the last flow entry."""
        return pushforward(self.kernel[-1], self.policy[-1], self.flow[-1])

    def joint_laws(self) -> np.ndarray:
        """Joint state-action laws ``policy_t(a|s) mu_t(s)``, shape (T, nS, nA)."""
        return self.policy * self.flow[:, :, None]

    def to_dict(self, spec: GameSpec) -> dict:
        S, A = spec.states.labels, spec.actions.labels
        T = spec.horizon
        return {
            "states": [str(s) for s in S],
            "actions": [str(a) for a in A],
            "horizon": T,
            "converged": self.converged,
            "iterations": self.iterations,
            "method": self.method,
            "value": self.value,
            "flow": {str(t): [float(x) for x in self.flow[t]] for t in range(T)},
            "terminal": [float(x) for x in self.terminal()],
            "policy": {
                str(t): {str(s): [float(x) for x in self.policy[t, i]] for i, s in enumerate(S)} for t in range(T)
            },
            "kernel": {
                str(t): {
                    str(s): {str(a): [float(x) for x in self.kernel[t, i, j]] for j, a in enumerate(A)}
                    for i, s in enumerate(S)
                }
                for t in range(T)
            },
            "residuals": self.residuals.to_dict(),
            "trace": [float(x) for x in self.trace],
        }


def _step(spec, flow, opts) -> tuple[SolveResult, np.ndarray]:
    sol = backward_induction(spec, flow, opts.backend)
    new = np.empty_like(flow)
    new[0] = spec.initial
    for t in range(spec.horizon - 1):
        new[t + 1] = pushforward(sol.pStar[t], sol.piStar[t], flow[t])
    return sol, new


def _joint(spec, sol, flow):
    """Flow produced by ``sol``'s profile from the initial law, with its joint laws."""
    T = spec.horizon
    mu = np.empty_like(flow)
    mu[0] = spec.initial
    for t in range(T - 1):
        mu[t + 1] = pushforward(sol.pStar[t], sol.piStar[t], mu[t])
    return mu, sol.piStar * mu[:, :, None]


def _mix(spec, w, sol_lo, sol_hi, flow):
    """Blend two best-response profiles so that the blend reproduces ``flow``.

    ``w`` weights the ``lo`` profile. Policies and kernels are mixed through
    the joint state-action laws, which keeps each kernel row a convex
    combination of worst-case rows.
    """
    _, nu_lo = _joint(spec, sol_lo, flow)
    _, nu_hi = _joint(spec, sol_hi, flow)
    nu = w * nu_lo + (1.0 - w) * nu_hi
    marg = nu.sum(axis=2, keepdims=True)
    policy = np.where(marg > 0, nu / np.where(marg > 0, marg, 1.0), sol_lo.piStar)
    num = w * nu_lo[..., None] * sol_lo.pStar + (1.0 - w) * nu_hi[..., None] * sol_hi.pStar
    kernel = np.where(nu[..., None] > 0, num / np.where(nu > 0, nu, 1.0)[..., None], sol_lo.pStar)
    return policy, kernel


def _resolve_two_cycle(spec, flow_a, flow_b, opts):
    """Locate the switch point on the segment between two flows of a 2-cycle.

    Along ``(1 - w) flow_a + w flow_b`` the best-response flow is ``flow_b``
    near ``w = 0`` and ``flow_a`` near ``w = 1``. Bisection finds the switch;
    there both responses are optimal and mixing them with weight ``w`` on the
    first reproduces the segment point. Returns None when the segment shows a
    third response.
    """
    def classify(w):
        flow = (1.0 - w) * flow_a + w * flow_b
        flow[0] = spec.initial
        sol, new = _step(spec, flow, opts)
        if np.max(np.abs(new - flow_b)) <= opts.tol:
            return "lo", sol
        if np.max(np.abs(new - flow_a)) <= opts.tol:
            return "hi", sol
        return None, sol

    lo, hi = 0.0, 1.0
    tag_lo, sol_lo = classify(lo)
    tag_hi, sol_hi = classify(hi)
    if tag_lo != "lo" or tag_hi != "hi":
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        tag, sol = classify(mid)
        if tag == "lo":
            lo, sol_lo = mid, sol
        elif tag == "hi":
            hi, sol_hi = mid, sol
        else:
            return None
    best = None
    for w in (lo, hi):
        flow = (1.0 - w) * flow_a + w * flow_b
        flow[0] = spec.initial
        policy, kernel = _mix(spec, w, sol_lo, sol_hi, flow)
        res = check_mfe(spec, _Candidate(flow, policy, kernel), opts.backend)
        score = max(res.optimality, res.adversary, res.flow, res.support)
        if best is None or score < best[0]:
            best = (score, flow, policy, kernel, res)
    return best[1:]


@dataclass
class _Candidate:
    flow: np.ndarray
    policy: np.ndarray
    kernel: np.ndarray


def solve_mfe(spec: GameSpec, init=None, opts: SolveOptions | None = None) -> Equilibrium:
    """Iterate best response and flow update until the flow stops changing.

    Exact 2-cycles of the undamped iteration are resolved into a mixed
    equilibrium; other oscillations trigger damping, halved down to 1/16.
    """
    opts = opts or SolveOptions()
    T, nS = spec.horizon, spec.nS
    flow = spec.constant_flow() if init is None else np.array(init, dtype=float)
    check_flow(flow, T, nS)
    flow[0] = spec.initial

    alpha = opts.damping
    trace: list[float] = []
    recent: list[np.ndarray] = []
    since_damp = 0
    method = "pure" if alpha == 1.0 else "damped"
    converged = False
    it = 0
    sol = None
    for it in range(1, opts.max_iter + 1):
        sol, new = _step(spec, flow, opts)
        change = float(np.max(np.abs(new - flow)))
        trace.append(change)
        if change <= opts.tol:
            converged = True
            break

        if alpha == 1.0 and len(recent) >= 1 and np.max(np.abs(new - recent[-1])) <= opts.tol:
            # new == flow two steps back: period-2 cycle between recent[-1] and flow
            found = _resolve_two_cycle(spec, recent[-1], flow, opts)
            if found is not None:
                flow, policy, kernel, res = found
                log.info("resolved 2-cycle into a mixed equilibrium after %d iterations", it)
                return Equilibrium(
                    flow, policy, kernel, res, it, res.accepted(1e-8),
                    _value(spec, flow, policy, opts), "mixed", trace,
                )

        since_damp += 1
        w = opts.cycle_window
        if since_damp >= w and _stalled(trace, w):
            if alpha <= MIN_DAMPING:
                log.warning("flow iteration oscillates at damping %.4g; giving up", alpha)
                break
            alpha = max(alpha / 2.0, MIN_DAMPING)
            method = "damped"
            since_damp = 0
            log.info("oscillation detected, damping lowered to %.4g", alpha)

        recent = (recent + [flow.copy()])[-2:]
        flow = (1.0 - alpha) * flow + alpha * new
        flow[0] = spec.initial

    res = check_mfe(spec, _Candidate(flow, sol.piStar, sol.pStar), opts.backend)
    return Equilibrium(flow, sol.piStar, sol.pStar, res, it, converged, sol.Vflow, method, trace)


def _stalled(trace, w) -> bool:
    """No contraction over the last ``w`` changes.

    Monotone growth and periodic oscillation both qualify: the largest change
    in the second half of the window is at least the largest in the first.
    """
    if len(trace) < w:
        return False
    half = w // 2
    return max(trace[-half:]) >= max(trace[-w:-half])


def _value(spec, flow, policy, opts) -> float:
    return backward_induction(spec, flow, opts.backend).Vflow


@dataclass
class SweepRow:
    lam: float
    value: float
    mu1: np.ndarray
    mu_terminal: np.ndarray
    iterations: int
    converged: bool
    equilibrium: Equilibrium | None = None
    error: str | None = None


def lambda_sweep(
    builder: Callable[[float], GameSpec],
    lambdas: Sequence[float],
    init=None,
    opts: SolveOptions | None = None,
    threads: int = 1,
) -> list[SweepRow]:
    """Solve one equilibrium per uncertainty level; rows keep the input order."""
    opts = opts or SolveOptions()

    def run(lam):
        try:
            spec = builder(lam)
            eq = solve_mfe(spec, init, opts)
        except Exception as exc:  # recorded per row
            nan = np.full(0, np.nan)
            return SweepRow(lam, float("nan"), nan, nan, 0, False, None, f"{type(exc).__name__}: {exc}")
        mu1 = eq.flow[1] if spec.horizon >= 2 else eq.terminal()
        return SweepRow(lam, eq.value, mu1, eq.terminal(), eq.iterations, eq.converged, eq)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, lambdas))
    return [run(lam) for lam in lambdas]
