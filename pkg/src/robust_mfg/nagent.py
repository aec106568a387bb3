"""The N-agent game under model uncertainty.

Exact fixed-policy values on the product space (small N), best-response
Nash gaps by enumeration, and Monte-Carlo estimates under the plug-in
adversary: the mean-field worst-case selector re-evaluated at the running
empirical measure. The plug-in adversary is a surrogate for the exact
N-agent worst case; it coincides with it when every ambiguity set is a
singleton.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dpp import backward_induction
from .inner import SingletonSet, W1Ball, instance, worst_case_expectation
from .model import GameSpec, Singleton, WassersteinBall, check_policy, deterministic_policy
from .rng import CHUNK, chunk_generator, chunks
from .transport import w1, w1_1d

N_MAX = 3
RESTARTS = 16
ENUMERATION_BUDGET = 60_000


class BudgetExceeded(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"{count} candidate deviations exceed the enumeration budget of {budget}")
        self.count = count
        self.budget = budget


@dataclass(frozen=True, eq=False)
class ProfilePolicy:
    """One Markov policy per agent, each of shape (T, nS, nA)."""

    policies: tuple

    def __post_init__(self):
        if not self.policies:
            raise ValueError("profile needs at least one agent")
        object.__setattr__(self, "policies", tuple(np.asarray(p, dtype=float) for p in self.policies))

    @classmethod
    def symmetric(cls, policy, N: int) -> "ProfilePolicy":
        return cls((policy,) * N)

    @classmethod
    def deviated(cls, policy, N: int, i: int, deviation) -> "ProfilePolicy":
        if not 0 <= i < N:
            raise ValueError(f"agent index {i} out of range for N={N}")
        pols = [policy] * N
        pols[i] = deviation
        return cls(tuple(pols))

    @property
    def N(self) -> int:
        return len(self.policies)

    def validate(self, spec: GameSpec):
        for p in self.policies:
            check_policy(p, spec.horizon, spec.nS, spec.nA)

    def stacked(self) -> np.ndarray:
        """Array of shape (N, T, nS, nA)."""
        return np.stack(self.policies)


@dataclass
class NAgentReport:
    N: int
    J_exact: float | None = None
    J_mc: float | None = None
    stderr: float | None = None
    nash_gap: float | None = None
    certified: bool = False
    methods: list = field(default_factory=list)
    best_deviation: np.ndarray | None = None
    candidates: int = 0

    def row(self) -> dict:
        return {
            "N": self.N,
            "J_mc": self.J_mc,
            "stderr": self.stderr,
            "J_exact": self.J_exact,
            "nash_gap": self.nash_gap,
            "certified": self.certified,
        }

    def to_dict(self) -> dict:
        d = self.row()
        d["methods"] = list(self.methods)
        d["candidates"] = self.candidates
        if self.best_deviation is not None:
            d["best_deviation"] = np.asarray(self.best_deviation).tolist()
        return d


@dataclass(frozen=True)
class ExactValue:
    value: float
    certified: bool

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# product space


class ProductSpace:
    """Joint states ``S^N`` with empirical measures, rewards and reference rows."""

    def __init__(self, spec: GameSpec, N: int):
        self.spec, self.N = spec, N
        nS = spec.nS
        self.states = np.array(list(itertools.product(range(nS), repeat=N)), dtype=int).reshape(-1, N)
        counts = np.stack([(self.states == s).sum(axis=1) for s in range(nS)], axis=1)
        self.emp = counts / N
        self.rewards = np.stack([spec.reward.table(e) for e in self.emp])  # (P, nS, nA, nS)
        init = np.asarray(spec.initial)
        self.weights = np.prod(init[self.states], axis=1)
        self.singleton = all(_point_family(f) for f in spec.ambiguity)
        self._ref = None

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def reference_rows(self) -> np.ndarray:
        """Per t and joint state: agent j's reference rows, shape (T, P, N, nA, nS)."""
        if self._ref is None:
            spec = self.spec
            T, nA = spec.horizon, spec.nA
            ref = np.zeros((T, self.size, self.N, nA, spec.nS))
            for t, fam in enumerate(spec.ambiguity):
                for p in range(self.size):
                    e = self.emp[p]
                    for j, s in enumerate(self.states[p]):
                        for a in range(nA):
                            ref[t, p, j, a] = fam.reference(int(s), a, e)
            self._ref = ref
            # expected own reward per (t, p, j, a)
            idx = np.arange(self.size)[:, None]
            own = self.rewards[idx, self.states]  # (P, N, nA, nS)
            self._own_reward = np.einsum("tpjak,pjak->tpja", ref, own)
        return self._ref


def _point_family(fam) -> bool:
    """True when every set of the family is a single law (a radius-0 ball included)."""
    return isinstance(fam, Singleton) or (isinstance(fam, WassersteinBall) and fam.radius == 0)


def _is_point(aset) -> bool:
    return isinstance(aset, SingletonSet) or (isinstance(aset, W1Ball) and aset.radius == 0)


def _contract(g, Ps, skip=None):
    """Contract the tensor ``g`` (one axis per agent) with per-agent laws, leaving ``skip`` open."""
    ops = [g, list(range(g.ndim))]
    for k, P in enumerate(Ps):
        if k != skip:
            ops += [P, [k]]
    ops.append([] if skip is None else [skip])
    return np.einsum(*ops)


def _value_singleton(space: ProductSpace, policies: np.ndarray, i: int) -> float:
    """Exact value when every ambiguity set is a singleton (vectorized product chain)."""
    spec, N = space.spec, space.N
    ref = space.reference_rows()
    own = space._own_reward
    nS = spec.nS
    agents = np.arange(N)
    W = np.zeros((nS,) * N)
    for t in range(spec.horizon - 1, -1, -1):
        act = policies[agents[None, :], t, space.states]  # (P, N, nA)
        marg = np.einsum("pja,pjak->pjk", act, ref[t])  # (P, N, nS)
        reward = np.einsum("pa,pa->p", act[:, i], own[t][:, i])
        if t == spec.horizon - 1:
            W_t = reward
        else:
            ops = [W, list(range(1, N + 1))]
            for j in range(N):
                ops += [marg[:, j], [0, j + 1]]
            ops.append([0])
            W_t = reward + np.einsum(*ops)
        W = W_t.reshape((nS,) * N)
    return float(space.weights @ W.ravel())


def _multilinear_min(g, sets, rng, restarts, backend):
    """Minimize the multilinear form ``g`` over a product of ambiguity sets.

    Coordinate descent: each sweep re-solves every free agent's inner problem
    with the others held fixed. Restart 0 starts at the set centers; later
    restarts start at minimizers of random linear objectives. Returns
    ``(value, exact)``; ``exact`` holds when at most one agent is free.
    """
    N = g.ndim
    free = [j for j, s in enumerate(sets) if not _is_point(s)]
    start = [s.row if isinstance(s, SingletonSet) else _center(s) for s in sets]
    if not free:
        return float(_contract(g, start)), True
    if len(free) == 1:
        j = free[0]
        sol = worst_case_expectation(_contract(g, start, skip=j), sets[j], backend)
        return sol.value, True

    best = math.inf
    for r in range(restarts):
        Ps = list(start)
        if r > 0:
            for j in free:
                Ps[j] = worst_case_expectation(rng.normal(size=g.shape[j]), sets[j], backend).minimizer
        value = float(_contract(g, Ps))
        for _ in range(200):
            prev = value
            for j in free:
                sol = worst_case_expectation(_contract(g, Ps, skip=j), sets[j], backend)
                Ps[j] = sol.minimizer
                value = sol.value
            # each partial minimization can only lower the form
            assert value <= prev + 1e-12 * max(1.0, abs(prev)), "coordinate descent increased the value"
            if prev - value <= 1e-14 * max(1.0, abs(value)):
                break
        best = min(best, value)
    return best, False


def _center(aset):
    if hasattr(aset, "center"):
        return np.asarray(aset.center, dtype=float)
    return np.asarray(aset.rows[0], dtype=float)


def _value_general(space: ProductSpace, policies: np.ndarray, i: int, restarts: int, seed: int, backend: str):
    spec, N = space.spec, space.N
    nS, T = spec.nS, spec.horizon
    rng = np.random.default_rng(seed)
    certified = True
    W = np.zeros((nS,) * N)
    for t in range(T - 1, -1, -1):
        fam = spec.ambiguity[t]
        W_t = np.zeros(space.size)
        for p in range(space.size):
            sbar = space.states[p]
            e = space.emp[p]
            R = space.rewards[p]
            supports = [np.flatnonzero(policies[j, t, sbar[j]]) for j in range(N)]
            for abar in itertools.product(*supports):
                prob = math.prod(policies[j, t, sbar[j], abar[j]] for j in range(N))
                r_own = R[sbar[i], abar[i]]
                sets = [instance(fam, int(sbar[j]), int(abar[j]), e) for j in range(N)]
                if t == T - 1:
                    val = worst_case_expectation(r_own, sets[i], backend).value
                else:
                    shape = [1] * N
                    shape[i] = nS
                    g = W + r_own.reshape(shape)
                    val, exact = _multilinear_min(g, sets, rng, restarts, backend)
                    certified &= exact
                W_t[p] += prob * val
        W = W_t.reshape((nS,) * N)
    return float(space.weights @ W.ravel()), certified


def fixed_policy_value_exact(
    spec: GameSpec,
    N: int,
    profile: ProfilePolicy,
    i: int = 0,
    restarts: int = RESTARTS,
    seed: int = 0,
    n_max: int = N_MAX,
    backend: str = "greedy",
    space: ProductSpace | None = None,
) -> ExactValue:
    """Worst-case objective of agent ``i`` (0-based) under a fixed policy profile."""
    if N > n_max:
        raise ValueError(f"N={N} exceeds N_max={n_max} for the product-space recursion")
    if profile.N != N:
        raise ValueError(f"profile has {profile.N} agents, expected {N}")
    if not 0 <= i < N:
        raise ValueError(f"agent index {i} out of range")
    profile.validate(spec)
    space = space or ProductSpace(spec, N)
    policies = profile.stacked()
    if space.singleton:
        return ExactValue(_value_singleton(space, policies, i), True)
    value, certified = _value_general(space, policies, i, restarts, seed, backend)
    return ExactValue(value, certified)


def best_response_gap(
    spec: GameSpec,
    N: int,
    i: int,
    eq,
    budget: int = ENUMERATION_BUDGET,
    n_max: int = N_MAX,
    restarts: int = RESTARTS,
    seed: int = 0,
) -> NAgentReport:
    """Largest gain of a deterministic own-state Markov deviation by agent ``i``.

    Exact for singleton ambiguity sets; otherwise a lower bound on the gap.
    """
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    count = nA ** (nS * T)
    if count > budget:
        raise BudgetExceeded(count, budget)
    if N > n_max:
        raise ValueError(f"N={N} exceeds N_max={n_max}")
    space = ProductSpace(spec, N)
    base_profile = ProfilePolicy.symmetric(eq.policy, N)
    base = fixed_policy_value_exact(spec, N, base_profile, i, restarts, seed, n_max, space=space)
    certified = base.certified
    policies = base_profile.stacked().copy()
    best, best_choice = -math.inf, None
    for choice in itertools.product(range(nA), repeat=nS * T):
        policies[i] = deterministic_policy(np.reshape(choice, (T, nS)), nA)
        if space.singleton:
            v = _value_singleton(space, policies, i)
        else:
            v, cert = _value_general(space, policies, i, restarts, seed, "greedy")
            certified &= cert
        if v > best:
            best, best_choice = v, choice
    exact = space.singleton
    report = NAgentReport(
        N=N,
        J_exact=base.value,
        nash_gap=best - base.value,
        certified=exact and certified,
        methods=["product-dpp", "enumeration", "exact" if exact else "lower-bound"],
        best_deviation=np.reshape(best_choice, (T, nS)),
        candidates=count,
    )
    return report


# ---------------------------------------------------------------------------
# Monte Carlo under the plug-in adversary


class PluginAdversary:
    """Worst-case kernel rows of the equilibrium, re-solved at a given empirical measure."""

    def __init__(self, spec: GameSpec, eq, backend: str = "greedy"):
        self.spec, self.eq, self.backend = spec, eq, backend
        self.sol = backward_induction(spec, eq.flow, backend)
        self._cache = {}

    def tables(self, t: int, counts: tuple, N: int):
        """``(kernel (nS, nA, nS), reward (nS, nA, nS))`` at time t and empirical counts."""
        key = (t, counts)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        spec = self.spec
        e = np.asarray(counts, dtype=float) / N
        R = np.asarray(spec.reward.table(e))
        if np.array_equal(e, self.eq.flow[t]):
            K = np.asarray(self.eq.kernel[t])
        else:
            V = self.sol.continuation(t + 1)
            fam = spec.ambiguity[t]
            K = np.empty((spec.nS, spec.nA, spec.nS))
            for s in range(spec.nS):
                for a in range(spec.nA):
                    K[s, a] = worst_case_expectation(R[s, a] + V, instance(fam, s, a, e), self.backend).minimizer
        self._cache[key] = (K, R)
        return K, R


def _sample(cdf, u):
    """Inverse-CDF draws: ``cdf`` (..., n), ``u`` (...)."""
    idx = (u[..., None] > cdf).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def _simulate_chunk(spec, N, policies, adversary, chunk, n_paths, seed, i, record):
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    rng = chunk_generator(seed, chunk)
    # fixed draw layout per chunk: paths beyond n_paths are discarded
    u0 = rng.random((CHUNK, N))
    ua = rng.random((T, CHUNK, N))
    us = rng.random((T, CHUNK, N))
    init_cdf = np.cumsum(spec.initial)
    states = _sample(init_cdf, u0[:n_paths])
    total = np.zeros(n_paths)
    agents = np.arange(N)[None, :]
    rows = np.arange(n_paths)[:, None]
    pol_cdf = np.cumsum(policies, axis=-1)  # (N, T, nS, nA)
    stats = []
    for t in range(T):
        counts = np.stack([(states == s).sum(axis=1) for s in range(nS)], axis=1)
        keys, inv = np.unique(counts, axis=0, return_inverse=True)
        inv = inv.ravel()
        tabs = [adversary.tables(t, tuple(int(x) for x in k), N) for k in keys]
        K = np.stack([k for k, _ in tabs])  # (U, nS, nA, nS)
        R = np.stack([r for _, r in tabs])
        actions = _sample(pol_cdf[agents, t, states], ua[t, :n_paths])
        probs = K[inv[:, None], states, actions]  # (paths, N, nS)
        nxt = _sample(np.cumsum(probs, axis=-1), us[t, :n_paths])
        si, ai, ni = states[:, i], actions[:, i], nxt[:, i]
        total += R[inv, si, ai, ni]
        if record:
            stats.append((si, ai, ni, counts))
        states = nxt
    return total, stats


def _run(spec, N, profile, eq, paths, seed, i, record, threads, backend):
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if N < 1:
        raise ValueError("N must be >= 1")
    if profile.N != N:
        raise ValueError(f"profile has {profile.N} agents, expected {N}")
    if not 0 <= i < N:
        raise ValueError(f"agent index {i} out of range")
    profile.validate(spec)
    adversary = PluginAdversary(spec, eq, backend)
    policies = profile.stacked()
    jobs = chunks(paths)

    def work(job):
        c, _, n = job
        return _simulate_chunk(spec, N, policies, adversary, c, n, seed, i, record)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    totals = np.concatenate([r[0] for r in results])
    return totals, [r[1] for r in results]


def simulate_plugin(
    spec: GameSpec,
    N: int,
    profile: ProfilePolicy,
    eq,
    paths: int,
    seed: int,
    i: int = 0,
    threads: int = 1,
    backend: str = "greedy",
) -> NAgentReport:
    """Monte-Carlo estimate of agent ``i``'s total reward under the plug-in adversary."""
    totals, _ = _run(spec, N, profile, eq, paths, seed, i, False, threads, backend)
    mean = float(np.mean(totals))
    stderr = float(np.std(totals, ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    return NAgentReport(N=N, J_mc=mean, stderr=stderr, methods=["monte-carlo", "plug-in", "surrogate"])


@dataclass
class ChaosRow:
    N: int
    t: int
    indicator: float  # max |Q_hat - Q*| over indicator functions on S x A x S
    w1_mean: float  # E[W1(empirical measure, mu*_t)]
    discrepancy: float


def mean_field_laws(spec: GameSpec, eq, policy) -> np.ndarray:
    """Laws of ``(s_t, a_t, s_{t+1})`` for one agent using ``policy`` against the equilibrium kernels."""
    T, nS = spec.horizon, spec.nS
    out = np.zeros((T, nS, spec.nA, nS))
    mu = np.asarray(spec.initial, dtype=float)
    for t in range(T):
        joint = mu[:, None] * policy[t]
        out[t] = joint[..., None] * eq.kernel[t]
        mu = out[t].sum(axis=(0, 1))
    return out


def chaos_diagnostic(
    spec: GameSpec,
    N: int,
    profile: ProfilePolicy,
    eq,
    paths: int,
    seed: int,
    i: int = 0,
    threads: int = 1,
    backend: str = "greedy",
) -> list[ChaosRow]:
    """Distance between agent ``i``'s simulated one-step laws and the mean-field laws, per t."""
    _, stats = _run(spec, N, profile, eq, paths, seed, i, True, threads, backend)
    T, nS, nA = spec.horizon, spec.nS, spec.nA
    target = mean_field_laws(spec, eq, profile.policies[i])
    coords = spec.states.coords
    one_d = spec.states.is_1d_sorted()
    cost = spec.states.distance_matrix()
    rows = []
    for t in range(T):
        hist = np.zeros((nS, nA, nS))
        w1_sum = 0.0
        w1_cache = {}
        for chunk_stats in stats:
            si, ai, ni, counts = chunk_stats[t]
            np.add.at(hist, (si, ai, ni), 1.0)
            emp = counts / N
            if one_d:
                w1_sum += float(np.sum(w1_1d(emp, np.broadcast_to(eq.flow[t], emp.shape), coords[:, 0])))
            else:
                for row in emp:
                    key = tuple(row)
                    if key not in w1_cache:
                        w1_cache[key] = w1(row, eq.flow[t], cost)
                    w1_sum += w1_cache[key]
        hist /= paths
        ind = float(np.max(np.abs(hist - target[t])))
        w1_mean = w1_sum / paths
        rows.append(ChaosRow(N, t, ind, w1_mean, max(ind, w1_mean)))
    return rows
