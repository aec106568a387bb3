"""Finite-state mean-field games under model uncertainty.

Distributions, policies, kernels and measure flows are plain numpy arrays:

* distribution over a space of size n: shape ``(n,)``
* Markov policy: shape ``(T, nS, nA)``
* transition kernel table: shape ``(T, nS, nA, nS)``
* measure flow: shape ``(T, nS)``

The helpers ``check_*`` validate those shapes and the simplex constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a game component violates its invariants."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FiniteSpace:
    """Finite set of labelled points embedded in a Euclidean space."""

    labels: tuple
    coords: np.ndarray

    def __init__(self, labels: Sequence, coords=None):
        labels = tuple(labels)
        if not labels:
            raise ModelError("space must be non-empty")
        if len(set(labels)) != len(labels):
            raise ModelError("space labels must be unique")
        if coords is None:
            coords = [[float(x)] for x in labels]
        try:
            c = np.array(coords, dtype=float)
        except ValueError:
            raise ModelError("every point needs a coordinate vector of the same dimension") from None
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] != len(labels):
            raise ModelError("need exactly one coordinate vector per point")
        if not np.all(np.isfinite(c)):
            raise ModelError("coordinates must be finite")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "coords", _readonly(c))

    @classmethod
    def grid(cls, values: Sequence[float]) -> "FiniteSpace":
        values = list(values)
        return cls([_label(v) for v in values], [[float(v)] for v in values])

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"unknown point {label!r}") from None

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def distance_matrix(self) -> np.ndarray:
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return _readonly(np.sqrt((diff**2).sum(axis=-1)))

    def is_1d_sorted(self) -> bool:
        return self.dim == 1 and bool(np.all(np.diff(self.coords[:, 0]) > 0))

    def __eq__(self, other):
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.labels)


def _label(v):
    v = float(v)
    return int(v) if v.is_integer() else v


def simplex_violation(p) -> float:
    """Largest violation of non-negativity or unit mass along the last axis."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return math.inf
    if not np.all(np.isfinite(p)):
        return math.inf
    neg = float(np.max(np.maximum(-p, 0.0)))
    mass = float(np.max(np.abs(p.sum(axis=-1) - 1.0)))
    return max(neg, mass)


def check_distribution(p, n: int | None = None, tol: float = SIMPLEX_TOL, name="distribution") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if n is not None and p.shape[-1] != n:
        raise ModelError(f"{name}: expected support of size {n}, got {p.shape[-1]}")
    v = simplex_violation(p)
    if v > tol:
        raise ModelError(f"{name}: not on the simplex (violation {v:.3g})")
    return p


def normalize_rows(p, tol: float = 1e-6, name="rows") -> np.ndarray:
    """Renormalize rows whose mass is within ``tol`` of one; used at load time only."""
    p = np.array(p, dtype=float)
    if np.any(p < -tol) or not np.all(np.isfinite(p)):
        raise ModelError(f"{name}: negative or non-finite weights")
    p = np.maximum(p, 0.0)
    s = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > tol):
        raise ModelError(f"{name}: rows must sum to 1 (got sums within [{s.min():.6g}, {s.max():.6g}])")
    return p / s


def check_policy(pi, T: int, nS: int, nA: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (T, nS, nA):
        raise ModelError(f"policy must have shape {(T, nS, nA)}, got {pi.shape}")
    return check_distribution(pi, tol=1e-9, name="policy")


def check_kernel(p, T: int, nS: int, nA: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (T, nS, nA, nS):
        raise ModelError(f"kernel table must have shape {(T, nS, nA, nS)}, got {p.shape}")
    return check_distribution(p, tol=1e-9, name="kernel")


def check_flow(mu, T: int, nS: int) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (T, nS):
        raise ModelError(f"measure flow must have shape {(T, nS)}, got {mu.shape}")
    return check_distribution(mu, tol=1e-9, name="flow")


def deterministic_policy(choice, nA: int) -> np.ndarray:
    """Point-mass policy table from an integer array of chosen action indices."""
    choice = np.asarray(choice, dtype=int)
    return np.eye(nA)[choice]


# ---------------------------------------------------------------------------
# rewards


def _log_bound(c: float) -> float:
    return max(-math.log(c), math.log1p(c))


class RewardModel:
    """One-step reward ``r(s, a, s', mu)`` on index triples.

    Subclasses implement :meth:`table`, the full ``(nS, nA, nS)`` array for a
    fixed population law ``mu``.
    """

    def table(self, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s: int, a: int, s_next: int, mu: np.ndarray) -> float:
        return float(self.table(np.asarray(mu, dtype=float))[s, a, s_next])

    def bound(self) -> float | None:
        """Claimed bound on |r|, or None when unknown."""
        return None


@dataclass(frozen=True, eq=False)
class TableReward(RewardModel):
    """``r0[s, a, s'] - beta * log(mu(s') + c)``; ``claimed_bound`` is optional."""

    r0: np.ndarray
    beta: float = 0.0
    c: float = 1.0
    claimed_bound: float | None = None

    def __post_init__(self):
        r0 = np.asarray(self.r0, dtype=float)
        if r0.ndim != 3 or r0.shape[0] != r0.shape[2]:
            raise ModelError("reward table must have shape (nS, nA, nS)")
        if not np.all(np.isfinite(r0)):
            raise ModelError("reward table must be finite")
        if self.beta != 0.0 and not self.c > 0:
            raise ModelError("congestion offset c must be > 0")
        object.__setattr__(self, "r0", _readonly(r0))

    def table(self, mu):
        if self.beta == 0.0:
            return self.r0
        congestion = self.beta * np.log(np.asarray(mu, dtype=float) + self.c)
        return self.r0 - congestion[None, None, :]

    def bound(self):
        if self.claimed_bound is not None:
            return float(self.claimed_bound)
        return float(np.max(np.abs(self.r0))) + abs(self.beta) * _log_bound(self.c)


@dataclass(frozen=True, eq=False)
class CrowdReward(RewardModel):
    """Crowd-aversion reward on a 1D grid.

    ``(1 - |s' - center| / 2) - |a| / 4 - log(mu(s') + c)``, with ``s'`` and
    ``a`` read from the first coordinate of their spaces.
    """

    c: float
    state_x: np.ndarray = field(default_factory=lambda: np.arange(5.0))
    action_x: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 1.0]))
    center: float = 2.0

    def __post_init__(self):
        if not self.c > 0 or not math.isfinite(self.c):
            raise ModelError("crowd reward needs c > 0")
        object.__setattr__(self, "state_x", _readonly(self.state_x))
        object.__setattr__(self, "action_x", _readonly(self.action_x))
        base = (1.0 - np.abs(self.state_x - self.center) / 2.0)[None, :] - (np.abs(self.action_x) / 4.0)[:, None]
        object.__setattr__(self, "_base", _readonly(base))  # (nA, nS')

    def table(self, mu):
        mu = np.asarray(mu, dtype=float)
        row = self._base - np.log(mu + self.c)[None, :]
        return np.broadcast_to(row, (len(self.state_x),) + row.shape)

    def bound(self):
        # valid on the 5-point grid with |a| <= 1
        return 17.0 / 4.0 + _log_bound(self.c)


# ---------------------------------------------------------------------------
# ambiguity families

class AmbiguityFamily:
    """Correspondence ``(s, a, mu) -> set of next-state laws`` for one time step."""

    def reference(self, s: int, a: int, mu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rows(self) -> list[np.ndarray]:
        """Stored kernel rows, for diagnostics."""
        return []

    @property
    def mu_independent(self) -> bool:
        return False


def _kernel_source(kernel):
    if callable(kernel):
        return kernel
    k = np.asarray(kernel, dtype=float)
    if k.ndim != 3 or k.shape[0] != k.shape[2]:
        raise ModelError("kernel must have shape (nS, nA, nS)")
    return _readonly(k)


def _row(kernel, s, a, mu):
    if callable(kernel):
        return np.asarray(kernel(s, a, mu), dtype=float)
    return kernel[s, a]


@dataclass(frozen=True, eq=False)
class Singleton(AmbiguityFamily):
    kernel: object

    def __post_init__(self):
        object.__setattr__(self, "kernel", _kernel_source(self.kernel))

    def reference(self, s, a, mu):
        return _row(self.kernel, s, a, mu)

    def rows(self):
        return [] if callable(self.kernel) else [self.kernel]

    @property
    def mu_independent(self):
        return not callable(self.kernel)


@dataclass(frozen=True, eq=False)
class FiniteSet(AmbiguityFamily):
    kernels: tuple

    def __post_init__(self):
        ks = tuple(_kernel_source(k) for k in self.kernels)
        if not ks:
            raise ModelError("finite ambiguity set must be non-empty")
        object.__setattr__(self, "kernels", ks)

    def reference(self, s, a, mu):
        return _row(self.kernels[0], s, a, mu)

    def members(self, s, a, mu) -> list[np.ndarray]:
        return [_row(k, s, a, mu) for k in self.kernels]

    def rows(self):
        return [k for k in self.kernels if not callable(k)]

    @property
    def mu_independent(self):
        return not any(callable(k) for k in self.kernels)


@dataclass(frozen=True, eq=False)
class WassersteinBall(AmbiguityFamily):
    """All laws within 1-Wasserstein distance ``radius`` of the reference row."""

    kernel: object
    radius: float
    cost: np.ndarray

    def __post_init__(self):
        if not self.radius >= 0 or not math.isfinite(self.radius):
            raise ModelError(f"radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "kernel", _kernel_source(self.kernel))
        object.__setattr__(self, "cost", _readonly(self.cost))

    def reference(self, s, a, mu):
        return _row(self.kernel, s, a, mu)

    def rows(self):
        return [] if callable(self.kernel) else [self.kernel]

    @property
    def mu_independent(self):
        return not callable(self.kernel)


# ---------------------------------------------------------------------------
# game


@dataclass(frozen=True, eq=False)
class GameSpec:
    states: FiniteSpace
    actions: FiniteSpace
    horizon: int
    initial: np.ndarray
    reward: RewardModel
    ambiguity: tuple  # one AmbiguityFamily per time step

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ModelError("horizon must be a positive integer")
        amb = self.ambiguity
        if isinstance(amb, AmbiguityFamily):
            amb = (amb,) * self.horizon
        amb = tuple(amb)
        if len(amb) != self.horizon:
            raise ModelError(f"need one ambiguity family per time step ({self.horizon}), got {len(amb)}")
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (len(self.states),):
            raise ModelError("initial law must live on the state space")
        object.__setattr__(self, "ambiguity", amb)
        object.__setattr__(self, "initial", _readonly(init))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def nS(self) -> int:
        return len(self.states)

    @property
    def nA(self) -> int:
        return len(self.actions)

    @property
    def T(self) -> int:
        return self.horizon

    def constant_flow(self) -> np.ndarray:
        return np.tile(self.initial, (self.horizon, 1))

    def replace(self, **changes) -> "GameSpec":
        fields = dict(
            states=self.states,
            actions=self.actions,
            horizon=self.horizon,
            initial=self.initial,
            reward=self.reward,
            ambiguity=self.ambiguity,
        )
        fields.update(changes)
        return GameSpec(**fields)


CROWD_STATES = (0, 1, 2, 3, 4)
CROWD_ACTIONS = (-1, 0, 1)


def crowd_reference_kernel() -> np.ndarray:
    """Reference kernel of the crowd model, shape (5, 3, 5).

    Each of the three noise outcomes is tried independently; one that would
    leave the grid sends the agent back to its current state.
    """
    n = len(CROWD_STATES)
    k = np.zeros((n, len(CROWD_ACTIONS), n))
    for s in CROWD_STATES:
        for ai, a in enumerate(CROWD_ACTIONS):
            for eps in (-1, 0, 1):
                nxt = s + a + eps
                k[s, ai, nxt if 0 <= nxt < n else s] += 1.0 / 3.0
    return k


def make_crowd_game(lam: float, c: float, mu0, T: int = 2) -> GameSpec:
    if not lam >= 0 or not math.isfinite(lam):
        raise ModelError(f"lambda must be >= 0, got {lam}")
    if not c > 0:
        raise ModelError(f"c must be > 0, got {c}")
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (5,):
        raise ModelError("initial law must be a 5-point distribution on {0,...,4}")
    check_distribution(mu0, name="initial law")
    states = FiniteSpace.grid(CROWD_STATES)
    actions = FiniteSpace.grid(CROWD_ACTIONS)
    reward = CrowdReward(c=c, state_x=states.coords[:, 0], action_x=actions.coords[:, 0])
    ball = WassersteinBall(crowd_reference_kernel(), float(lam), states.distance_matrix())
    return GameSpec(states, actions, T, mu0, reward, ball)


def reward_eval(spec: GameSpec, s, a, s_next, mu) -> float:
    """Reward for labels ``(s, a, s')`` under population law ``mu``."""
    mu = check_distribution(mu, spec.nS, tol=1e-9, name="mu")
    return spec.reward(spec.states.index(s), spec.actions.index(a), spec.states.index(s_next), mu)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class Check:
    name: str
    status: str  # "pass", "fail" or "unchecked"
    detail: str = ""


@dataclass
class DiagnosticsReport:
    checks: list[Check]
    reward_bound: float | None = None

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.status == "fail"]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "reward_bound": self.reward_bound,
            "checks": [{"name": c.name, "status": c.status, "detail": c.detail} for c in self.checks],
        }


def _mu_samples(n: int, rng: np.random.Generator, k: int = 64) -> np.ndarray:
    vertices = np.eye(n)
    center = np.full((1, n), 1.0 / n)
    rand = rng.dirichlet(np.full(n, 0.3), size=k)
    return np.vstack([vertices, center, rand])


def validate_assumptions(spec: GameSpec, samples: int = 64, seed: int = 0) -> DiagnosticsReport:
    """Check simplex validity, reward boundedness and mu-independence of the sets.

    Never raises on a failed check; failures are listed in the report.
    """
    checks: list[Check] = []
    nS, nA = spec.nS, spec.nA

    worst = simplex_violation(spec.initial)
    rows_ok = worst <= SIMPLEX_TOL
    detail = [f"initial law violation {worst:.3g}"]
    for t, fam in enumerate(spec.ambiguity):
        for k, rows in enumerate(fam.rows()):
            v = simplex_violation(rows)
            if v > SIMPLEX_TOL:
                rows_ok = False
                bad = np.argwhere(np.abs(rows.sum(-1) - 1.0) > SIMPLEX_TOL)
                detail.append(f"t={t} kernel {k}: violation {v:.3g} at (s,a)={bad[:1].tolist()}")
    checks.append(Check("simplex", "pass" if rows_ok else "fail", "; ".join(detail)))

    rng = np.random.default_rng(seed)
    mus = _mu_samples(nS, rng, samples)
    bound = spec.reward.bound()
    largest = max(float(np.max(np.abs(spec.reward.table(mu)))) for mu in mus)
    if bound is None:
        checks.append(Check("reward_bound", "unchecked", f"max |r| on samples = {largest:.6g}"))
    else:
        ok = largest <= bound + 1e-12
        checks.append(
            Check("reward_bound", "pass" if ok else "fail", f"max |r| on samples = {largest:.6g}, bound {bound:.6g}")
        )

    for t, fam in enumerate(spec.ambiguity):
        if isinstance(fam, WassersteinBall) and fam.radius < 0:
            checks.append(Check(f"radius[t={t}]", "fail", f"radius {fam.radius}"))
        if fam.mu_independent:
            checks.append(Check(f"set_lipschitz[t={t}]", "pass", "sets independent of mu, constant 0"))
        else:
            # callable reference: look for mu-dependence on the samples
            same = True
            for s in range(nS):
                for a in range(nA):
                    ref = fam.reference(s, a, mus[0])
                    if any(not np.array_equal(ref, fam.reference(s, a, mu)) for mu in mus[1:]):
                        same = False
                        break
                if not same:
                    break
            status = "pass" if same else "unchecked"
            msg = "reference rows constant on samples, constant 0" if same else "mu-dependent sets: no constructive constant"
            checks.append(Check(f"set_lipschitz[t={t}]", status, msg))

    return DiagnosticsReport(checks, bound)
