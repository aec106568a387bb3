import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_mfg.inner import instance, worst_case_expectation
from robust_mfg.model import (
    CrowdReward,
    FiniteSpace,
    GameSpec,
    ModelError,
    Singleton,
    TableReward,
    WassersteinBall,
    check_distribution,
    crowd_reference_kernel,
    make_crowd_game,
    reward_eval,
    validate_assumptions,
)

MU0 = (0.2, 0.1, 0.05, 0.25, 0.4)


def crowd(lam=0.0, c=1e-7, T=2):
    return make_crowd_game(lam, c, MU0, T)


# --- spaces and distributions


def test_space_invariants():
    with pytest.raises(ModelError):
        FiniteSpace([])
    with pytest.raises(ModelError):
        FiniteSpace([0, 0])
    with pytest.raises(ModelError):
        FiniteSpace(["a", "b"], [[0.0], [1.0, 2.0]])
    sp = FiniteSpace(["a", "b"], [[0.0, 0.0], [3.0, 4.0]])
    assert sp.distance_matrix()[0, 1] == 5.0
    assert sp.index("b") == 1


def test_distribution_tolerance():
    check_distribution([0.5, 0.5])
    with pytest.raises(ModelError):
        check_distribution([0.5, 0.5 + 1e-10])
    with pytest.raises(ModelError):
        check_distribution([1.5, -0.5])


# --- crowd model


def test_reference_kernel_rows():
    k = crowd_reference_kernel()
    np.testing.assert_array_equal(k[0, 0], [1, 0, 0, 0, 0])  # (s, a) = (0, -1)
    np.testing.assert_allclose(k[2, 1], [0, 1 / 3, 1 / 3, 1 / 3, 0], atol=1e-15)
    np.testing.assert_array_equal(k[4, 2], [0, 0, 0, 0, 1])  # (s, a) = (4, 1)
    # each escaping branch returns to s on its own: (0, 0) keeps 1/3 (eps=-1) + 1/3 (eps=0)
    np.testing.assert_allclose(k[0, 1], [2 / 3, 1 / 3, 0, 0, 0], atol=1e-15)
    assert np.all(np.abs(k.sum(-1) - 1) <= 1e-12)


def test_reference_rows_independent_of_mu():
    spec = crowd(0.5)
    fam = spec.ambiguity[0]
    rng = np.random.default_rng(0)
    for _ in range(10):
        m1, m2 = rng.dirichlet(np.ones(5), size=2)
        for s in range(5):
            for a in range(3):
                np.testing.assert_array_equal(fam.reference(s, a, m1), fam.reference(s, a, m2))


def test_make_crowd_game_rejects():
    with pytest.raises(ModelError):
        make_crowd_game(-0.1, 1e-7, MU0)
    with pytest.raises(ModelError):
        make_crowd_game(0.1, 0.0, MU0)
    with pytest.raises(ModelError):
        make_crowd_game(0.1, 1e-7, (0.5, 0.5))
    with pytest.raises(ModelError):
        make_crowd_game(0.1, 1e-7, (0.5, 0.5, 0.1, 0, 0))


def test_crowd_reward_examples():
    spec = crowd()
    uniform = np.full(5, 0.2)
    v = reward_eval(spec, 2, 0, 2, uniform)
    assert v == pytest.approx(1 - math.log(0.2 + 1e-7), abs=1e-12)
    assert v == pytest.approx(2.609438, abs=1e-6)
    mu = np.array([0.0, 0.0, 1 - 1e-7, 1e-7, 0.0])
    assert reward_eval(spec, 0, 1, 2, mu) == pytest.approx(0.75, abs=1e-12)


def test_table_reward_zero():
    r = TableReward(np.zeros((3, 2, 3)))
    assert np.all(r.table(np.full(3, 1 / 3)) == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2), st.integers(0, 4), st.floats(0.0, 0.9), st.floats(0.01, 0.1))
def test_crowd_reward_decreasing_in_own_mass(s, a, s2, base, bump):
    spec = crowd()
    rest = np.full(5, (1 - base) / 4)
    rest[s2] = base
    more = rest.copy()
    more[s2] += bump
    more /= more.sum()
    # more mass at s2 (others scaled down) lowers r(., ., s2, .)
    assert spec.reward(s, a, s2, more) < spec.reward(s, a, s2, rest)


def test_singleton_equals_zero_ball():
    spec = crowd(0.0)
    single = Singleton(crowd_reference_kernel())
    rng = np.random.default_rng(1)
    for _ in range(30):
        f = rng.normal(size=5)
        mu = rng.dirichlet(np.ones(5))
        s, a = rng.integers(5), rng.integers(3)
        ball = worst_case_expectation(f, instance(spec.ambiguity[0], s, a, mu))
        one = worst_case_expectation(f, instance(single, s, a, mu))
        np.testing.assert_array_equal(ball.minimizer, one.minimizer)
        assert ball.value == one.value


def test_game_spec_horizon_families():
    spec = crowd(0.25, T=3)
    assert len(spec.ambiguity) == 3
    with pytest.raises(ModelError):
        GameSpec(spec.states, spec.actions, 2, spec.initial, spec.reward, spec.ambiguity)
    with pytest.raises(ModelError):
        GameSpec(spec.states, spec.actions, 0, spec.initial, spec.reward, spec.ambiguity[0])


# --- assumption diagnostics


def test_validate_crowd_passes():
    rep = validate_assumptions(crowd(1.0))
    assert rep.ok, rep.failures
    assert rep.reward_bound == pytest.approx(4.25 + 16.1181, abs=1e-4)
    assert rep.reward_bound == pytest.approx(17 / 4 - math.log(1e-7), abs=1e-12)


def test_validate_flags_bad_bound():
    states = FiniteSpace.grid([0, 1])
    actions = FiniteSpace.grid([0])
    r0 = np.zeros((2, 1, 2))
    r0[0, 0, 1] = 5.0
    spec = GameSpec(states, actions, 1, [0.5, 0.5], TableReward(r0, claimed_bound=1.0), Singleton(np.full((2, 1, 2), 0.5)))
    rep = validate_assumptions(spec)
    assert [c.name for c in rep.failures] == ["reward_bound"]


def test_validate_flags_bad_row():
    states = FiniteSpace.grid([0, 1])
    actions = FiniteSpace.grid([0])
    k = np.full((2, 1, 2), 0.5)
    k[1, 0] = [0.45, 0.45]
    spec = GameSpec(states, actions, 1, [0.5, 0.5], TableReward(np.zeros((2, 1, 2))), Singleton(k))
    rep = validate_assumptions(spec)
    assert [c.name for c in rep.failures] == ["simplex"]


def test_validate_callable_kernel_unchecked():
    states = FiniteSpace.grid([0, 1])
    actions = FiniteSpace.grid([0])

    def kernel(s, a, mu):
        return np.array([mu[0], mu[1]])

    spec = GameSpec(states, actions, 1, [0.5, 0.5], TableReward(np.zeros((2, 1, 2))),
                    WassersteinBall(kernel, 0.1, states.distance_matrix()))
    rep = validate_assumptions(spec)
    statuses = {c.name: c.status for c in rep.checks}
    assert statuses["set_lipschitz[t=0]"] == "unchecked"
    assert rep.ok
