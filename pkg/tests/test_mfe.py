import numpy as np
import pytest

from robust_mfg.dpp import backward_induction, check_mfe
from robust_mfg.mfe import SolveOptions, lambda_sweep, solve_mfe
from robust_mfg.model import crowd_reference_kernel, make_crowd_game

from .oracles import classical_mfg

MU0 = np.array([0.2, 0.1, 0.05, 0.25, 0.4])


def crowd(lam, T=2, mu0=MU0):
    return make_crowd_game(lam, 1e-7, mu0, T)


def test_options_validated():
    for bad in (dict(tol=0), dict(max_iter=0), dict(damping=0), dict(damping=1.5), dict(cycle_window=1)):
        with pytest.raises(ValueError):
            SolveOptions(**bad)


def test_no_uncertainty_concentrates_at_center():
    eq = solve_mfe(crowd(0.0))
    assert eq.converged
    assert int(np.argmax(eq.flow[1])) == 2


def test_large_uncertainty_pushes_to_boundary():
    eq0 = solve_mfe(crowd(0.0))
    eq1 = solve_mfe(crowd(1.0))
    edge0 = eq0.flow[1, 0] + eq0.flow[1, 4]
    edge1 = eq1.flow[1, 0] + eq1.flow[1, 4]
    assert edge1 > edge0
    assert edge1 > 0.5


def test_single_period_is_one_pass():
    spec = crowd(0.5, T=1)
    eq = solve_mfe(spec)
    assert eq.converged and eq.iterations == 1
    sol = backward_induction(spec, spec.constant_flow())
    np.testing.assert_array_equal(eq.policy, sol.piStar)
    assert eq.value == sol.Vflow


def test_initial_law_enforced():
    spec = crowd(0.25)
    init = np.full((2, 5), 0.2)
    eq = solve_mfe(spec, init)
    np.testing.assert_array_equal(eq.flow[0], MU0)


def test_flows_stay_on_simplex():
    rng = np.random.default_rng(0)
    for lam in (0.0, 0.25, 1 / 3, 0.5, 1.0):
        init = rng.dirichlet(np.ones(5), size=3)
        eq = solve_mfe(crowd(lam, T=3), init)
        assert np.all(eq.flow >= 0)
        np.testing.assert_allclose(eq.flow.sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(eq.terminal().sum(), 1.0, atol=1e-12)


def test_longer_horizon_oscillation_gives_up_cleanly():
    # the pure-response map chatters near a mixed point; damping is exhausted and reported
    eq = solve_mfe(crowd(0.5, T=3))
    assert not eq.converged
    assert eq.method == "damped"
    assert eq.iterations < 1000


def test_deterministic():
    a = solve_mfe(crowd(1 / 3))
    b = solve_mfe(crowd(1 / 3))
    np.testing.assert_array_equal(a.flow, b.flow)
    np.testing.assert_array_equal(a.policy, b.policy)
    np.testing.assert_array_equal(a.kernel, b.kernel)
    assert a.value == b.value and a.trace == b.trace


def test_non_convergence_is_reported():
    spec = crowd(0.0)
    eq = solve_mfe(spec, opts=SolveOptions(max_iter=1))
    assert not eq.converged
    assert eq.iterations == 1
    assert not eq.residuals.accepted(1e-8)


def test_damped_iteration_reaches_same_point():
    spec = crowd(0.0)
    pure = solve_mfe(spec)
    damped = solve_mfe(spec, opts=SolveOptions(damping=0.5))
    assert damped.converged and damped.method == "damped"
    np.testing.assert_allclose(damped.flow, pure.flow, atol=1e-9)


@pytest.mark.parametrize("lam", [1 / 3, 1.0])
def test_two_cycles_resolve_to_mixed_equilibria(lam):
    spec = crowd(lam)
    eq = solve_mfe(spec)
    assert eq.method == "mixed"
    assert eq.converged
    assert check_mfe(spec, eq).accepted(1e-8)
    # the blend randomizes in exactly one state
    mixed_states = np.argwhere((eq.policy > 0) & (eq.policy < 1))
    assert len({tuple(x[:2]) for x in mixed_states}) == 1


@pytest.mark.parametrize("lam", [1 / 3, 1.0])
def test_undamped_plain_iteration_cycles(lam):
    # a plain loop without the cycle resolution never settles on these radii
    spec = crowd(lam)
    flow = spec.constant_flow()
    seen = []
    for _ in range(12):
        sol = backward_induction(spec, flow)
        new = flow.copy()
        new[1] = np.einsum("s,sa,sak->k", flow[0], sol.piStar[0], sol.pStar[0])
        seen.append(new[1].copy())
        flow = new
    assert np.max(np.abs(seen[-1] - seen[-2])) > 1e-3
    np.testing.assert_allclose(seen[-1], seen[-3], atol=1e-12)


def test_sweep_rows():
    lams = [0.0, 0.25, 1 / 3, 0.5, 1.0]
    rows = lambda_sweep(crowd, lams)
    assert [r.lam for r in rows] == lams
    V = [r.value for r in rows]
    assert all(b <= a for a, b in zip(V, V[1:]))
    for r in rows:
        assert r.converged and r.error is None
        np.testing.assert_array_equal(r.mu1, r.equilibrium.flow[1])
        np.testing.assert_allclose(r.mu_terminal.sum(), 1.0)


def test_sweep_zero_is_classical():
    (row,) = lambda_sweep(crowd, [0.0])
    flow, value, _ = classical_mfg(crowd(0.0).reward.table, [crowd_reference_kernel()] * 2, MU0, 2)
    assert row.value == pytest.approx(value, abs=1e-12)
    np.testing.assert_allclose(row.mu1, flow[1], atol=1e-12)


def test_sweep_duplicate_rows_identical():
    a, b = lambda_sweep(crowd, [0.3, 0.3])
    assert a.value == b.value
    np.testing.assert_array_equal(a.mu1, b.mu1)
    np.testing.assert_array_equal(a.mu_terminal, b.mu_terminal)


def test_sweep_threads_match_serial():
    lams = [0.0, 0.25, 1 / 3, 0.5, 1.0]
    serial = lambda_sweep(crowd, lams)
    threaded = lambda_sweep(crowd, lams, threads=4)
    for a, b in zip(serial, threaded):
        assert a.value == b.value
        np.testing.assert_array_equal(a.mu_terminal, b.mu_terminal)


def test_sweep_records_errors():
    rows = lambda_sweep(crowd, [0.25, -1.0])
    assert rows[0].error is None
    assert rows[1].error is not None and "lambda" in rows[1].error
    assert not rows[1].converged


def test_equilibrium_json_shape():
    spec = crowd(0.25)
    d = solve_mfe(spec).to_dict(spec)
    assert d["states"] == ["0", "1", "2", "3", "4"]
    assert set(d["kernel"]["0"]["2"]) == {"-1", "0", "1"}
    assert len(d["terminal"]) == 5
