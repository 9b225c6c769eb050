import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from budgeted_discretion import dp
from budgeted_discretion.distributions import GainModel, make_spec
from budgeted_discretion.two_period import threshold_T21

from oracles import brute_force_excess


def exp_model(scale=1.0):
    return GainModel.from_shape(make_spec("exponential", scale=scale))


def test_zero_budget_grid_is_zero():
    sol = dp.solve(5, 0, exp_model())
    assert sol.W.shape == (6, 1)
    assert not sol.W.any()
    assert np.all(np.isinf(sol.thresholds))


def test_two_period_threshold_matches_closed_form():
    model = exp_model(3.0)
    sol = dp.solve(2, 1, model)
    assert sol.thresholds[2, 1] == pytest.approx(threshold_T21(model), rel=1e-12)
    assert sol.q[2, 1] == pytest.approx(0.5 * np.exp(-0.5), rel=1e-12)


def test_ample_budget_spends_every_misalignment():
    sol = dp.solve(4, 6, exp_model())
    for tau in range(1, 5):
        for k in range(tau, 7):
            assert sol.thresholds[tau, k] == 0.0
            assert sol.q[tau, k] == 0.5
            assert sol.W[tau, k] == pytest.approx(tau * 0.5)


def test_grids_are_read_only():
    sol = dp.solve(3, 2, exp_model())
    with pytest.raises(ValueError):
        sol.W[1, 1] = 0.0


def test_value_monotone_and_thresholds_decay():
    sol = dp.solve(20, 5, GainModel.from_shape(make_spec("gamma", 0.5)))
    assert np.all(np.diff(sol.W, axis=0) >= -1e-12)
    assert np.all(np.diff(sol.W, axis=1) >= -1e-12)
    thr = sol.thresholds[1:, 1:]
    # more budget lowers the bar; more time raises it
    assert np.all(np.diff(thr, axis=1) <= 1e-12)
    assert np.all(np.diff(thr, axis=0) >= -1e-12)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        dp.solve(-1, 2, exp_model())
    with pytest.raises(ValueError):
        dp.solve(3, 1.5, exp_model())


@pytest.mark.parametrize("T,K", [(1, 1), (3, 2), (5, 3), (4, 1)])
def test_matches_brute_force_on_discrete_law(T, K):
    values, probs, p = [0.5, 1.0, 2.5, 7.0], [0.4, 0.3, 0.2, 0.1], 0.3
    sol = dp.solve(T, K, GainModel.discrete(values, probs, p))
    assert np.allclose(sol.W, brute_force_excess(T, K, values, probs, p), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(values=st.lists(st.floats(0.01, 50.0), min_size=4, max_size=4, unique=True),
       weights=st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4),
       p=st.floats(0.0, 0.95), T=st.integers(1, 5), K=st.integers(0, 3))
def test_brute_force_property(values, weights, p, T, K):
    probs = np.array(weights) / np.sum(weights)
    probs[-1] = 1.0 - probs[:-1].sum()
    sol = dp.solve(T, K, GainModel.discrete(values, probs, p))
    assert np.allclose(sol.W, brute_force_excess(T, K, values, list(probs), p), atol=1e-8)


def test_profile_is_a_distribution():
    sol = dp.solve(20, 5, exp_model())
    prof = dp.spending_profile(sol)
    assert np.allclose(prof.pi.sum(axis=1), 1.0)
    assert np.all(prof.pi >= -1e-15)
    # expected spend equals the drop in expected budget
    assert prof.cumulative_spend[-1] == pytest.approx(5 - prof.expected_terminal_budget)
    assert np.all(prof.spend_prob <= 0.5 + 1e-12)


def test_profile_requires_solution():
    with pytest.raises(TypeError):
        dp.spending_profile("not a solution")


def test_policy_value_and_exports():
    sol = dp.solve(3, 2, exp_model())
    assert dp.policy_value(sol, 2.0) == pytest.approx(6.0 + sol.W[3, 2])
    heat = dp.export_heatmap(sol)
    assert [(r["tau"], r["k"]) for r in heat] == [(t, k) for t in (1, 2, 3) for k in (1, 2)]
    grid = dp.export_grid(sol)
    assert len(grid) == 4 * 3
    rows = dp.export_profile(dp.spending_profile(sol))
    assert list(rows[0]) == ["t", "spend_prob", "pi_0", "pi_1", "pi_2"]


def test_scale_invariance_of_profile():
    ref = dp.spending_profile(dp.solve(10, 3, exp_model(1.0)))
    for s in (0.01, 100.0):
        sol = dp.solve(10, 3, exp_model(s))
        assert np.allclose(dp.spending_profile(sol).spend_prob, ref.spend_prob, atol=1e-12)


def test_general_p_model():
    model = exp_model().with_p(0.8)
    sol = dp.solve(6, 2, model)
    assert sol.p == 0.8
    assert np.all(sol.q <= 0.2 + 1e-12)
