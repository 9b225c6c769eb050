import numpy as np
import pytest

from budgeted_discretion import dp, sim
from budgeted_discretion.distributions import GainModel, make_spec

from oracles import prophet_excess


def config(**kw):
    base = dict(T=6, K=2, improvement_spec=make_spec("exponential"), seed=3, n_episodes=20_000)
    base.update(kw)
    return sim.EpisodeConfig(**base)


def solved(cfg):
    return dp.solve(cfg.T, cfg.K, cfg.gain_model())


def test_config_validation():
    with pytest.raises(ValueError):
        config(n_episodes=0)
    with pytest.raises(ValueError):
        config(T=0)
    with pytest.raises(ValueError):
        config(substreams=0)


def test_solution_must_match_config():
    cfg = config()
    with pytest.raises(ValueError):
        sim.simulate_episodes(cfg, dp.solve(5, 2, cfg.gain_model()))


def test_deterministic_in_seed():
    cfg = config()
    a = sim.simulate_episodes(cfg, solved(cfg))
    b = sim.simulate_episodes(cfg, solved(cfg))
    assert a.welfare_dp == b.welfare_dp
    assert np.array_equal(a.dp_spend_counts, b.dp_spend_counts)


def test_ordering_and_excess():
    cfg = config(baseline=make_spec("gamma", 2.0), improvement_spec=make_spec("exponential", loc=1.0))
    sol = solved(cfg)
    res = sim.simulate_episodes(cfg, sol)
    assert res.ordering_violations == 0
    assert res.welfare_policy.mean <= res.welfare_dp.mean <= res.welfare_oracle.mean
    assert abs(res.excess_dp.mean - sol.W[cfg.T, cfg.K]) < 4 * res.excess_dp.se
    assert res.welfare_policy.mean == pytest.approx(cfg.T * cfg.mu_pol, rel=0.02)


def test_baseline_cancels_from_excess():
    plain = config()
    shifted = config(baseline=5.0)
    a = sim.simulate_episodes(plain, solved(plain))
    b = sim.simulate_episodes(shifted, solved(shifted))
    assert a.excess_dp.mean == pytest.approx(b.excess_dp.mean, abs=1e-12)
    assert b.welfare_dp.mean == pytest.approx(a.welfare_dp.mean + 2 * 5.0 * plain.T, rel=1e-12)


@pytest.mark.parametrize("T,K", [(3, 1), (4, 2), (5, 3)])
def test_dp_value_bounded_by_prophet_enumeration(T, K):
    values, probs, p = [1.0, 3.0, 8.0], [0.6, 0.3, 0.1], 0.5
    sol = dp.solve(T, K, GainModel.discrete(values, probs, p))
    assert sol.W[T, K] <= prophet_excess(T, K, values, probs, p) + 1e-12


def test_prophet_keeps_top_gains():
    cfg = config(T=3, K=1, n_episodes=50_000)
    prophet = sim.prophet_value(cfg)
    # policy welfare plus E[max of three gains], each Exp(1) w.p. 1/2 else 0
    rng = np.random.default_rng(9)
    g = np.where(rng.random((400_000, 3)) < 0.5, 0.0, rng.exponential(size=(400_000, 3)))
    assert prophet == pytest.approx(cfg.T * cfg.mu_pol + g.max(axis=1).mean(), abs=0.03)


def test_empirical_profile_guards():
    cfg = config(n_episodes=500)
    res = sim.simulate_episodes(cfg, solved(cfg))
    with pytest.raises(ValueError):
        sim.empirical_profile(res)
    freq, se = sim.empirical_profile(res, min_episodes=100)
    assert freq.shape == se.shape == (cfg.T,)


def test_rows():
    cfg = config(n_episodes=1000)
    sol = solved(cfg)
    res = sim.simulate_episodes(cfg, sol)
    rows = sim.summary_rows(res)
    assert [r["agent"] for r in rows] == ["policy", "dp", "prophet"]
    prof = sim.profile_rows(res, dp.spending_profile(sol).spend_prob)
    assert [r["t"] for r in prof] == list(range(1, cfg.T + 1))
    assert 0.45 < res.p_hat < 0.55
