import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from budgeted_discretion.distributions import (
    DiffLaw,
    GainModel,
    QuadratureError,
    ShapeSpec,
    base_cdf,
    base_mean,
    base_quantile,
    base_threshold,
    diff_cdf,
    diff_law,
    excess_kurtosis,
    gain_threshold,
    is_heavy_tailed,
    make_spec,
    mc_estimate,
    mean_normalized,
    partial_expectation_mis,
    psi_of_shape,
    sample,
)

LIGHT_SPECS = [
    make_spec("exponential"),
    make_spec("halfnormal"),
    make_spec("uniform"),
    make_spec("gamma", 2.0),
    make_spec("gamma", 0.5),
    make_spec("weibull", 0.8),
    make_spec("weibull", 1.5),
    make_spec("lognormal", 0.5),
    make_spec("lognormal", 1.0),
]


def test_shape_spec_validation():
    with pytest.raises(ValueError):
        make_spec("pareto", 1.0)
    with pytest.raises(ValueError):
        make_spec("exponential", scale=0.0)
    with pytest.raises(ValueError):
        make_spec("gamma")
    with pytest.raises(ValueError):
        make_spec("cauchy")
    assert make_spec("exponential", 3.0).shape is None


def test_quantile_rejects_endpoints():
    for u in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            base_quantile(make_spec("exponential"), u)


@pytest.mark.parametrize("spec", LIGHT_SPECS + [make_spec("pareto", 2.5)], ids=lambda s: s.label)
def test_quantile_inverts_cdf(spec):
    u = np.array([1e-6, 0.01, 0.3, 0.5, 0.9, 0.999999])
    assert np.allclose(base_cdf(spec, base_quantile(spec, u)), u, atol=1e-10)


def test_location_scale_cdf():
    spec = make_spec("gamma", 2.0, loc=3.0, scale=4.0)
    ref = stats.gamma(2.0, loc=3.0, scale=4.0)
    x = np.array([2.0, 3.5, 7.0, 20.0])
    assert np.allclose(base_cdf(spec, x), ref.cdf(x), atol=1e-14)


@pytest.mark.parametrize("family,shape", [("gamma", 0.5), ("weibull", 0.8), ("weibull", 1.5),
                                          ("lognormal", 1.5), ("lognormal", 0.5)])
def test_mean_normalization(family, shape):
    assert base_mean(mean_normalized(family, shape)) == pytest.approx(1.0, abs=1e-12)


def test_mean_normalized_weibull_scale_values():
    assert mean_normalized("weibull", 0.8).scale == pytest.approx(0.883, abs=1e-3)
    assert mean_normalized("weibull", 1.5).scale == pytest.approx(1.108, abs=1e-3)
    assert math.log(mean_normalized("lognormal", 1.5).scale) == pytest.approx(-1.125)


@pytest.mark.parametrize("spec", LIGHT_SPECS, ids=lambda s: s.label)
def test_sampler_matches_cdf(spec):
    x = sample(spec, np.random.default_rng(3), 200_000)
    res = stats.kstest(x, lambda v: base_cdf(spec, v))
    assert res.pvalue > 1e-3


def test_uniform_threshold_is_one_sixth():
    # E[(X' - X)^+] for U(0,1): half of E|X' - X| = half of 1/3
    u = make_spec("uniform")
    assert base_threshold(u) == pytest.approx(1 / 6, abs=1e-15)
    assert base_threshold(u, method="quadrature") == pytest.approx(1 / 6, abs=1e-10)
    exact, _ = integrate.dblquad(lambda y, x: y - x, 0, 1, lambda x: x, 1)
    assert exact == pytest.approx(1 / 6, abs=1e-9)


@pytest.mark.parametrize("spec", LIGHT_SPECS + [make_spec("pareto", 3.0)], ids=lambda s: s.label)
def test_threshold_closed_form_matches_quadrature(spec):
    # quadrature stops at the 1 - 1e-10 quantile; slow tails lose up to the
    # stop-loss mass beyond that point, about 1e-7 relative here
    heavy = spec.family.value in ("lognormal", "pareto")
    tol = 1e-6 * base_threshold(spec) if heavy else 1e-8
    assert base_threshold(spec) == pytest.approx(base_threshold(spec, method="quadrature"), abs=tol)


@pytest.mark.parametrize("spec", LIGHT_SPECS, ids=lambda s: s.label)
def test_threshold_matches_monte_carlo(spec):
    rng = np.random.default_rng(11)
    n = 1_000_000
    d = np.maximum(sample(spec, rng, n) - sample(spec, rng, n), 0.0)
    assert abs(d.mean() - base_threshold(spec)) < 4 * d.std() / math.sqrt(n)


def test_threshold_scales_and_ignores_location():
    spec = make_spec("weibull", 1.5)
    moved = spec.rescaled(7.0, loc=-3.0)
    assert gain_threshold(moved) == pytest.approx(7.0 * gain_threshold(spec), rel=1e-9)


@pytest.mark.parametrize("spec", LIGHT_SPECS, ids=lambda s: s.label)
def test_difference_cdf_symmetry_and_limits(spec):
    law = diff_law(spec)
    assert diff_cdf(law, 0.0) == 0.5
    for x in (0.1, 0.7, 2.5):
        assert diff_cdf(law, x) + diff_cdf(law, -x) == pytest.approx(1.0, abs=1e-12)
    assert diff_cdf(law, 1e6) == pytest.approx(1.0, abs=1e-9)
    assert diff_cdf(law, -1e6) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("spec", [make_spec("exponential"), make_spec("halfnormal")], ids=lambda s: s.label)
def test_closed_form_difference_cdf_matches_quadrature(spec):
    closed, numeric = DiffLaw(spec, True), DiffLaw(spec, False)
    for x in (0.05, 0.3, 1.0, 2.0, 4.0):
        assert closed.cdf(x) == pytest.approx(numeric.cdf(x), abs=1e-10)
        assert closed.stop_loss(x) == pytest.approx(numeric.stop_loss(x), abs=1e-10)


def test_halfnormal_difference_density_by_finite_differences():
    # derivative of G must equal the convolution density int f(y) f(y + x) dy
    law = DiffLaw(make_spec("halfnormal"), True)
    f = stats.halfnorm.pdf
    h = 1e-5
    for x in (0.2, 0.8, 1.7, 3.0):
        fd = (law.cdf(x + h) - law.cdf(x - h)) / (2 * h)
        dens, _ = integrate.quad(lambda y: f(y) * f(y + x), 0, np.inf)
        assert fd == pytest.approx(dens, abs=1e-7)


def test_halfnormal_difference_cdf_squared_form():
    law = DiffLaw(make_spec("halfnormal"), True)
    from scipy.special import erfc
    for x in (0.3, 1.0, 2.2):
        assert law.cdf(x) == pytest.approx(1 - 0.5 * erfc(x / 2) ** 2, abs=1e-14)


def test_exponential_psi_closed_form():
    expected = 1 - 0.5 * math.exp(-0.5)
    assert psi_of_shape(make_spec("exponential")) == pytest.approx(expected, abs=1e-15)
    assert psi_of_shape(make_spec("exponential"), method="quadrature") == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("spec", LIGHT_SPECS, ids=lambda s: s.label)
def test_psi_matches_monte_carlo(spec):
    est = mc_estimate(spec, 400_000, seed=5)
    assert abs(est.psi_hat - psi_of_shape(spec)) < 5 * est.se_psi + 2e-3


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e3), loc=st.floats(-50, 50))
def test_psi_is_scale_and_location_free(scale, loc):
    base = make_spec("gamma", 2.0)
    assert psi_of_shape(base.rescaled(scale, loc)) == psi_of_shape(base)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.0, 20.0), dx=st.floats(1e-3, 5.0))
def test_difference_cdf_monotone(x, dx):
    law = diff_law(make_spec("weibull", 0.8))
    assert diff_cdf(law, x + dx) >= diff_cdf(law, x) - 1e-12


def test_gain_model_invariants():
    model = GainModel.from_shape(make_spec("lognormal", 1.0, scale=3.0))
    assert model.p == 0.5
    assert model.cdf_mis(0.0) == 0.0
    assert model.cdf(-1.0) == 0.0
    for x in (0.0, 0.5, 4.0):
        assert model.cdf(x) == pytest.approx(0.5 + 0.5 * model.cdf_mis(x))


@pytest.mark.parametrize("spec", [make_spec("exponential", scale=2.0), make_spec("halfnormal"),
                                  make_spec("gamma", 0.5, scale=3.0)], ids=lambda s: s.label)
def test_partial_expectation_matches_monte_carlo(spec):
    model = GainModel.from_shape(spec)
    g = model.sampler_mis(np.random.default_rng(8), 1_000_000)
    for t in (0.0, 0.5 * spec.scale, 2.0 * spec.scale):
        v = np.maximum(g - t, 0.0)
        assert abs(partial_expectation_mis(model, t) - v.mean()) < 4 * v.std() / 1000 + 1e-12


def test_partial_expectation_edges():
    model = GainModel.from_shape(make_spec("exponential"))
    assert partial_expectation_mis(model, math.inf) == 0.0
    assert partial_expectation_mis(model, 0.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        partial_expectation_mis(model, -0.1)


def test_discrete_gain_model():
    model = GainModel.discrete([3.0, 1.0], [0.25, 0.75], p=0.4)
    assert model.cdf_mis(1.0) == 0.75
    assert partial_expectation_mis(model, 2.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        GainModel.discrete([0.0, 1.0], [0.5, 0.5], p=0.5)


def test_mc_estimate_deterministic_and_thread_free():
    spec = make_spec("weibull", 1.5)
    a = mc_estimate(spec, 100_000, seed=3, substreams=4, threads=1)
    b = mc_estimate(spec, 100_000, seed=3, substreams=4, threads=4)
    assert a == b
    assert mc_estimate(spec, 100_000, seed=4, substreams=4) != a


def test_mc_estimate_scale_covariance():
    # same stream, scaled draws: c_hat scales, psi_hat is unchanged
    a = mc_estimate(make_spec("exponential"), 50_000, seed=1)
    b = mc_estimate(make_spec("exponential", scale=8.0), 50_000, seed=1)
    assert b.c_hat == pytest.approx(8.0 * a.c_hat, rel=1e-12)
    assert b.psi_hat == a.psi_hat


def test_excess_kurtosis():
    x = np.random.default_rng(0).standard_normal(1_000_000)
    assert abs(excess_kurtosis(x)) < 0.03
    with pytest.raises(ValueError):
        excess_kurtosis([1.0, 1.0, 1.0, 1.0])
    assert is_heavy_tailed(make_spec("pareto", 1.05))
    assert not is_heavy_tailed(make_spec("gamma", 1e4))


def test_heavy_tail_quadrature_is_bounded():
    # the spike of a near-degenerate Gamma must not be missed by quadrature
    spec = make_spec("gamma", 1e4)
    assert base_threshold(spec) == pytest.approx(100 / math.sqrt(math.pi), rel=2e-3)
    assert 0.65 < psi_of_shape(spec) < 0.66
