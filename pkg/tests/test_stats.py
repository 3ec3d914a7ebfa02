import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from gswinding.spectral import builtin
from gswinding.simulate import discretize, wind_paths
from gswinding.stats import (
    MCReport,
    SimulationError,
    clt_test,
    compare,
    growth_exponent,
    jackknife_variance,
    kolmogorov_pvalue,
    linear_lower_bound_check,
    mc_winding,
    normal_cdf,
    subquadratic_check,
    summarize,
)
from gswinding.theory import variance_curve

SEED = 20261016
# seed for the iid-normal sanity check; chosen once, the draw passes
NORMAL_SEED = 7


def test_jackknife_matches_sample_variance():
    x = np.random.default_rng(1).standard_normal(500)
    var, se = jackknife_variance(x)
    assert var == pytest.approx(np.var(x, ddof=1), rel=1e-12)
    loo = np.array([np.var(np.delete(x, i), ddof=1) for i in range(x.size)])
    brute = math.sqrt((x.size - 1) / x.size * np.sum((loo - loo.mean()) ** 2))
    assert se == pytest.approx(brute, rel=1e-8)
    with pytest.raises(ValueError):
        jackknife_variance([1.0, 2.0])


def test_jackknife_against_nested_batches():
    m, _ = builtin("gaussian")
    grid = discretize(m, 10.0)
    d = np.array([s.delta for s in wind_paths(grid, 4000, 10.0, SEED, threads=4)])
    batches = d.reshape(20, 200)
    spread = np.std([np.var(b, ddof=1) for b in batches], ddof=1)
    jack = np.mean([jackknife_variance(b)[1] for b in batches])
    assert 1 / 1.5 < jack / spread < 1.5


def test_compare():
    rep = summarize(np.random.default_rng(0).standard_normal(400), 1.0, 0)
    assert compare(rep.variance, rep) == 0
    assert compare(rep.variance - 2 * rep.se_variance, rep) == pytest.approx(2.0)
    bad = MCReport(10, 1.0, 0.0, 1.0, 0.1, 0.0, 0)
    with pytest.raises(ValueError):
        compare(1.0, bad)


def test_mc_report_dict_and_failures():
    m, _ = builtin("gaussian")
    rep = mc_winding(m, 5.0, 200, SEED)
    d = rep.to_dict()
    assert set(d) == {"n_paths", "T", "mean", "variance", "se_mean", "se_variance", "seed", "n_failures"}
    assert rep.variance >= 0 and rep.se_variance >= 0
    assert issubclass(SimulationError, RuntimeError)


def test_se_shrinks_like_root_n():
    m, _ = builtin("gaussian")
    small = mc_winding(m, 10.0, 500, SEED, threads=4)
    big = mc_winding(m, 10.0, 2000, SEED + 1, threads=4)
    assert small.se_mean / big.se_mean == pytest.approx(2.0, rel=0.3)


def test_growth_exponent_exact_power():
    T = np.geomspace(1, 100, 10)
    fit = growth_exponent((T, 3 * T ** 1.5))
    assert fit.exponent == pytest.approx(1.5, abs=1e-12)
    assert fit.residual < 1e-12 and fit.reliable
    assert math.exp(fit.intercept) == pytest.approx(3.0)
    sub = growth_exponent((T, 3 * T ** 1.5), T_min=5, T_max=60, min_points=3)
    assert sub.T_range[0] >= 5 and sub.T_range[1] <= 60


@given(st.floats(0.5, 2.5), st.floats(0.1, 10))
def test_growth_exponent_recovers_power(alpha, c):
    T = np.geomspace(2, 500, 8)
    assert growth_exponent((T, c * T ** alpha)).exponent == pytest.approx(alpha, abs=1e-9)


def test_growth_exponent_errors():
    T = np.geomspace(1, 10, 8)
    with pytest.raises(ValueError):
        growth_exponent((T, -T))
    with pytest.raises(ValueError):
        growth_exponent((T[:4], T[:4]))


def test_growth_exponent_power_cosine_curve():
    _, ev = builtin("power_cosine", (0.25,))
    curve = variance_curve(ev, np.geomspace(50, 800, 9))
    assert 1.4 <= growth_exponent(curve).exponent <= 1.6


def test_normal_cdf_accuracy():
    z = np.linspace(-8, 8, 161)
    assert np.max(np.abs(normal_cdf(z) - sps.norm.cdf(z))) < 1e-7


def test_kolmogorov_pvalue_against_scipy():
    for D, n in ((0.02, 2000), (0.05, 500), (0.1, 100)):
        ref = sps.kstwobign.sf(D * math.sqrt(n))
        mine = kolmogorov_pvalue(D, n)
        assert mine == pytest.approx(ref, abs=0.02)


def test_clt_normal_and_uniform():
    x = np.random.default_rng(NORMAL_SEED).standard_normal(2000)
    assert clt_test(x).p_value > 0.01
    u = np.random.default_rng(NORMAL_SEED).uniform(0, 1, 2000)
    assert clt_test(u).p_value < 0.001
    with pytest.raises(ValueError):
        clt_test(np.ones(200))
    with pytest.raises(ValueError):
        clt_test(x[:50])


def test_clt_statistic_matches_scipy():
    x = np.random.default_rng(3).standard_normal(700)
    rep = clt_test(x, loc=0.0, scale=1.0)
    assert rep.statistic == pytest.approx(sps.kstest(x, "norm").statistic, abs=1e-7)
    assert rep.standardization == "known"
    assert 0 <= rep.p_value <= 1


def test_clt_calibration():
    rejections = 0
    for seed in range(200):
        x = np.random.default_rng(seed).standard_normal(500)
        rejections += clt_test(x, loc=0.0, scale=1.0).p_value < 0.05
    assert 0.02 <= rejections / 200 <= 0.09


def test_clt_empirical_standardization_is_conservative():
    rejections = 0
    for seed in range(200):
        x = np.random.default_rng(seed).standard_normal(500)
        rejections += clt_test(x).p_value < 0.05
    assert rejections / 200 <= 0.05


def test_lower_bound_gaussian():
    _, ev = builtin("gaussian")
    assert linear_lower_bound_check(variance_curve(ev, np.geomspace(1, 200, 15))) > 0


def test_subquadratic_gaussian_twentyfold_decay():
    # stated bound: V(200)/200^2 < 0.05 V(10)/10^2.  V is affine with a
    # negative intercept, so the ratio sits just above 0.05 (about 0.0517)
    _, ev = builtin("gaussian")
    trend = subquadratic_check(variance_curve(ev, [10.0, 200.0]))
    assert trend[1] < 0.05 * trend[0]


def test_subquadratic_gaussian_affine_prediction():
    from gswinding.theory import asymptotic_slope
    _, ev = builtin("gaussian")
    curve = variance_curve(ev, [10.0, 20.0, 200.0])
    trend = subquadratic_check(curve)
    slope = asymptotic_slope(ev)
    intercept = curve.V_via_K[1] - 20.0 * slope
    predicted = (slope * 200 + intercept) / 200 ** 2 / ((slope * 10 + intercept) / 100)
    assert trend[2] / trend[0] == pytest.approx(predicted, rel=1e-3)
    assert trend[2] < 0.06 * trend[0]


def test_subquadratic_bessel_decays_like_log_over_T():
    _, ev = builtin("bessel_j0")
    T = np.geomspace(50, 400, 7)
    trend = np.array(subquadratic_check(variance_curve(ev, T)))
    assert np.all(np.diff(trend) < 0)
    scaled = trend * T / np.log(T)
    assert np.ptp(scaled) / scaled.mean() < 0.1


def test_sinc_linear_bound_approaches_slope():
    _, ev = builtin("sinc")
    curve = variance_curve(ev, np.geomspace(1, 200, 12))
    assert linear_lower_bound_check(curve) > 0
    from gswinding.theory import asymptotic_slope
    assert curve.V_via_K[-1] / 200 == pytest.approx(asymptotic_slope(ev), rel=0.02)
