import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from levyfluid.levy_core import (
    JumpDistribution,
    NetInputModel,
    NumericsError,
    UnstableModelError,
    inverse_varphi,
    phi,
    reflected_moments,
    sample_jump,
    sample_residual,
    varphi,
    varphi_derivatives_at_zero,
)

EXP1 = JumpDistribution.exponential(1.0)
CONFIG_A = NetInputModel(0.0, 0.5, EXP1, 1.0)

LAWS = [
    JumpDistribution.exponential(2.0),
    JumpDistribution.deterministic(1.5),
    JumpDistribution.erlang(3, 2.0),
    JumpDistribution.hyperexponential([0.3, 0.7], [0.5, 4.0]),
]


def scipy_law(law):
    """Independent scipy.stats oracle for each family (hyperexponential returns parts)."""
    if law.family == "exponential":
        return stats.expon(scale=1 / law.params[0])
    if law.family == "erlang":
        return stats.gamma(a=law.params[0], scale=1 / law.params[1])
    return None


# -- JumpDistribution ------------------------------------------------------------


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_moments_match_independent_oracle(law):
    for k in (1, 2, 3):
        if law.family == "deterministic":
            expected = law.params[0] ** k
        elif law.family == "hyperexponential":
            expected = sum(w * stats.expon(scale=1 / r).moment(k) for w, r in zip(law.weights, law.rates))
        else:
            expected = scipy_law(law).moment(k)
        assert law.moment(k) == pytest.approx(expected, rel=1e-12)
    assert law.moment(0) == 1.0


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_lst_matches_quadrature(law):
    for theta in (0.1, 1.0, 7.0):
        if law.family == "deterministic":
            expected = math.exp(-theta * law.params[0])
        else:
            expected = integrate.quad(lambda x: math.exp(-theta * x) * law_pdf(law, x), 0, np.inf)[0]
        assert law.lst(theta) == pytest.approx(expected, rel=1e-9)


def law_pdf(law, x):
    if law.family == "hyperexponential":
        return sum(w * r * math.exp(-r * x) for w, r in zip(law.weights, law.rates))
    return scipy_law(law).pdf(x)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_lst_basic_invariants(law):
    assert law.lst(0.0) == 1.0
    grid = np.geomspace(1e-6, 1e2, 40)
    values = law.lst(grid)
    assert np.all(values > 0) and np.all(values <= 1)
    assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_lst_agrees_with_monte_carlo(law):
    rng = np.random.default_rng(11)
    z = law.sample(rng, 100_000)
    for theta in np.geomspace(1e-6, 1e3, 10):
        if law.lst(theta) < 100 / z.size:
            # rare-event regime: the sample cannot resolve the small-jump tail
            continue
        e = np.exp(-theta * z)
        se = e.std(ddof=1) / math.sqrt(z.size)
        assert abs(e.mean() - law.lst(theta)) <= 4 * se + 1e-12


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_weighted_lst_is_minus_derivative(law):
    for theta in (0.3, 2.0):
        h = 1e-6
        fd = -(law.lst(theta + h) - law.lst(theta - h)) / (2 * h)
        assert law.weighted_lst(theta) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_residual_transform_and_moments(law):
    # residual density P(Z > x) / EZ, integrated numerically from the CDF
    m = law.mean()
    upper = 60.0 / min(law.rates) if law.family == "hyperexponential" else 60.0
    for theta in (0.0, 0.5, 2.0):
        expected = integrate.quad(lambda x: math.exp(-theta * x) * (1 - law.cdf(x)) / m, 0, upper, limit=200)[0]
        assert law.residual_lst(theta) == pytest.approx(expected, rel=1e-7)
    for k in (1, 2):
        assert law.residual_moment(k) == pytest.approx(law.moment(k + 1) / ((k + 1) * m), rel=1e-12)


def test_cdf_families():
    assert EXP1.cdf(1.0) == pytest.approx(1 - math.exp(-1))
    erl = JumpDistribution.erlang(2, 2.0)
    assert erl.cdf(1.0) == pytest.approx(stats.gamma(a=2, scale=0.5).cdf(1.0), rel=1e-12)
    det = JumpDistribution.deterministic(1.0)
    assert det.cdf(0.999) == 0.0 and det.cdf(1.0) == 1.0


def test_construction_errors():
    with pytest.raises(ValueError):
        JumpDistribution.exponential(0.0)
    with pytest.raises(ValueError):
        JumpDistribution.deterministic(-1.0)
    with pytest.raises(ValueError):
        JumpDistribution.hyperexponential([0.5, 0.6], [1.0, 2.0])
    with pytest.raises(ValueError):
        JumpDistribution("pareto", (1.0,))
    with pytest.raises(ValueError):
        EXP1.lst(-0.1)


def test_hyperexponential_weights_tolerance():
    JumpDistribution.hyperexponential([0.3, 0.7 + 1e-13], [1.0, 2.0])
    with pytest.raises(ValueError):
        JumpDistribution.hyperexponential([0.3, 0.7 + 1e-9], [1.0, 2.0])


# -- samplers --------------------------------------------------------------------


def test_sample_jump_examples():
    rng = np.random.default_rng(1)
    assert sample_jump(JumpDistribution.deterministic(1.0), rng) == 1.0
    x = sample_jump(JumpDistribution.exponential(2.0), rng, size=1_000_000)
    assert abs(x.mean() - 0.5) <= 3 * 0.5 / 1e3
    x = sample_jump(JumpDistribution.erlang(2, 2.0), rng, size=1_000_000)
    assert abs(x.mean() - 1.0) <= 3e-3


def test_sample_residual_examples():
    rng = np.random.default_rng(2)
    x = sample_residual(JumpDistribution.deterministic(1.0), rng, size=1_000_000)
    assert x.min() > 0 and x.max() < 1
    assert abs(x.mean() - 0.5) <= 1e-3
    x = sample_residual(JumpDistribution.exponential(1.0), rng, size=1_000_000)
    assert abs(x.mean() - 1.0) <= 3e-3
    x = sample_residual(JumpDistribution.deterministic(2.0), rng, size=1_000_000)
    assert abs(np.mean(x**2) - 4 / 3) <= 5e-3


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.family)
def test_sample_residual_matches_residual_law(law):
    rng = np.random.default_rng(3)
    x = law.sample_residual(rng, 200_000)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - law.residual_moment(1)) <= 4 * se
    e = np.exp(-x)
    assert abs(e.mean() - law.residual_lst(1.0)) <= 4 * e.std(ddof=1) / math.sqrt(x.size)


# -- NetInputModel ---------------------------------------------------------------


def test_phi_examples():
    assert phi(CONFIG_A, 0.0) == 0.0
    assert phi(CONFIG_A, 1.0) == pytest.approx(-0.25, abs=1e-15)
    drifted = NetInputModel(0.1, 0.5, EXP1, 1.0)
    assert phi(drifted, 1.0) == pytest.approx(-0.35, abs=1e-15)
    with pytest.raises(ValueError):
        phi(CONFIG_A, -1.0)


def test_varphi_examples():
    assert varphi(CONFIG_A, 0.0) == 0.0
    assert varphi(CONFIG_A, 1.0) == pytest.approx(0.75, abs=1e-15)
    assert varphi(CONFIG_A, 2.0) == pytest.approx(2 - 1 / 3, abs=1e-15)


def test_derivatives_at_zero_examples():
    assert varphi_derivatives_at_zero(CONFIG_A) == pytest.approx((0.5, 1.0, -3.0), abs=1e-15)
    det = NetInputModel(0.0, 0.5, JumpDistribution.deterministic(1.0), 1.0)
    assert varphi_derivatives_at_zero(det) == pytest.approx((0.5, 0.5, -0.5), abs=1e-15)
    drift_only = NetInputModel(0.0, 0.0, None, 1.0)
    assert varphi_derivatives_at_zero(drift_only) == pytest.approx((1.0, 0.0, 0.0), abs=1e-15)


def test_derivatives_match_finite_differences():
    d1, d2, d3 = varphi_derivatives_at_zero(CONFIG_A)
    f = CONFIG_A._varphi
    for h in (1e-4, 1e-5):
        # one-sided stencils: varphi is analytic at 0 from the right
        assert (f(h) - f(0)) / h == pytest.approx(d1, abs=2 * h)
        assert (f(2 * h) - 2 * f(h) + f(0)) / h**2 == pytest.approx(d2, abs=10 * h + 1e-5 / h)
    h = 1e-4
    third = (f(3 * h) - 3 * f(2 * h) + 3 * f(h) - f(0)) / h**3
    assert third == pytest.approx(d3, rel=1e-2)


def test_inverse_varphi_examples():
    assert inverse_varphi(CONFIG_A, 0.5) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert inverse_varphi(CONFIG_A, 0.75) == pytest.approx(1.0, abs=1e-12)
    assert inverse_varphi(NetInputModel(0.0, 0.0, None, 1.0), 2.0) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        inverse_varphi(CONFIG_A, 0.0)


def test_inverse_round_trip_on_grid():
    for theta in np.geomspace(1e-3, 1e3, 30):
        assert inverse_varphi(CONFIG_A, varphi(CONFIG_A, theta)) == pytest.approx(theta, rel=1e-10, abs=1e-10)


def test_stability_and_drain_checks():
    with pytest.raises(UnstableModelError):
        NetInputModel(0.0, 1.0, EXP1, 1.0)
    with pytest.raises(UnstableModelError):
        NetInputModel(1.0, 0.0, None, 1.0)
    with pytest.raises(ValueError):
        NetInputModel(0.0, 0.5, None, 1.0)


def test_reflected_moments_config_a():
    er1, er2, er3 = reflected_moments(CONFIG_A, 3)
    assert er1 == pytest.approx(1.0)
    assert er2 - er1**2 == pytest.approx(3.0)
    # M/M/1-type workload: atom 1/2 at zero plus Exp(1/2) with weight 1/2
    assert er3 == pytest.approx(0.5 * 6 / 0.5**3)


def test_numerics_error_is_runtime_error():
    assert issubclass(NumericsError, RuntimeError)


stable_models = st.builds(
    lambda a, lam, rate, slack: NetInputModel(a, lam, JumpDistribution.exponential(rate), a + lam / rate + slack),
    st.floats(0.0, 2.0),
    st.floats(0.01, 5.0),
    st.floats(0.2, 5.0),
    st.floats(0.05, 3.0),
)


@settings(max_examples=60, deadline=None)
@given(stable_models, st.floats(1e-3, 50.0))
def test_inverse_varphi_property(net, gamma):
    theta = net.inverse_varphi(gamma)
    assert theta > 0
    assert abs(net.varphi(theta) - gamma) <= 1e-12 * max(1.0, gamma)


@settings(max_examples=60, deadline=None)
@given(stable_models)
def test_varphi_convex_increasing(net):
    grid = np.geomspace(1e-3, 1e2, 50)
    v = np.array([net.varphi(t) for t in grid])
    assert np.all(np.diff(v) > 0)
    for i in range(len(grid) - 2):
        t1, t2, t3 = grid[i : i + 3]
        chord = v[i] + (v[i + 2] - v[i]) * (t2 - t1) / (t3 - t1)
        assert v[i + 1] <= chord + 1e-12 * max(1.0, abs(chord))
