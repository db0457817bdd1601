import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyfluid.analytics import (
    BreakdownEmbedding,
    busy_period_mean,
    correlation_laplace,
    decomposition_sampler,
    moments,
    moments_as_printed,
    n_order_busy_mean,
    pk_lst,
    rates_and_p,
    steady_state_lst,
    steady_state_summary,
    throughput_limits,
    transient_lst,
    transient_lst_poisson,
    weighted_steady_state_lst,
)
from levyfluid.levy_core import JumpDistribution, NetInputModel, UnstableModelError
from levyfluid.queue_sim import QueueModel, breakdown_pairs, killed_sample, make_rng

EXP1 = JumpDistribution.exponential(1.0)
NET_A = NetInputModel(0.0, 0.5, EXP1, 1.0)
MODEL_A = QueueModel.reflected(NET_A)
MODEL_B = QueueModel(NET_A, vacation_law=JumpDistribution.deterministic(1.0))
MODEL_C = QueueModel(
    NET_A,
    failure_rate=0.2,
    repair_law=JumpDistribution.exponential(2.0),
    vacation_law=JumpDistribution.deterministic(1.0),
)
EMB_C = BreakdownEmbedding.poisson_stationary(MODEL_C)


def config_c_lst_oracle(theta):
    """Independent closed form for Config C.

    Failures are Poisson and independent of W, so W- ~ W and W+ = W- + xi.
    Solving L = K [(1-p) H_V + p L (1 - L_xi) / (theta E xi)] for L.
    """
    k = theta * 0.5 / (theta - 0.5 * theta / (1 + theta))
    h_v = (1 - math.exp(-theta)) / theta
    l_xi = 2 / (2 + theta)
    return k * 0.8 * h_v / (1 - k * 0.2 * (1 - l_xi) / (theta * 0.5))


def test_pk_examples():
    assert pk_lst(NET_A, 1.0) == pytest.approx(2 / 3, abs=1e-14)
    assert pk_lst(NET_A, 2.0) == pytest.approx(0.6, abs=1e-14)
    assert pk_lst(NET_A, 0.0) == 1.0


def test_config_b_lst_example():
    assert steady_state_lst(MODEL_B, None, 1.0) == pytest.approx(0.42141, abs=5e-6)
    assert steady_state_lst(MODEL_B, None, 1.0) == pytest.approx(2 / 3 * (1 - math.exp(-1)), abs=1e-14)
    assert steady_state_lst(MODEL_B, None, 0.0) == 1.0


def test_config_c_lst_matches_independent_oracle():
    for theta in (0.1, 0.5, 1.0, 3.0, 10.0):
        assert steady_state_lst(MODEL_C, EMB_C, theta) == pytest.approx(config_c_lst_oracle(theta), rel=1e-12)


def test_moments_examples():
    assert moments(MODEL_A) == pytest.approx((1.0, 3.0), abs=1e-12)
    assert moments(MODEL_B) == pytest.approx((1.5, 3 + 1 / 12), abs=1e-12)
    mean_c, var_c = moments(MODEL_C, EMB_C)
    assert mean_c == pytest.approx(1.875, abs=1e-12)
    assert var_c == pytest.approx(4.599, abs=1e-3)


def test_moments_as_printed_examples():
    assert moments_as_printed(MODEL_A)[1] == pytest.approx(-3.0, abs=1e-12)
    mean_b, printed_b = moments_as_printed(MODEL_B)
    assert mean_b == pytest.approx(1.5, abs=1e-12)
    assert printed_b == pytest.approx(-3 + 1 / 12, abs=1e-12)


def oracle_moments(lst):
    """Mean and second moment from a polynomial interpolant of the transform near zero."""
    h = 0.01 * np.arange(0, 9)
    values = np.array([1.0] + [lst(x) for x in h[1:]])
    coef = np.polynomial.polynomial.polyfit(h, values, 8)
    return -coef[1], 2 * coef[2]


@pytest.mark.parametrize(
    "model,emb", [(MODEL_B, None), (MODEL_C, EMB_C)], ids=["B", "C"]
)
def test_moments_consistent_with_transform(model, emb):
    mean, var = moments(model, emb)
    m1, m2 = oracle_moments(lambda s: float(steady_state_lst(model, emb, s)))
    assert m1 == pytest.approx(mean, rel=1e-5)
    assert m2 - m1**2 == pytest.approx(var, rel=1e-3)


def test_variance_c_against_oracle_transform():
    m1, m2 = oracle_moments(config_c_lst_oracle)
    mean, var = moments(MODEL_C, EMB_C)
    assert mean == pytest.approx(m1, rel=1e-5)
    assert var == pytest.approx(m2 - m1**2, rel=1e-3)


def test_factorization_identity():
    grid = np.geomspace(1e-3, 1e2, 25)
    for theta in grid:
        k = pk_lst(NET_A, theta)
        h = 0.8 * (1 - math.exp(-theta)) / theta + 0.2 * (EMB_C.lst_minus(theta) - EMB_C.lst_plus(theta)) / (
            theta * 0.5
        )
        assert abs(steady_state_lst(MODEL_C, EMB_C, theta) - k * h) <= 1e-12


def test_lst_monotone_and_bounded():
    grid = np.geomspace(1e-4, 1e3, 60)
    for model, emb in ((MODEL_B, None), (MODEL_C, EMB_C)):
        v = np.asarray(steady_state_lst(model, emb, grid))
        assert np.all((v > 0) & (v <= 1))
        assert np.all(np.diff(v) < 0)


def test_weighted_lst_is_minus_derivative():
    for s in (0.3, 1.0, 4.0):
        h = 1e-5
        fd = -(steady_state_lst(MODEL_C, EMB_C, s + h) - steady_state_lst(MODEL_C, EMB_C, s - h)) / (2 * h)
        assert weighted_steady_state_lst(MODEL_C, EMB_C, s) == pytest.approx(fd, rel=1e-6)


def test_rates_examples():
    assert rates_and_p(MODEL_C) == pytest.approx((0.2, 0.2, 0.4), abs=1e-14)
    assert throughput_limits(MODEL_C) == pytest.approx((0.1, 0.4), abs=1e-14)
    halved = QueueModel(
        NET_A, failure_rate=0.2, repair_law=JumpDistribution.exponential(4.0), vacation_law=JumpDistribution.deterministic(1.0)
    )
    assert halved.p == pytest.approx(0.1, abs=1e-14)
    assert rates_and_p(MODEL_B) == pytest.approx((0.0, 0.0, 0.5), abs=1e-14)


def test_busy_means():
    assert busy_period_mean(MODEL_B, 1.5) == pytest.approx(3.0)
    assert n_order_busy_mean(3, 1.0, 0.2, 0.5) == pytest.approx(7.5)
    with pytest.raises(ValueError):
        n_order_busy_mean(1, 1.0, 1.0, 0.5)


def test_unstable_p_rejected():
    # p >= 1 is the same as total load >= 1, so the model cannot be built
    with pytest.raises(UnstableModelError):
        QueueModel(
            NetInputModel(0.0, 0.1, EXP1, 1.0),
            failure_rate=0.9,
            repair_law=EXP1,
            vacation_law=EXP1,
        )


def test_embedding_from_samples_close_to_poisson_stationary():
    wm, wp = breakdown_pairs(MODEL_C, 40_000, make_rng(21))
    emb = BreakdownEmbedding.from_samples(wm, wp)
    mean, _ = moments(MODEL_C, emb)
    assert mean == pytest.approx(1.875, abs=0.06)
    assert steady_state_lst(MODEL_C, emb, 1.0) == pytest.approx(config_c_lst_oracle(1.0), abs=0.01)


# -- transient ------------------------------------------------------------------


def test_transient_theta_zero_is_one():
    assert transient_lst(MODEL_B, None, 1.0, 0.5, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert transient_lst_poisson(MODEL_C, 1.0, 0.5, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_transient_forms_agree_without_failures():
    for x, gamma, theta in ((0.0, 0.5, 1.0), (2.0, 0.1, 0.3), (1.0, 3.0, 5.0)):
        a = transient_lst(MODEL_B, None, x, gamma, theta)
        b = transient_lst_poisson(MODEL_B, x, gamma, theta)
        assert a == pytest.approx(b, abs=1e-10)


def test_transient_removable_singularity():
    gamma = 0.5
    root = NET_A.inverse_varphi(gamma)
    at = transient_lst(MODEL_B, None, 1.0, gamma, root)
    near = transient_lst(MODEL_B, None, 1.0, gamma, root + 1e-3)
    assert np.isfinite(at)
    assert at == pytest.approx(near, abs=1e-3)


def test_transient_large_gamma_tends_to_start():
    # T ~ Exp(gamma) is almost zero, so W_T is almost x
    assert transient_lst_poisson(MODEL_C, 2.0, 1e5, 1.0) == pytest.approx(math.exp(-2.0), abs=1e-4)


@pytest.mark.parametrize("x,theta", [(0.0, 1.0), (2.0, 0.5)])
def test_transient_poisson_matches_monte_carlo(x, theta):
    w = killed_sample(MODEL_C, x, 0.5, make_rng(31), size=200_000)
    e = np.exp(-theta * w)
    se = e.std(ddof=1) / math.sqrt(e.size)
    assert abs(e.mean() - transient_lst_poisson(MODEL_C, x, 0.5, theta)) <= 4 * se


# -- correlation ----------------------------------------------------------------


def test_correlation_initial_value():
    mean, var = moments(MODEL_B)
    for theta in (1e3, 1e4):
        assert theta * correlation_laplace(MODEL_B, None, mean, var, theta) == pytest.approx(1.0, abs=5e-3)


def test_correlation_positive_and_decreasing():
    mean, var = moments(MODEL_C, EMB_C)
    grid = np.geomspace(0.05, 20, 20)
    v = np.array([correlation_laplace(MODEL_C, EMB_C, mean, var, t) for t in grid])
    assert np.all(v > 0)
    assert np.all(np.diff(v) < 0)


def test_correlation_as_printed_differs():
    mean, var = moments(MODEL_B)
    fixed = correlation_laplace(MODEL_B, None, mean, var, 1.0)
    printed = correlation_laplace(MODEL_B, None, mean, var, 1.0, as_printed=True)
    assert fixed == pytest.approx(0.841, abs=1e-3)
    assert printed == pytest.approx(0.646, abs=1e-3)


# -- decomposition and summary --------------------------------------------------


def test_decomposition_sampler_moments():
    x = decomposition_sampler(MODEL_B, 400_000, make_rng(41))
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 1.5) <= 4 * se
    assert x.var(ddof=1) == pytest.approx(3 + 1 / 12, rel=0.03)


def test_summary_reflected_and_json():
    s = steady_state_summary(MODEL_A)
    assert math.isnan(s.lambda_V)
    d = s.to_dict("abc", 1)
    assert d["lambda_V"] is None and d["config_hash"] == "abc"
    assert s.busy_mean == pytest.approx(2.0)
    text = s.to_json("abc", 1)
    assert "NaN" not in text


def test_summary_config_c():
    s = steady_state_summary(MODEL_C, EMB_C)
    assert (s.p, s.lambda_R, s.lambda_V) == pytest.approx((0.2, 0.2, 0.4))
    assert s.mean == pytest.approx(1.875)
    assert s.busy_mean == pytest.approx(1.875 / 0.4)


vacation_models = st.builds(
    lambda lam, rate, v, lam_r, xi_rate: QueueModel(
        NetInputModel(0.0, lam, JumpDistribution.exponential(rate), 1.0),
        failure_rate=lam_r,
        repair_law=JumpDistribution.exponential(xi_rate),
        vacation_law=JumpDistribution.deterministic(v),
    ),
    st.floats(0.05, 0.4),
    st.floats(1.0, 3.0),
    st.floats(0.2, 3.0),
    st.floats(0.01, 0.3),
    st.floats(2.0, 6.0),
)


@settings(max_examples=40, deadline=None)
@given(vacation_models)
def test_rates_balance_property(model):
    p, lam_r, lam_v = rates_and_p(model)
    d1 = model.net.varphi_derivative_at_zero(1)
    # workload added by repairs and vacations balances the drain deficit
    assert lam_r * model.repair_law.mean() + lam_v * model.vacation_law.mean() == pytest.approx(d1, rel=1e-12)
    assert lam_r == pytest.approx(model.failure_rate, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(vacation_models, st.floats(0.01, 20.0))
def test_poisson_embedding_lst_bounds(model, theta):
    emb = BreakdownEmbedding.poisson_stationary(model)
    v = float(steady_state_lst(model, emb, theta))
    assert 0 < v < 1
