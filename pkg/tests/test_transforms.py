import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyfluid.analytics import pk_lst
from levyfluid.levy_core import JumpDistribution, NetInputModel
from levyfluid.transforms import (
    LstCurve,
    batch_means_se,
    clamp_cdf,
    empirical_cdf,
    empirical_lst,
    invert_lst_to_cdf,
)


def test_empirical_lst_examples():
    c = empirical_lst([0.0, 0.0, 0.0], [1.0])
    assert c.values[0] == 1.0 and c.se[0] == 0.0
    c = empirical_lst([1.0], [1.0])
    assert c.values[0] == pytest.approx(math.exp(-1))
    c = empirical_lst([1.0, 2.0], [0.0, 1.0])
    assert c.values == pytest.approx([1.0, (math.exp(-1) + math.exp(-2)) / 2])
    assert c.provenance == "empirical"


def test_empirical_lst_errors():
    with pytest.raises(ValueError):
        empirical_lst([], [1.0])
    with pytest.raises(ValueError):
        empirical_lst([-1.0, 1.0], [1.0])


def test_empirical_lst_se_matches_iid_formula():
    rng = np.random.default_rng(0)
    x = rng.exponential(size=10_000)
    c = empirical_lst(x, [1.0])
    e = np.exp(-x)
    assert c.se[0] == pytest.approx(e.std(ddof=1) / 100)
    # batch means on independent data estimate the same standard error
    cb = empirical_lst(x, [1.0], batches=32)
    assert cb.se[0] == pytest.approx(c.se[0], rel=0.4)


def test_batch_means_se_needs_enough_data():
    with pytest.raises(ValueError):
        batch_means_se(np.ones(10), batches=32)


def test_euler_exponential_at_one():
    v = invert_lst_to_cdf(lambda s: 1 / (1 + s), [1.0])[0]
    assert abs(v - (1 - math.exp(-1))) <= 1e-7


def test_euler_point_mass_at_zero():
    v = invert_lst_to_cdf(lambda s: np.ones_like(s), [0.5, 1.0, 3.0])
    np.testing.assert_allclose(v, 1.0, atol=1e-7)


def test_inversion_of_pk_transform_config_a():
    # reflected M/M/1-type workload: P(W <= x) = 1 - 0.5 exp(-0.5 x)
    net = NetInputModel(0.0, 0.5, JumpDistribution.exponential(1.0), 1.0)
    x = np.linspace(0.25, 12.0, 20)
    v = invert_lst_to_cdf(lambda s: pk_lst(net, s), x)
    np.testing.assert_allclose(v, 1 - 0.5 * np.exp(-0.5 * x), atol=1e-7)


@pytest.mark.parametrize(
    "law",
    [
        JumpDistribution.exponential(2.0),
        JumpDistribution.erlang(3, 1.5),
        JumpDistribution.hyperexponential([0.4, 0.6], [0.5, 3.0]),
        JumpDistribution.deterministic(1.0),
    ],
    ids=lambda l: l.family,
)
def test_family_round_trip(law):
    start = law.params[0] if law.family == "deterministic" else 0.0
    x = np.linspace(0.1, 5.0, 25)
    x = x[x != start]
    v = invert_lst_to_cdf(law.lst, x, support_start=start)
    np.testing.assert_allclose(v, law.cdf(x), atol=1e-6)


def test_inversion_at_support_start_rejected():
    with pytest.raises(ValueError):
        invert_lst_to_cdf(lambda s: np.exp(-s), [1.0], support_start=1.0)


def test_inversion_non_finite_raises():
    with pytest.raises(FloatingPointError):
        invert_lst_to_cdf(lambda s: np.full_like(s, np.nan), [1.0])


def test_clamp_cdf():
    out = clamp_cdf([-1e-9, 0.3, 0.29, 1.0000001])
    np.testing.assert_array_equal(out, [0.0, 0.3, 0.3, 1.0])


def test_empirical_cdf():
    np.testing.assert_allclose(empirical_cdf([1.0, 2.0, 3.0, 4.0], [0.5, 2.0, 10.0]), [0.0, 0.5, 1.0])


def test_lst_curve_csv(tmp_path):
    curve = LstCurve.analytic(lambda s: 1 / (1 + s), [1.0, 2.0])
    out = tmp_path / "lst.csv"
    curve.write_csv(out, header="config_hash=x seed=2")
    lines = out.read_text().splitlines()
    assert lines[:2] == ["# config_hash=x seed=2", "theta,value,se"]
    assert lines[2] == "1.0,0.5,0.0"
    assert curve.rows()[1] == {"theta": 2.0, "value": pytest.approx(1 / 3), "se": 0.0}


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.05, 8.0))
def test_exponential_round_trip_property(rate, x):
    law = JumpDistribution.exponential(rate)
    v = invert_lst_to_cdf(law.lst, [x])[0]
    assert abs(v - law.cdf(x)) <= 1e-6
