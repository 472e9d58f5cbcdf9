import math

import pytest
from hypothesis import given, settings, strategies as st

from fairaudit.errors import EffectAtThreshold, InvalidRange
from fairaudit.normal import norm_ppf
from fairaudit.power import PilotSummary, cdp_required_n, power_at, required_n


def test_worked_example():
    pilot = PilotSummary(n0=100, sigma2_delta=4.0, delta_star=1.0, d=0.0, alpha=0.05, target_power=0.80)
    assert required_n(pilot) == 2474


def test_power_formula():
    pilot = PilotSummary(100, 4.0, 1.0)
    n = 2474
    sigma = math.sqrt(100 * 4.0 / n)
    assert power_at(pilot, n) == pytest.approx(1 - 0.5 * math.erfc(-(norm_ppf(0.95) - 1 / sigma) / math.sqrt(2)))
    assert power_at(pilot, 2474) >= 0.80 > power_at(pilot, 2473)


def test_errors():
    with pytest.raises(EffectAtThreshold):
        required_n(PilotSummary(100, 4.0, 0.5, d=0.5))
    with pytest.raises(InvalidRange):
        PilotSummary(0, 4.0, 1.0)
    with pytest.raises(InvalidRange):
        PilotSummary(10, -1.0, 1.0)


def test_cdp_takes_the_larger_requirement():
    pilot = PilotSummary(200, 0.5, 0.0)
    n = cdp_required_n(pilot, math.log1p(0.05), -math.log(0.8))
    assert n == required_n(PilotSummary(200, 0.5, 0.0, d=math.log1p(0.05)))


@settings(max_examples=60)
@given(
    n0=st.integers(5, 5000),
    s2=st.floats(1e-3, 50),
    eff=st.floats(1e-2, 5),
    alpha=st.floats(0.005, 0.2),
    target=st.floats(0.55, 0.99),
)
def test_required_n_is_minimal(n0, s2, eff, alpha, target):
    pilot = PilotSummary(n0, s2, eff, 0.0, alpha, target)
    n = required_n(pilot)
    assert power_at(pilot, n) >= target
    assert n == 1 or power_at(pilot, n - 1) < target
    # more variance never lowers the requirement
    assert required_n(PilotSummary(n0, 2 * s2, eff, 0.0, alpha, target)) >= n
