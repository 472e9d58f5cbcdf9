from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from fairaudit.errors import NegativeVarianceBeyondTolerance
from fairaudit.regression import DesignMatrix, fit_ols, sandwich_cov
from fairaudit.shift import (
    ShiftComponents,
    holm_adjust,
    pd_test,
    shift_components,
    shift_variance_full,
    shift_variance_independent,
)

from conftest import make_dataset

# five-observation hand fixture
W5 = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
A5 = np.array([0.0, 1.0, 0.0, 1.0, 1.0])
F5 = np.array([1.0, 3.5, 2.0, 7.0, 9.5])


def _hand_designs():
    X = DesignMatrix.from_columns([("w", W5)])
    X_ext = DesignMatrix.from_columns([("w", W5), ("a", A5)])
    return X, X_ext


def _quadratic_form_oracle(X, X_ext, F, j, k):
    """Stack both fits and evaluate w' C w with the 2n x 2n score covariance."""
    Xe, Ze = X.entries, X_ext.entries
    a = (Xe @ np.linalg.inv(Xe.T @ Xe))[:, j]
    at = (Ze @ np.linalg.inv(Ze.T @ Ze))[:, k]
    r = F - Xe @ np.linalg.lstsq(Xe, F, rcond=None)[0]
    rt = F - Ze @ np.linalg.lstsq(Ze, F, rcond=None)[0]
    C = np.block([[np.diag(r * r), np.diag(r * rt)], [np.diag(r * rt), np.diag(rt * rt)]])
    w = np.concatenate([a, -at])
    return w @ C @ w


def test_hand_fixture_matches_quadratic_form():
    X, X_ext = _hand_designs()
    got = shift_variance_full(X, X_ext, F5, 1, 1)
    want = _quadratic_form_oracle(X, X_ext, F5, 1, 1)
    assert want > 0
    assert_allclose(got, want, rtol=1e-10)


def test_hand_fixture_components_are_hc0_variances():
    X, X_ext = _hand_designs()
    c = shift_components(X, X_ext, F5, 1, 1)
    assert_allclose(c.restricted, sandwich_cov(fit_ols(X, F5), kind="HC0").variance(1), rtol=1e-12)
    assert_allclose(c.extended, sandwich_cov(fit_ols(X_ext, F5), kind="HC0").variance(1), rtol=1e-12)
    assert_allclose(shift_variance_independent(X, X_ext, F5, 1, 1), c.restricted + c.extended)


def test_shift_is_linear_in_response():
    X, X_ext = _hand_designs()
    fr, fe = fit_ols(X, F5), fit_ols(X_ext, F5)
    d = fr.weight_vector(1) - fe.weight_vector(1)
    assert_allclose(d @ X.entries, 0.0, atol=1e-12)
    assert_allclose(d @ F5, fr.beta_hat[1] - fe.beta_hat[1], rtol=1e-12)


def test_identical_models_give_exact_zero():
    X, _ = _hand_designs()
    assert shift_variance_full(X, X, F5, 1, 1) == 0.0


def test_clamp_rule():
    assert ShiftComponents(1.0, 1.0, 1.0 + 1e-12).full() == 0.0
    with pytest.raises(NegativeVarianceBeyondTolerance):
        ShiftComponents(1.0, 1.0, 1.1).full()
    assert ShiftComponents(2.0, 1.0, 0.5).full() == pytest.approx(2.0)


def test_mismatched_designs_rejected():
    X, X_ext = _hand_designs()
    with pytest.raises(ValueError):
        shift_components(X, X_ext, F5, 1, 2)
    other = DesignMatrix.from_columns([("w", W5 + 1.0), ("a", A5)])
    with pytest.raises(ValueError):
        shift_components(X, other, F5, 1, 1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(6, 60))
def test_full_variance_is_sum_of_squared_score_differences(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n)
    a = (rng.random(n) < 0.5).astype(float)
    if a.min() == a.max():
        a[0] = 1.0 - a[0]
    F = np.exp(w) + a * rng.random()
    X = DesignMatrix.from_columns([("w", w)])
    Z = DesignMatrix.from_columns([("w", w), ("a", a)])
    fr, fe = fit_ols(X, F), fit_ols(Z, F)
    u = fr.weight_vector(1) * fr.residuals
    v = fe.weight_vector(1) * fe.residuals
    full = shift_components(X, Z, F, 1, 1).full()
    assert full >= 0.0
    assert_allclose(full, np.sum((u - v) ** 2), rtol=1e-8, atol=1e-12 * (u @ u + v @ v))


def test_pd_test_fields(proxy_data):
    r = pd_test(proxy_data, "W", controls=("x",))
    assert r.phi > r.phi_prime
    assert_allclose(r.delta_pd, r.phi - r.phi_prime)
    assert_allclose(r.relative_shift, abs(r.delta_pd / r.phi))
    assert r.se_full < r.se_independent
    assert abs(r.z_full) > abs(r.z_independent)
    assert r.critical_value == pytest.approx(1.6448536269514722)
    assert r.flagged == (abs(r.z_full) > r.critical_value and r.relative_shift > r.rho_min)
    strict = r.with_critical_value(1e6)
    assert not strict.significant and not strict.flagged


def test_zero_restricted_coefficient_is_not_flagged():
    n = 12
    d = make_dataset({"F": np.full(n, 3.0), "A": np.arange(n) % 2, "W": np.arange(n, dtype=float)})
    r = pd_test(d, "W")
    assert r.phi == 0.0 and np.isnan(r.relative_shift)
    assert not r.flagged
    assert any("ZeroRestrictedCoefficient" in s for s in r.diagnostics)


def test_holm_step_down(proxy_data):
    base = pd_test(proxy_data, "W", controls=("x",))
    mk = lambda name, z: replace(base, proxy=name, z_full=z, relative_shift=0.5)
    res = [mk("p1", 1.8), mk("p2", 3.5), mk("p3", 2.2)]
    out = holm_adjust(res, 0.05)
    by = {r.proxy: r for r in out}
    # thresholds 2.128, 1.960, then the unadjusted 1.645
    assert by["p2"].significant
    assert by["p3"].significant
    assert by["p1"].significant
    # 1.9 misses 1.960, so 1.8 is not tested even though it exceeds 1.645
    out = holm_adjust([mk("p1", 1.9), mk("p2", 1.8), mk("p3", 5.0)], 0.05)
    assert [r.significant for r in out] == [False, False, True]
    assert [r.proxy for r in out] == ["p1", "p2", "p3"]
    single = holm_adjust([mk("p1", 1.7)], 0.05)[0]
    assert single.significant and single.critical_value == pytest.approx(1.6448536269514722)
