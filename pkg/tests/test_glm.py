import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import root

from fairaudit.errors import InvalidResponseForFamily, NotConverged, RankDeficient
from fairaudit.glm import Family, GlmSpec, fit_glm, glm_naive_cov, glm_score_sandwich
from fairaudit.regression import DesignMatrix, classical_cov, fit_ols, sandwich_cov


def _data(n=200, seed=0, counts=False):
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < 0.3).astype(float)
    w = rng.normal(size=n)
    X = DesignMatrix.from_columns([("a", a), ("w", w)])
    mu = np.exp(1.0 + 0.4 * a + 0.3 * w)
    y = rng.poisson(mu).astype(float) if counts else np.exp(1.0 + 0.4 * a + 0.3 * w**2)
    return X, y


def test_gaussian_identity_equals_ols():
    X, y = _data(seed=1)
    g = fit_glm(X, y, GlmSpec(Family.GAUSSIAN_IDENTITY))
    o = fit_ols(X, y)
    assert_allclose(g.beta_hat, o.beta_hat, rtol=1e-10)
    assert_allclose(glm_naive_cov(g).matrix, classical_cov(o).matrix, rtol=1e-10)
    assert_allclose(glm_score_sandwich(g).matrix, sandwich_cov(o, kind="HC0").matrix, rtol=1e-10)


def test_poisson_solves_score_equations():
    X, y = _data(seed=2, counts=True)
    fit = fit_glm(X, y, GlmSpec(Family.POISSON_LOG))
    Xe = X.entries
    sol = root(lambda b: Xe.T @ (y - np.exp(Xe @ b)), np.zeros(X.p), jac=lambda b: -(Xe.T * np.exp(Xe @ b)) @ Xe, tol=1e-14)
    assert sol.success
    assert_allclose(fit.beta_hat, sol.x, rtol=1e-9)
    assert fit.converged


def test_poisson_covariances_match_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    X, y = _data(seed=3, counts=True)
    fit = fit_glm(X, y, GlmSpec(Family.POISSON_LOG))
    ref = sm.GLM(y, X.entries, family=sm.families.Poisson()).fit(tol=1e-14)
    assert_allclose(fit.beta_hat, ref.params, rtol=1e-8)
    assert_allclose(glm_naive_cov(fit).matrix, ref.cov_params(), rtol=1e-7)
    rob = sm.GLM(y, X.entries, family=sm.families.Poisson()).fit(tol=1e-14, cov_type="HC0")
    assert_allclose(glm_score_sandwich(fit).matrix, rob.cov_params(), rtol=1e-7)


def test_gamma_matches_statsmodels_up_to_dispersion_divisor():
    sm = pytest.importorskip("statsmodels.api")
    X, _ = _data(seed=4)
    rng = np.random.default_rng(4)
    y = np.exp(1.0 + 0.4 * X.column("a") + 0.3 * X.column("w")) * rng.gamma(5.0, 0.2, X.n)
    fit = fit_glm(X, y, GlmSpec(Family.GAMMA_LOG))
    ref = sm.GLM(y, X.entries, family=sm.families.Gamma(sm.families.links.Log())).fit(tol=1e-14)
    assert_allclose(fit.beta_hat, ref.params, rtol=1e-8)
    n, p = X.n, X.p
    assert_allclose(glm_naive_cov(fit).matrix, ref.cov_params() * (n - p) / n, rtol=1e-6)


def test_gaussian_log_converges_on_deterministic_response():
    X, y = _data(seed=5)
    fit = fit_glm(X, y, GlmSpec(Family.GAUSSIAN_LOG))
    mu = np.exp(X.entries @ fit.beta_hat)
    # first-order condition of nonlinear least squares
    assert_allclose(X.entries.T @ ((y - mu) * mu), 0.0, atol=1e-7 * np.sum(y**2))
    naive = glm_naive_cov(fit).se(1)
    sand = glm_score_sandwich(fit).se(1)
    assert naive > 0 and sand > 0


def test_family_support_and_errors():
    X, y = _data(seed=6)
    y0 = y.copy()
    y0[0] = 0.0
    with pytest.raises(InvalidResponseForFamily):
        fit_glm(X, y0, GlmSpec(Family.GAMMA_LOG))
    with pytest.raises(InvalidResponseForFamily):
        fit_glm(X, -y, GlmSpec(Family.POISSON_LOG))
    with pytest.raises(NotConverged) as info:
        fit_glm(X, y, GlmSpec(Family.GAUSSIAN_LOG, max_iterations=1))
    assert info.value.last_fit is not None and not info.value.last_fit.converged
    bad = DesignMatrix.from_columns([("a", X.column("a")), ("a2", 2 * X.column("a"))])
    with pytest.raises(RankDeficient):
        fit_glm(bad, y)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.2, 20.0))
def test_poisson_scale_equivariance(seed, c):
    # Poisson score equations are linear in y: scaling y only moves the intercept
    X, y = _data(n=80, seed=seed, counts=True)
    if y.sum() == 0:
        return
    spec = GlmSpec(Family.POISSON_LOG)
    f1, f2 = fit_glm(X, y, spec), fit_glm(X, c * y, spec)
    assert_allclose(f2.beta_hat[1:], f1.beta_hat[1:], rtol=1e-7, atol=1e-9)
    assert_allclose(f2.beta_hat[0], f1.beta_hat[0] + np.log(c), rtol=1e-8, atol=1e-9)
