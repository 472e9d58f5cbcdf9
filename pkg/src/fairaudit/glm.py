"""GLM audit fits by IRLS, with naive and score-sandwich covariances.

For a deterministic response the information identity fails, so the naive
``(X' Lambda X)^{-1}`` is not a valid covariance of the GLM coefficients; the
score sandwich ``J^{-1} M J^{-1}`` is.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidResponseForFamily, NotConverged, RankDeficient, SingularInformation
from .regression import RANK_TOL, CovarianceEstimate, CovKind, DesignMatrix, _as_response, _frozen

_BOUNDARY = 1e-8
_MAX_HALVINGS = 10
_STEP_TOL = 1e-9


class Family(str, enum.Enum):
    GAUSSIAN_IDENTITY = "GaussianIdentity"
    GAUSSIAN_LOG = "GaussianLog"
    POISSON_LOG = "PoissonLog"
    GAMMA_LOG = "GammaLog"

    @property
    def log_link(self) -> bool:
        return self is not Family.GAUSSIAN_IDENTITY

    @property
    def free_dispersion(self) -> bool:
        return self is not Family.POISSON_LOG


@dataclass(frozen=True)
class GlmSpec:
    family: Family = Family.GAUSSIAN_LOG
    max_iterations: int = 100
    convergence_tolerance: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.convergence_tolerance <= 0:
            raise ValueError("convergence_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class GlmFit:
    beta_hat: NDArray[np.float64]
    eta: NDArray[np.float64]
    mu: NDArray[np.float64]
    weights: NDArray[np.float64]
    scores: NDArray[np.float64]
    converged: bool
    iterations: int
    family: Family
    deviance: float
    # -d2 log p / d eta2 at the fitted eta, per observation
    hessian_weights: NDArray[np.float64] = field(repr=False)
    response: NDArray[np.float64] = field(repr=False)
    design: DesignMatrix = field(repr=False)

    @property
    def n(self) -> int:
        return self.design.n

    def dispersion(self) -> float:
        """Pearson statistic over ``n`` (deviance over ``n`` for the Gaussian)."""
        if not self.family.free_dispersion:
            return 1.0
        y, mu = self.response, self.mu
        var = _variance(self.family, mu)
        return float(np.sum((y - mu) ** 2 / var) / self.n)


def _inverse_link(family: Family, eta):
    return np.exp(eta) if family.log_link else eta


def _variance(family: Family, mu):
    if family is Family.POISSON_LOG:
        return mu
    if family is Family.GAMMA_LOG:
        return mu**2
    return np.ones_like(mu)


def _deviance(family: Family, y, mu) -> float:
    if family is Family.POISSON_LOG:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(y > 0, y * np.log(y / mu), 0.0)
        return float(2.0 * np.sum(t - (y - mu)))
    if family is Family.GAMMA_LOG:
        return float(2.0 * np.sum(-np.log(y / mu) + (y - mu) / mu))
    d = y - mu
    return float(d @ d)


def _score_terms(family: Family, y, mu):
    """Per-observation d log p / d eta and -d2 log p / d eta2 (unit dispersion)."""
    resid = y - mu
    scale = np.max(np.abs(y)) if y.size else 0.0
    resid = np.where(np.abs(resid) <= 32.0 * np.finfo(float).eps * scale, 0.0, resid)
    if family is Family.GAUSSIAN_IDENTITY:
        return resid, np.ones_like(mu)
    if family is Family.GAUSSIAN_LOG:
        return resid * mu, mu * mu - resid * mu
    if family is Family.POISSON_LOG:
        return resid, mu.copy()
    return resid / mu, y / mu


def _check_response(family: Family, y):
    if family is Family.GAMMA_LOG and np.any(y <= 0):
        raise InvalidResponseForFamily("GammaLog requires a strictly positive response")
    if family is Family.POISSON_LOG and np.any(y < 0):
        raise InvalidResponseForFamily("PoissonLog requires a nonnegative response")


def _wls(X: NDArray, z, w) -> NDArray:
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(X * sw[:, None], mode="reduced")
    return np.linalg.solve(R, Q.T @ (z * sw))


def fit_glm(X: DesignMatrix, F, spec: GlmSpec | None = None) -> GlmFit:
    """Fit a GLM by iteratively reweighted least squares.

    Initialised at ``eta = g(F)`` with the response moved ``1e-8`` away from
    the boundary of the link's domain.  A step that increases the deviance is
    halved up to ten times.

    Convergence requires the relative deviance change, ``|D_old - D| /
    (|D| + 0.1)``, to fall below ``spec.convergence_tolerance`` and the
    coefficient step to be negligible; IRLS is only linearly convergent for
    non-canonical links, and the deviance test alone stops too early there.

    Raises
    ------
    InvalidResponseForFamily
        Response outside the family's support.
    NotConverged
        Iteration cap reached; the exception carries the last iterate.
    """
    spec = spec or GlmSpec()
    fam = spec.family
    y = _as_response(F, X.n)
    _check_response(fam, y)
    Xe = X.entries
    sv = np.linalg.svd(Xe, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficient(f"design {X.labels} is rank deficient")

    if fam.log_link:
        eta = np.log(np.maximum(y, 0.0) + _BOUNDARY)
    else:
        eta = y.copy()
    mu = _inverse_link(fam, eta)
    dev = _deviance(fam, y, mu)
    beta = None
    converged = False
    it = 0
    for it in range(1, spec.max_iterations + 1):
        dmu = mu if fam.log_link else np.ones_like(mu)
        w = dmu**2 / _variance(fam, mu)
        z = eta + (y - mu) / dmu
        cand = _wls(Xe, z, w)
        new_eta = Xe @ cand
        new_mu = _inverse_link(fam, new_eta)
        new_dev = _deviance(fam, y, new_mu)
        if beta is not None:
            for _ in range(_MAX_HALVINGS):
                if np.isfinite(new_dev) and new_dev <= dev:
                    break
                cand = 0.5 * (cand + beta)
                new_eta = Xe @ cand
                new_mu = _inverse_link(fam, new_eta)
                new_dev = _deviance(fam, y, new_mu)
            step = np.max(np.abs(cand - beta))
        else:
            step = np.inf
        rel = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        beta, eta, mu, dev = cand, new_eta, new_mu, new_dev
        if rel < spec.convergence_tolerance and step <= _STEP_TOL * (1.0 + np.max(np.abs(beta))):
            converged = True
            break

    fit = _assemble(X, y, fam, beta, eta, mu, dev, converged, it)
    if not converged:
        raise NotConverged(f"IRLS did not converge in {spec.max_iterations} iterations", fit)
    return fit


def _assemble(X, y, fam, beta, eta, mu, dev, converged, iterations) -> GlmFit:
    dmu = mu if fam.log_link else np.ones_like(mu)
    lam = dmu**2 / _variance(fam, mu)
    dl, hess = _score_terms(fam, y, mu)
    return GlmFit(
        beta_hat=_frozen(beta),
        eta=_frozen(eta),
        mu=_frozen(mu),
        weights=_frozen(lam),
        scores=_frozen(X.entries * dl[:, None]),
        converged=converged,
        iterations=iterations,
        family=fam,
        deviance=dev,
        hessian_weights=_frozen(hess),
        response=_frozen(y),
        design=X,
    )


def _inv(A: NDArray, what: str) -> NDArray:
    sv = np.linalg.svd(A, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= RANK_TOL * sv[0]:
        raise SingularInformation(f"{what} is singular")
    inv = np.linalg.inv(A)
    return 0.5 * (inv + inv.T)


def glm_naive_cov(fit: GlmFit, X: DesignMatrix | None = None) -> CovarianceEstimate:
    """``dispersion * (X' Lambda X)^{-1}``; the dispersion is 1 for Poisson."""
    X = X or fit.design
    Xe = X.entries
    info = (Xe * fit.weights[:, None]).T @ Xe
    return CovarianceEstimate(fit.dispersion() * _inv(info, "X' Lambda X"), CovKind.CLASSICAL, X.labels)


def glm_score_sandwich(fit: GlmFit, X: DesignMatrix | None = None) -> CovarianceEstimate:
    """``J^{-1} M J^{-1} / n`` from observed Hessian and outer-product-of-scores.

    The dispersion cancels between ``J`` and ``M``, so none is estimated.
    """
    X = X or fit.design
    n = X.n
    Xe = X.entries
    J = (Xe * fit.hessian_weights[:, None]).T @ Xe / n
    M = fit.scores.T @ fit.scores / n
    Jinv = _inv(J, "observed information J")
    cov = Jinv @ M @ Jinv / n
    return CovarianceEstimate(0.5 * (cov + cov.T), CovKind.SCORE_SANDWICH, X.labels)
