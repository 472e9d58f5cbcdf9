"""Least-squares audit regressions with classical and HC0-HC3 covariances.

The response of a deterministic pricing algorithm carries no sampling noise:
residuals are approximation error of the linear audit model, and their
second moments can co-vary with the covariates.  The sandwich estimators here
remain valid in that setting; the classical formula generally does not.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    LeverageAtOne,
    NonPSDCovariance,
    RankDeficient,
    ZeroClassicalVariance,
)

RANK_TOL = 1e-10
LEVERAGE_TOL = 1e-10
PSD_TOL = 1e-10
SYMMETRY_TOL = 1e-12
# residuals below this many ulps of the response scale are rounding noise
_RESIDUAL_ULPS = 32.0


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DesignMatrix:
    """An ``n x p`` covariate matrix with unique column labels."""

    entries: NDArray[np.float64]
    labels: tuple[str, ...]

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2:
            raise DimensionMismatch("design matrix must be two-dimensional")
        n, p = entries.shape
        labels = tuple(self.labels)
        if len(labels) != p:
            raise DimensionMismatch(f"{len(labels)} labels for {p} columns")
        if len(set(labels)) != p:
            raise ValueError(f"column labels must be unique: {labels}")
        if n < p + 1:
            raise DimensionMismatch(f"need n >= p + 1 rows, got n={n}, p={p}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("design matrix contains non-finite entries")
        object.__setattr__(self, "entries", _frozen(entries))
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_columns(
        cls,
        columns: Sequence[tuple[str, NDArray]],
        intercept: bool = True,
    ) -> "DesignMatrix":
        """Stack named columns, optionally prepending an ``intercept`` column."""
        cols = [np.asarray(c, dtype=float) for _, c in columns]
        labels = [name for name, _ in columns]
        if intercept:
            n = len(cols[0]) if cols else 0
            cols.insert(0, np.ones(n))
            labels.insert(0, "intercept")
        return cls(np.column_stack(cols), tuple(labels))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def p(self) -> int:
        return self.entries.shape[1]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no column {label!r} in design {self.labels}") from None

    def column(self, label: str) -> NDArray:
        return self.entries[:, self.index(label)]


class CovKind(str, enum.Enum):
    CLASSICAL = "Classical"
    HC0 = "HC0"
    HC1 = "HC1"
    HC2 = "HC2"
    HC3 = "HC3"
    SCORE_SANDWICH = "ScoreSandwich"
    SHIFT_FULL = "ShiftFull"
    SHIFT_INDEPENDENT = "ShiftIndependent"


@dataclass(frozen=True)
class CovarianceEstimate:
    """Symmetric PSD covariance matrix tagged with the estimator that made it.

    Negative eigenvalues down to ``-1e-10`` times the largest absolute one are
    accepted as floating-point noise; anything more negative raises
    :class:`NonPSDCovariance`.
    """

    matrix: NDArray[np.float64]
    kind: CovKind
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch("covariance must be square")
        scale = np.max(np.abs(m)) if m.size else 0.0
        if scale > 0 and np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
            raise NonPSDCovariance(f"{self.kind.value} covariance is not symmetric")
        m = 0.5 * (m + m.T)
        if scale > 0:
            eig = np.linalg.eigvalsh(m)
            top = np.max(np.abs(eig))
            if eig[0] < -PSD_TOL * top:
                raise NonPSDCovariance(
                    f"{self.kind.value} covariance has eigenvalue {eig[0]:.3e} "
                    f"(largest |eig| {top:.3e})"
                )
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "kind", CovKind(self.kind))

    def variance(self, j: int) -> float:
        v = float(self.matrix[j, j])
        return v if v > 0.0 else 0.0

    def se(self, j: int | None = None):
        """Standard error of coefficient ``j`` (all of them when ``j`` is None)."""
        if j is None:
            return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))
        return float(np.sqrt(self.variance(j)))


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit of one audit model.

    ``residuals`` are exactly zero where the linear model reproduces the
    response to within rounding, so an exactly linear response yields zero
    sandwich matrices rather than ones built from 1e-16 noise.
    """

    beta_hat: NDArray[np.float64]
    residuals: NDArray[np.float64]
    fitted: NDArray[np.float64]
    leverages: NDArray[np.float64]
    xtx_inverse: NDArray[np.float64]
    r_squared: float
    design: DesignMatrix = field(repr=False)
    response: NDArray[np.float64] = field(repr=False)
    # X (X'X)^{-1}: row i is the weight of observation i in each coefficient
    _weights: NDArray[np.float64] = field(repr=False)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.design.labels

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def p(self) -> int:
        return self.design.p

    def coef(self, label: str) -> float:
        return float(self.beta_hat[self.design.index(label)])

    def weight_vector(self, j: int) -> NDArray[np.float64]:
        """The vector ``a`` with ``beta_hat[j] = a @ F``."""
        return self._weights[:, j]


def _as_response(F, n: int) -> NDArray:
    F = np.asarray(F, dtype=float)
    if F.ndim != 1:
        raise DimensionMismatch("response must be a vector")
    if F.shape[0] != n:
        raise DimensionMismatch(f"response length {F.shape[0]} != design rows {n}")
    if not np.all(np.isfinite(F)):
        raise ValueError("response contains non-finite entries")
    return F


def fit_ols(X: DesignMatrix, F) -> RegressionFit:
    """Least-squares projection of ``F`` on the columns of ``X``.

    Solved through a thin QR factorisation; ``(X'X)^{-1}`` is formed from the
    triangular factor only for the covariance formulas.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``X`` is at most ``1e-10`` times the
        largest.  Columns are never dropped silently.
    DimensionMismatch
        If ``F`` does not have one entry per row of ``X``.
    """
    F = _as_response(F, X.n)
    Q, R = np.linalg.qr(X.entries, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficient(
            f"design {X.labels} is rank deficient "
            f"(singular value ratio {sv[-1] / sv[0]:.3e})"
        )
    beta = solve_triangular(R, Q.T @ F)
    fitted = X.entries @ beta
    resid = F - fitted
    scale = max(np.max(np.abs(F)), np.max(np.abs(fitted)))
    tiny = _RESIDUAL_ULPS * X.p * np.finfo(float).eps * scale
    resid[np.abs(resid) <= tiny] = 0.0
    fitted = F - resid
    leverage = np.einsum("ij,ij->i", Q, Q)
    R_inv = solve_triangular(R, np.eye(X.p))
    xtx_inv = R_inv @ R_inv.T
    weights = Q @ R_inv.T
    centred = F - F.mean()
    tss = float(centred @ centred)
    rss = float(resid @ resid)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return RegressionFit(
        beta_hat=_frozen(beta),
        residuals=_frozen(resid),
        fitted=_frozen(fitted),
        leverages=_frozen(np.clip(leverage, 0.0, 1.0)),
        xtx_inverse=_frozen(0.5 * (xtx_inv + xtx_inv.T)),
        r_squared=float(min(max(r2, 0.0), 1.0)),
        design=X,
        response=_frozen(F),
        _weights=_frozen(weights),
    )


def _check_pair(fit: RegressionFit, X: DesignMatrix | None) -> DesignMatrix:
    if X is None:
        return fit.design
    if X.entries.shape != fit.design.entries.shape:
        raise DimensionMismatch("covariance requested for a design the fit did not use")
    return X


def classical_cov(fit: RegressionFit, X: DesignMatrix | None = None) -> CovarianceEstimate:
    """``sigma2 * (X'X)^{-1}`` with ``sigma2 = sum(r**2) / n``."""
    X = _check_pair(fit, X)
    r = fit.residuals
    sigma2 = float(r @ r) / X.n
    return CovarianceEstimate(sigma2 * fit.xtx_inverse, CovKind.CLASSICAL, X.labels)


def sandwich_cov(
    fit: RegressionFit,
    X: DesignMatrix | None = None,
    kind: CovKind | str = CovKind.HC3,
) -> CovarianceEstimate:
    """Heteroskedasticity-consistent covariance ``B (sum x x' w_i) B``.

    ``B = (X'X)^{-1}`` and ``w_i`` is the squared residual, inflated by
    ``n/(n-p)`` (HC1), ``1/(1-h_ii)`` (HC2) or ``1/(1-h_ii)**2`` (HC3).
    """
    X = _check_pair(fit, X)
    kind = CovKind(kind)
    r2 = fit.residuals**2
    h = fit.leverages
    if kind in (CovKind.HC2, CovKind.HC3):
        if np.any(h >= 1.0 - LEVERAGE_TOL):
            i = int(np.argmax(h))
            raise LeverageAtOne(f"observation {i} has leverage {h[i]:.12f}")
    if kind is CovKind.HC0 or kind is CovKind.HC1:
        w = r2
    elif kind is CovKind.HC2:
        w = r2 / (1.0 - h)
    elif kind is CovKind.HC3:
        w = r2 / (1.0 - h) ** 2
    else:
        raise ValueError(f"sandwich_cov does not produce {kind.value}")
    # B X' diag(w) X B == U' diag(w) U with U = X B
    U = fit._weights
    cov = (U * w[:, None]).T @ U
    if kind is CovKind.HC1:
        cov = cov * (X.n / (X.n - X.p))
    return CovarianceEstimate(cov, kind, X.labels)


def se_ratio(
    fit: RegressionFit,
    X: DesignMatrix | None = None,
    j: int | str = 1,
    kind: CovKind | str = CovKind.HC3,
) -> float:
    """Ratio of sandwich (HC3 by default) to classical SE for coefficient ``j``.

    Returns 1.0 when both variances are exactly zero (an exact fit).
    """
    X = _check_pair(fit, X)
    if isinstance(j, str):
        j = X.index(j)
    if not 0 <= j < X.p:
        raise IndexError(f"column index {j} out of range for p={X.p}")
    num = sandwich_cov(fit, X, kind).se(j)
    den = classical_cov(fit, X).se(j)
    if den == 0.0:
        if num == 0.0:
            return 1.0
        raise ZeroClassicalVariance(f"classical variance of {X.labels[j]!r} is zero")
    return num / den
