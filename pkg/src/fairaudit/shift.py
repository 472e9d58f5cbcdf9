"""Coefficient-shift test for proxy discrimination.

A candidate proxy ``W`` is fitted in a restricted model (without the
protected attribute ``A``) and an extended model (with it).  Both fits share
the same deterministic response, so

    phi_hat - phi_hat' = (a - a_ext)' F

and the two estimates are correlated.  Writing ``u_i = a_i r_i`` and
``v_i = a_ext_i r_ext_i`` for the score contributions of the proxy
coefficient in each model, the variance of the shift is estimated by

    sum(u**2) + sum(v**2) - 2 * sum(u * v),

i.e. restricted sandwich variance, extended sandwich variance, and the
cross-covariance term the independent-samples formula leaves out.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NegativeVarianceBeyondTolerance
from .normal import norm_ppf, norm_sf
from .regression import DesignMatrix, RegressionFit, fit_ols

NEG_VAR_TOL = 1e-10


@dataclass(frozen=True)
class ShiftComponents:
    """The three terms of the shift variance for one proxy coefficient."""

    restricted: float
    extended: float
    cross: float

    @property
    def leading(self) -> float:
        return max(self.restricted, self.extended)

    def full(self) -> float:
        v = self.restricted + self.extended - 2.0 * self.cross
        if v < 0.0:
            if v < -NEG_VAR_TOL * self.leading:
                raise NegativeVarianceBeyondTolerance(
                    f"assembled shift variance {v:.3e} (leading term {self.leading:.3e})"
                )
            return 0.0
        return v

    def independent(self) -> float:
        return self.restricted + self.extended


def _check_nested(X: DesignMatrix, X_ext: DesignMatrix, j: int, k: int):
    if X.n != X_ext.n:
        raise ValueError("restricted and extended designs have different row counts")
    if not (0 <= j < X.p and 0 <= k < X_ext.p):
        raise IndexError("proxy column index out of range")
    if X.labels[j] != X_ext.labels[k]:
        raise ValueError(
            f"j and k select different variables ({X.labels[j]!r} vs {X_ext.labels[k]!r})"
        )
    for label in X.labels:
        if label not in X_ext.labels:
            raise ValueError(f"restricted column {label!r} missing from extended design")
        if not np.array_equal(X.column(label), X_ext.column(label)):
            raise ValueError(f"column {label!r} differs between the two designs")


def shift_components(
    X: DesignMatrix,
    X_ext: DesignMatrix,
    F,
    j: int,
    k: int,
    fits: tuple[RegressionFit, RegressionFit] | None = None,
) -> ShiftComponents:
    _check_nested(X, X_ext, j, k)
    if fits is None:
        fits = fit_ols(X, F), fit_ols(X_ext, F)
    fit_r, fit_e = fits
    u = fit_r.weight_vector(j) * fit_r.residuals
    v = fit_e.weight_vector(k) * fit_e.residuals
    return ShiftComponents(float(u @ u), float(v @ v), float(u @ v))


def shift_variance_full(X: DesignMatrix, X_ext: DesignMatrix, F, j: int, k: int) -> float:
    """Variance of ``phi_hat - phi_hat'`` including the cross-covariance term.

    Negative assembled values no larger than ``1e-10`` times the leading term
    are returned as 0; anything more negative raises
    :class:`NegativeVarianceBeyondTolerance`.
    """
    return shift_components(X, X_ext, F, j, k).full()


def shift_variance_independent(X: DesignMatrix, X_ext: DesignMatrix, F, j: int, k: int) -> float:
    """Sum of the two sandwich variances, treating the fits as independent."""
    return shift_components(X, X_ext, F, j, k).independent()


@dataclass(frozen=True)
class ShiftTestResult:
    proxy: str
    phi: float
    phi_prime: float
    kappa: float
    delta_pd: float
    relative_shift: float
    se_independent: float
    se_full: float
    z_independent: float
    z_full: float
    significant: bool
    flagged: bool
    alpha: float
    rho_min: float
    critical_value: float
    n: int
    diagnostics: tuple[str, ...] = field(default_factory=tuple)

    @property
    def p_value(self) -> float:
        """Upper-tail normal probability of ``|z_full|``."""
        return norm_sf(abs(self.z_full)) if np.isfinite(self.z_full) else 0.0

    def with_critical_value(self, critical_value: float) -> "ShiftTestResult":
        significant = bool(abs(self.z_full) > critical_value)
        flagged = significant and np.isfinite(self.relative_shift) and self.relative_shift > self.rho_min
        return replace(
            self, critical_value=critical_value, significant=significant, flagged=bool(flagged)
        )


def _z(delta: float, se: float) -> float:
    if se > 0.0:
        return delta / se
    if delta == 0.0:
        return 0.0
    return float(np.copysign(np.inf, delta))


def pd_test(
    data,
    proxy: str,
    controls=(),
    alpha: float = 0.05,
    rho_min: float = 0.10,
    critical_value: float | None = None,
    spec: str = "Level",
) -> ShiftTestResult:
    """Run the two-part proxy-discrimination test for one candidate.

    Restricted design: intercept, ``proxy``, ``controls``.  Extended design
    adds the protected column after the proxy.  The candidate is flagged when
    ``|z_full|`` exceeds ``critical_value`` and the relative shift
    ``|(phi - phi') / phi|`` exceeds ``rho_min``.

    ``critical_value`` defaults to the standard normal ``1 - alpha`` quantile
    (1.645 at ``alpha = 0.05``).
    """
    from .dataio import response_for_spec

    if proxy == data.protected or data.protected in tuple(controls):
        raise ValueError("proxy and controls must exclude the protected column")
    if critical_value is None:
        critical_value = norm_ppf(1.0 - alpha)
    F = response_for_spec(data, spec)
    cols = [(proxy, data.column(proxy))] + [(c, data.column(c)) for c in controls]
    X = DesignMatrix.from_columns(cols)
    X_ext = DesignMatrix.from_columns(cols[:1] + [(data.protected, data.column(data.protected))] + cols[1:])
    fit_r, fit_e = fit_ols(X, F), fit_ols(X_ext, F)
    comps = shift_components(X, X_ext, F, 1, 1, fits=(fit_r, fit_e))
    phi, phi_prime = float(fit_r.beta_hat[1]), float(fit_e.beta_hat[1])
    delta = phi - phi_prime
    se_full = float(np.sqrt(comps.full()))
    se_ind = float(np.sqrt(comps.independent()))
    diagnostics = []
    if phi == 0.0:
        rel = float("nan")
        diagnostics.append("ZeroRestrictedCoefficient: relative shift undefined, not flagged")
    else:
        rel = abs(delta / phi)
    z_full = _z(delta, se_full)
    result = ShiftTestResult(
        proxy=proxy,
        phi=phi,
        phi_prime=phi_prime,
        kappa=float(fit_e.beta_hat[2]),
        delta_pd=delta,
        relative_shift=rel,
        se_independent=se_ind,
        se_full=se_full,
        z_independent=_z(delta, se_ind),
        z_full=z_full,
        significant=False,
        flagged=False,
        alpha=alpha,
        rho_min=rho_min,
        critical_value=critical_value,
        n=X.n,
        diagnostics=tuple(diagnostics),
    )
    return result.with_critical_value(critical_value)


def holm_adjust(results: list[ShiftTestResult], alpha: float, critical_value: float | None = None):
    """Holm step-down across the proxy candidates of one group.

    The single-test level is ``1 - Phi(critical_value)``, so one candidate
    reproduces the plain ``|z| > critical_value`` rule.  Returns results in
    the input order with ``critical_value`` and ``flagged`` updated.
    """
    m = len(results)
    if m == 0:
        return []
    if critical_value is None:
        critical_value = norm_ppf(1.0 - alpha)
    level = norm_sf(critical_value)
    order = sorted(range(m), key=lambda i: (-abs(results[i].z_full), i))
    out = list(results)
    rejecting = True
    for rank, i in enumerate(order):
        c = critical_value if m - rank == 1 else norm_ppf(1.0 - level / (m - rank))
        adj = out[i].with_critical_value(c)
        if not rejecting or not adj.significant:
            rejecting = False
            adj = replace(adj, significant=False, flagged=False)
        out[i] = adj
    return out
