"""Conditional demographic parity fits and three-outcome TOST verdicts."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataio import AuditDataset, Spec, response_for_spec
from .errors import InsufficientObservations, InvalidRange
from .normal import norm_ppf
from .regression import CovKind, DesignMatrix, RegressionFit, fit_ols, sandwich_cov


class Verdict(str, enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    INSUFFICIENT = "InsufficientInformation"


@dataclass(frozen=True)
class ToleranceBands:
    """Pre-registered margins.

    ``delta`` is the level-gap margin in currency, ``tau`` the ratio margin
    (log band ``(log tau, -log tau)``); ``tau=None`` disables the ratio
    condition.
    """

    delta: float
    tau: float | None = 0.80
    alpha: float = 0.05
    mean_premium: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidRange(f"delta must be positive, got {self.delta}")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise InvalidRange(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.alpha < 0.5:
            raise InvalidRange(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not self.mean_premium > 0:
            raise InvalidRange(f"mean_premium must be positive, got {self.mean_premium}")

    @property
    def log_band(self) -> tuple[float, float] | None:
        if self.tau is None:
            return None
        half = -math.log(self.tau)
        return (-half, half)

    @property
    def dollar_band(self) -> tuple[float, float]:
        return (-self.delta, self.delta)

    @classmethod
    def from_percent(cls, delta_pct: float, tau: float | None, alpha: float, mean_premium: float):
        return cls(delta_pct * mean_premium, tau, alpha, mean_premium)


@dataclass(frozen=True)
class CdpResult:
    beta_a: float
    se: float
    ci_low: float
    ci_high: float
    ratio: float | None
    dollar_gap: float
    dollar_ci: tuple[float, float]
    verdict: Verdict
    mu0: float
    control_coefficients: Mapping[str, float] = field(default_factory=dict)
    spec: Spec = Spec.LOG
    n: int = 0
    r_squared: float = float("nan")

    @property
    def gamma(self) -> float | None:
        vals = list(self.control_coefficients.values())
        return vals[0] if vals else None

    @property
    def psi(self) -> float | None:
        vals = list(self.control_coefficients.values())
        return vals[1] if len(vals) > 1 else None


def implied_dollar_gap(beta_a: float, mean_premium: float) -> float:
    """Currency gap ``P_bar * (exp(beta_a) - 1)`` implied by a log-scale gap."""
    if not mean_premium > 0:
        raise InvalidRange("mean_premium must be positive")
    return mean_premium * math.expm1(beta_a)


def fit_cdp(
    data: AuditDataset,
    group: str | None = None,
    spec: Spec | str = Spec.LOG,
    controls: Sequence[str] | None = None,
) -> RegressionFit:
    """Regress the (possibly logged) response on the protected flag and controls.

    The design is ``intercept, protected, *controls``.  When ``group`` is
    given only that group's rows are used.
    """
    controls = tuple(data.controls if controls is None else controls)
    if group is not None:
        idx = data.group_index().get(str(group), np.array([], dtype=int))
        data = data.take(idx)
    p = 2 + len(controls)
    if data.n < p + 2:
        raise InsufficientObservations(f"{data.n} observations for a {p}-parameter CDP model")
    F = response_for_spec(data, spec)
    cols = [(data.protected, data.column(data.protected))] + [(c, data.column(c)) for c in controls]
    return fit_ols(DesignMatrix.from_columns(cols), F)


def _inside(ci, band) -> bool:
    return band[0] < ci[0] and ci[1] < band[1]


def _disjoint(ci, band) -> bool:
    return ci[1] <= band[0] or ci[0] >= band[1]


def classify(pairs) -> Verdict:
    """Joint three-outcome rule over ``(interval, band)`` pairs.

    Pass when every interval lies inside its open band, Fail when any interval
    misses its band entirely, InsufficientInformation otherwise.
    """
    pairs = list(pairs)
    if all(_inside(ci, band) for ci, band in pairs):
        return Verdict.PASS
    if any(_disjoint(ci, band) for ci, band in pairs):
        return Verdict.FAIL
    return Verdict.INSUFFICIENT


def tost_interval(beta: float, se: float, alpha: float) -> tuple[float, float]:
    z = norm_ppf(1.0 - alpha)
    return beta - z * se, beta + z * se


def verdict_from_interval(
    ci: tuple[float, float], bands: ToleranceBands, spec: Spec | str = Spec.LOG
) -> tuple[Verdict, tuple[float, float]]:
    """Verdict and currency-scale interval for a ``beta_A`` interval."""
    spec = Spec(spec)
    Pbar = bands.mean_premium
    pairs = []
    if spec is Spec.LOG:
        dollar_ci = (implied_dollar_gap(ci[0], Pbar), implied_dollar_gap(ci[1], Pbar))
        if bands.log_band is not None:
            pairs.append((ci, bands.log_band))
    else:
        dollar_ci = ci
        if bands.log_band is not None:
            # relative gap against the mean premium, compared on the log scale
            lo = 1.0 + ci[0] / Pbar
            hi = 1.0 + ci[1] / Pbar
            log_ci = (math.log(lo) if lo > 0 else -math.inf, math.log(hi) if hi > 0 else -math.inf)
            pairs.append((log_ci, bands.log_band))
    pairs.append((dollar_ci, bands.dollar_band))
    return classify(pairs), dollar_ci


def tost_verdict(
    fit: RegressionFit,
    bands: ToleranceBands,
    spec: Spec | str = Spec.LOG,
    protected: str | int = 1,
) -> CdpResult:
    """Render the Pass / Fail / InsufficientInformation verdict for a CDP fit.

    Uses the HC3 standard error and the ``(1 - 2 alpha)`` two-sided interval.
    For the log specification the currency interval is the monotone image
    ``P_bar * (exp(ci) - 1)`` of the log interval.
    """
    spec = Spec(spec)
    j = fit.design.index(protected) if isinstance(protected, str) else protected
    beta = float(fit.beta_hat[j])
    se = sandwich_cov(fit, kind=CovKind.HC3).se(j)
    ci = tost_interval(beta, se, bands.alpha)
    verdict, dollar_ci = verdict_from_interval(ci, bands, spec)
    if spec is Spec.LOG:
        ratio = math.exp(beta)
        gap = implied_dollar_gap(beta, bands.mean_premium)
    else:
        ratio = None
        gap = beta
    controls = {
        lab: float(fit.beta_hat[i])
        for i, lab in enumerate(fit.labels)
        if i != j and lab != "intercept"
    }
    mu0 = float(fit.beta_hat[fit.design.index("intercept")]) if "intercept" in fit.labels else 0.0
    return CdpResult(
        beta_a=beta,
        se=se,
        ci_low=ci[0],
        ci_high=ci[1],
        ratio=ratio,
        dollar_gap=gap,
        dollar_ci=dollar_ci,
        verdict=verdict,
        mu0=mu0,
        control_coefficients=controls,
        spec=spec,
        n=fit.n,
        r_squared=fit.r_squared,
    )
